"""
Command-line interface.

Usage:
  svrbench simulate --out-dir data --scenario telephone
  svrbench train --kind svr --low data/train_degraded.evec --high data/train_clean.evec --out-dir models
  svrbench train --kind plda --embeddings data/train_clean.evec --out-dir models
  svrbench reconstruct --model models/svr_model.txt --embeddings data/test_degraded.evec --out test_rec.evec
  svrbench score --embeddings data/enroll_clean.evec --embeddings data/test_degraded.evec \
      --trials data/trials.txt --out scores.txt
  svrbench evaluate --scores scores.txt --out report.txt
  svrbench sweep-alpha --plda models/plda_model.txt --adaptation data/train_degraded.evec \
      --embeddings data/enroll_clean.evec --embeddings data/test_degraded.evec --trials data/trials.txt
  svrbench full-exp --out-dir results --seed 7

Exit codes: 0 success, 1 usage or configuration error, 2 data or file
format error, 3 numerical failure.
"""

from typing import List, Optional, Sequence
import argparse
import logging
import os
import sys

from .config import (
    Settings,
    add_setting_arguments,
    channel_config,
    experiment_config,
    resolve_settings,
    split_config,
    train_config,
    world_config,
    SETTINGS,
)
from .embeddings import EmbeddingSet, merge_sets
from .errors import ConfigError, MissingLabels, SvrBenchError
from .experiment import alpha_grid, run_full_experiment, save_sweep, sweep_alpha
from .file_io import load_embeddings, load_scores, load_trials, save_embeddings, save_scores, save_trials
from .metrics import evaluate, save_det_points, save_report
from .network import load_model, save_model
from .plda import load_plda, plda_train_em, save_objective_curve, save_plda
from .scoring import Cohort, CosineBackend, PldaBackend, ScoringOptions, score_trials
from .simulate import degrade, generate_world, make_protocol
from .training import PairedData, reconstruct, save_loss_curve, train

_logger = logging.getLogger(__name__)

PROG = "svrbench"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _load_merged(paths: Sequence[str]) -> EmbeddingSet:
    return merge_sets([load_embeddings(p) for p in paths])


def cmd_simulate(args, settings: Settings) -> None:
    clean = generate_world(world_config(settings))
    degraded = degrade(clean, channel_config(settings))
    protocol = make_protocol(clean, degraded, split_config(settings))
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    outputs = {
        "train_clean.evec": protocol.train.high,
        "train_degraded.evec": protocol.train.low,
        "enroll_clean.evec": protocol.enroll_high,
        "enroll_degraded.evec": protocol.enroll_low,
        "test_clean.evec": protocol.test_high,
        "test_degraded.evec": protocol.test_low,
    }
    for name, embeddings in outputs.items():
        save_embeddings(embeddings, os.path.join(out, name))
    save_trials(protocol.trials, os.path.join(out, "trials.txt"))
    _logger.info(f"Simulated data written to {out}")


def cmd_train(args, settings: Settings) -> None:
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    if args.kind == "plda":
        if not args.embeddings:
            raise ConfigError("train --kind plda needs --embeddings (a labeled EVEC file).")
        model, objective = plda_train_em(
            _load_merged(args.embeddings), settings["plda_iters"], settings["length_norm"]
        )
        save_plda(model, os.path.join(out, "plda_model.txt"))
        save_objective_curve(objective, os.path.join(out, "plda_objective.csv"))
        return
    if not args.low or not args.high:
        raise ConfigError("train --kind svr needs --low and --high EVEC files.")
    data = PairedData(load_embeddings(args.low), load_embeddings(args.high))
    result = train(data, train_config(settings))
    save_model(result.params, os.path.join(out, "svr_model.txt"))
    save_loss_curve(result.losses, os.path.join(out, "svr_loss.csv"))


def cmd_reconstruct(args, settings: Settings) -> None:
    params = load_model(args.model)
    save_embeddings(reconstruct(params, _load_merged(args.embeddings)), args.out)


def cmd_score(args, settings: Settings) -> None:
    embeddings = _load_merged(args.embeddings)
    trials = load_trials(args.trials)
    if settings["backend"] == "plda":
        if not args.plda:
            raise ConfigError("--backend plda needs --plda <model file>.")
        backend = PldaBackend(load_plda(args.plda), settings["length_norm"])
    else:
        backend = CosineBackend()
    if (args.reconstruct_enroll or args.reconstruct_test) and not args.model:
        raise ConfigError("--reconstruct-enroll/--reconstruct-test need --model <SVR model file>.")
    if settings["top_k"] < 0:
        raise ConfigError(f"top_k must be non-negative, got {settings['top_k']}.")
    options = ScoringOptions(
        reconstruct_enroll=args.reconstruct_enroll,
        reconstruct_test=args.reconstruct_test,
        svr=load_model(args.model) if args.model else None,
        cohort=Cohort(_load_merged(args.cohort), settings["top_k"]) if args.cohort else None,
    )
    save_scores(score_trials(backend, embeddings, trials, options), args.out)


def cmd_evaluate(args, settings: Settings) -> None:
    scores = load_scores(args.scores)
    if args.trials:
        scores = scores.with_labels(load_trials(args.trials))
    try:
        report = evaluate(scores, args.betas)
    except MissingLabels as e:
        source = args.trials or args.scores
        raise MissingLabels(f"{source}: {e} Provide labels in the scores file or via --trials.") from None
    save_report(report, args.out)
    if args.det_out:
        save_det_points(report.det_points, args.det_out)


def cmd_sweep_alpha(args, settings: Settings) -> None:
    rows = sweep_alpha(
        load_plda(args.plda),
        _load_merged(args.adaptation).without_speakers(),
        _load_merged(args.embeddings),
        load_trials(args.trials),
        alpha_grid(settings["alpha_steps"]),
        settings["length_norm"],
    )
    save_sweep(rows, args.out)


def cmd_full_exp(args, settings: Settings) -> None:
    result = run_full_experiment(experiment_config(settings, args.out_dir))
    sys.stdout.write(result.summary)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _betas(text: str) -> List[float]:
    try:
        betas = [float(b) for b in text.split(",") if b]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid beta list '{text}'") from None
    if not betas or any(not b > 0 for b in betas):
        raise argparse.ArgumentTypeError(f"betas must be positive numbers, got '{text}'")
    return betas


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    add_setting_arguments(common, groups=("common",))

    parser = argparse.ArgumentParser(prog=PROG, description="Embedding-space reconstruction for speaker verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="generate synthetic clean/degraded embeddings and trials")
    p.add_argument("--out-dir", default="data", help="output directory")
    add_setting_arguments(p, groups=("world", "channel", "split"))
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="train an SVR network or a PLDA model")
    p.add_argument("--kind", choices=("svr", "plda"), default="svr")
    p.add_argument("--low", help="low-quality EVEC file (svr)")
    p.add_argument("--high", help="high-quality EVEC file (svr)")
    p.add_argument("--embeddings", action="append", help="labeled EVEC file (plda), repeatable")
    p.add_argument("--out-dir", default=".", help="output directory")
    add_setting_arguments(p, groups=("train", "plda"))
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("reconstruct", parents=[common], help="apply an SVR network to embeddings")
    p.add_argument("--model", required=True, help="SVR model file")
    p.add_argument("--embeddings", action="append", required=True, help="EVEC file, repeatable")
    p.add_argument("--out", required=True, help="output EVEC file")
    p.set_defaults(handler=cmd_reconstruct)

    p = sub.add_parser("score", parents=[common], help="score a trial list")
    p.add_argument("--embeddings", action="append", required=True, help="EVEC file, repeatable")
    p.add_argument("--trials", required=True, help="TRIALS file")
    p.add_argument("--plda", help="PLDA model file (plda backend)")
    p.add_argument("--model", help="SVR model file")
    p.add_argument("--reconstruct-enroll", action="store_true")
    p.add_argument("--reconstruct-test", action="store_true")
    p.add_argument("--cohort", action="append", help="cohort EVEC file for s-norm, repeatable")
    p.add_argument("--out", required=True, help="output SCORES file")
    add_setting_arguments(p, keys=("backend", "top_k", "length_norm"))
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("evaluate", parents=[common], help="compute EER and minDCF")
    p.add_argument("--scores", required=True, help="SCORES file")
    p.add_argument("--trials", help="TRIALS file with labels, when the scores have none")
    p.add_argument("--betas", type=_betas, default=[99.0, 199.0], help="comma-separated DCF betas")
    p.add_argument("--out", required=True, help="output report file")
    p.add_argument("--det-out", help="optional DET CSV")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("sweep-alpha", parents=[common], help="evaluate PLDA adaptation over an alpha grid")
    p.add_argument("--plda", required=True, help="PLDA model file")
    p.add_argument("--adaptation", action="append", required=True, help="unlabeled EVEC file, repeatable")
    p.add_argument("--embeddings", action="append", required=True, help="EVEC file, repeatable")
    p.add_argument("--trials", required=True, help="TRIALS file with labels")
    p.add_argument("--out", default="alpha_sweep.csv", help="output CSV")
    add_setting_arguments(p, keys=("alpha_steps", "length_norm"))
    p.set_defaults(handler=cmd_sweep_alpha)

    p = sub.add_parser("full-exp", parents=[common], help="run the method x enrollment-mode matrix")
    p.add_argument("--out-dir", default="results", help="output directory")
    add_setting_arguments(p, groups=("world", "channel", "split", "train", "plda", "experiment"))
    p.set_defaults(handler=cmd_full_exp)
    return parser


def _flags(args: argparse.Namespace) -> dict:
    return {key: value for key, value in vars(args).items() if key in SETTINGS}


def run_command(argv: Optional[Sequence[str]] = None) -> int:
    """Run one subcommand and return its exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1

    try:
        settings = resolve_settings(_flags(args), args.config)
        logging.basicConfig(level=getattr(logging, settings["log_level"]))
        args.handler(args, settings)
    except SvrBenchError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"{PROG}: error: {e}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
