"""
Experiment Module

This module provides:
- sweep_alpha: PLDA adaptation over a grid of alpha values
- ExperimentRunner: builds the synthetic protocol, trains the models once
  and routes every (method, enrollment mode) cell to its scoring recipe
- run_full_experiment: runs every requested cell and writes the artifacts
- summarize: methods x modes table of EER (%) and minDCF

METHODS:
========
baseline  backend scores, no compensation
sn        baseline + adaptive s-norm, cohort from low-quality training data
pa        PLDA adapted towards the unlabeled low-quality training data,
          best alpha of the grid
svr       test side (and the enrollment side in degraded mode) passed
          through the reconstruction network
svr_sn    svr + s-norm, cohort from high-quality training data

MODES:
======
original  clean enrollment, degraded test
degraded  degraded enrollment, degraded test
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple
import logging
import os

import numpy as np

from .config import MODES, ExperimentConfig
from .embeddings import EmbeddingSet, ScoreSet, Trial, merge_sets
from .errors import MissingCell
from .file_io import PathOrStream, float_token, format_float, save_scores, write_lines, write_text
from .metrics import MetricsReport, evaluate, report_text
from .network import MlpParameters, save_model
from .plda import PldaModel, plda_adapt, plda_train_em, save_objective_curve, save_plda
from .scoring import CosineBackend, Cohort, PldaBackend, ScoringBackend, ScoringOptions, score_trials
from .simulate import Protocol, degrade, generate_world, make_protocol
from .training import save_loss_curve, train

_logger = logging.getLogger(__name__)

Cell = Tuple[str, str]


# ---------------------------------------------------------------------------
# Alpha sweep
# ---------------------------------------------------------------------------

def alpha_grid(steps: int = 10) -> List[float]:
    """steps + 1 evenly spaced values from 0.0 to 1.0, both endpoints exact."""
    if steps < 1:
        raise ValueError("steps must be positive.")
    return [i / steps for i in range(steps + 1)]


@dataclass(frozen=True)
class SweepRow:
    alpha: float
    report: MetricsReport

    @property
    def eer(self) -> float:
        return self.report.eer

    @property
    def min_dcf_avg(self) -> float:
        return self.report.min_dcf_avg


def sweep_alpha(
    model: PldaModel,
    adaptation: EmbeddingSet,
    embeddings: EmbeddingSet,
    trials: Sequence[Trial],
    alphas: Sequence[float],
    length_norm: bool = False,
) -> List[SweepRow]:
    """Evaluate the adapted PLDA model at every alpha."""
    rows = []
    for alpha in alphas:
        adapted = plda_adapt(model, adaptation, alpha)
        scores = score_trials(PldaBackend(adapted, length_norm), embeddings, trials)
        rows.append(SweepRow(alpha, evaluate(scores)))
        _logger.info(f"alpha={alpha:g}: EER {rows[-1].eer:.4f}, minDCF {rows[-1].min_dcf_avg:.4f}")
    return rows


def best_alpha(rows: Sequence[SweepRow]) -> SweepRow:
    """Lowest EER; ties go to the smallest alpha."""
    return min(rows, key=lambda row: (row.eer, row.alpha))


def save_sweep(rows: Sequence[SweepRow], sink: PathOrStream) -> None:
    lines = ["alpha,eer,min_dcf_avg\n"]
    lines.extend(f"{float_token(r.alpha)},{format_float(r.eer)},{format_float(r.min_dcf_avg)}\n" for r in rows)
    write_lines(lines, sink)


# ---------------------------------------------------------------------------
# Summary table
# ---------------------------------------------------------------------------

def format_eer(value: float) -> str:
    return f"{value * 100:.1f}"


def format_min_dcf(value: float) -> str:
    return f"{value:.2f}"


def summarize(
    reports: Mapping[Cell, MetricsReport],
    methods: Sequence[str],
    modes: Sequence[str],
) -> str:
    """
    Tab-separated table: one row per method, an (EER %, minDCF) column
    pair per enrollment mode.

    Raises:
        MissingCell: If a requested (method, mode) cell has no report
    """
    header = ["method"]
    for mode in modes:
        header.extend([f"{mode}_eer_pct", f"{mode}_min_dcf"])
    lines = ["\t".join(header)]
    for method in methods:
        row = [method]
        for mode in modes:
            report = reports.get((method, mode))
            if report is None:
                raise MissingCell(f"No report for method '{method}' in mode '{mode}'.")
            row.extend([format_eer(report.eer), format_min_dcf(report.min_dcf_avg)])
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Full experiment
# ---------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    reports: Dict[Cell, MetricsReport] = field(default_factory=dict)
    scores: Dict[Cell, ScoreSet] = field(default_factory=dict)
    reference: Optional[MetricsReport] = None
    pa_alpha: Dict[str, float] = field(default_factory=dict)
    pa_sweeps: Dict[str, List[SweepRow]] = field(default_factory=dict)
    summary: str = ""


class ExperimentRunner:
    """
    Holds the protocol and the trained models of one experiment and routes
    each (method, mode) cell to its scoring recipe.

    Models are trained on first use only: PLDA on the clean training split,
    the reconstruction network on the paired training split. Evaluation
    speakers never reach either.
    """

    def __init__(self, cfg: ExperimentConfig, protocol: Optional[Protocol] = None):
        self.cfg = cfg
        self.protocol = protocol or build_protocol(cfg)
        self._plda: Optional[PldaModel] = None
        self._plda_objective: Optional[np.ndarray] = None
        self._svr: Optional[MlpParameters] = None
        self._svr_losses: Optional[np.ndarray] = None
        self._cohort_ids: Optional[List[str]] = None
        self.pa_alpha: Dict[str, float] = {}
        self.pa_sweeps: Dict[str, List[SweepRow]] = {}
        self.recipes: Dict[str, Callable[[str], ScoreSet]] = {
            "baseline": self._baseline,
            "sn": self._snorm,
            "pa": self._plda_adaptation,
            "svr": self._reconstruction,
            "svr_sn": self._reconstruction_snorm,
        }

    # -- models ------------------------------------------------------------

    @property
    def plda(self) -> PldaModel:
        if self._plda is None:
            _logger.info("Training PLDA on the clean training split")
            self._plda, self._plda_objective = plda_train_em(
                self.protocol.train.high, self.cfg.plda_iters, self.cfg.length_norm
            )
        return self._plda

    @property
    def svr(self) -> MlpParameters:
        if self._svr is None:
            _logger.info("Training the reconstruction network")
            result = train(self.protocol.train, self.cfg.train)
            self._svr, self._svr_losses = result.params, result.losses
        return self._svr

    @property
    def backend(self) -> ScoringBackend:
        if self.cfg.backend == "plda":
            return PldaBackend(self.plda, self.cfg.length_norm)
        return CosineBackend()

    def _cohort(self, quality: str) -> Cohort:
        train = self.protocol.train
        if self._cohort_ids is None:
            ids = list(train.low.utterance_ids)
            rng = np.random.default_rng(self.cfg.split.seed)
            size = min(self.cfg.cohort_size, len(ids))
            picked = rng.choice(len(ids), size=size, replace=False)
            self._cohort_ids = [ids[i] for i in np.sort(picked)]
        source = train.high if quality == "high" else train.low
        return Cohort(source.subset(self._cohort_ids), self.cfg.top_k)

    # -- data --------------------------------------------------------------

    def embeddings(self, mode: str) -> EmbeddingSet:
        """Enrollment (clean in original mode) plus degraded test embeddings."""
        enroll = self.protocol.enroll_high if mode == "original" else self.protocol.enroll_low
        return merge_sets([enroll, self.protocol.test_low])

    # -- recipes -----------------------------------------------------------

    def _baseline(self, mode: str) -> ScoreSet:
        return score_trials(self.backend, self.embeddings(mode), self.protocol.trials)

    def _snorm(self, mode: str) -> ScoreSet:
        options = ScoringOptions(cohort=self._cohort("low"))
        return score_trials(self.backend, self.embeddings(mode), self.protocol.trials, options)

    def _plda_adaptation(self, mode: str) -> ScoreSet:
        adaptation = self.protocol.train.low.without_speakers()
        embeddings = self.embeddings(mode)
        rows = sweep_alpha(
            self.plda, adaptation, embeddings, self.protocol.trials,
            alpha_grid(self.cfg.alpha_steps), self.cfg.length_norm,
        )
        best = best_alpha(rows)
        self.pa_sweeps[mode] = rows
        self.pa_alpha[mode] = best.alpha
        _logger.info(f"PLDA adaptation ({mode}): best alpha {best.alpha:g}, EER {best.eer:.4f}")
        backend = PldaBackend(plda_adapt(self.plda, adaptation, best.alpha), self.cfg.length_norm)
        return score_trials(backend, embeddings, self.protocol.trials)

    def _svr_options(self, mode: str, cohort: Optional[Cohort] = None) -> ScoringOptions:
        return ScoringOptions(
            reconstruct_enroll=(mode == "degraded"),
            reconstruct_test=True,
            svr=self.svr,
            cohort=cohort,
        )

    def _reconstruction(self, mode: str) -> ScoreSet:
        return score_trials(self.backend, self.embeddings(mode), self.protocol.trials, self._svr_options(mode))

    def _reconstruction_snorm(self, mode: str) -> ScoreSet:
        options = self._svr_options(mode, self._cohort("high"))
        return score_trials(self.backend, self.embeddings(mode), self.protocol.trials, options)

    # -- cells -------------------------------------------------------------

    def score_cell(self, method: str, mode: str) -> ScoreSet:
        if mode not in MODES:
            raise ValueError(f"Unknown mode '{mode}'.")
        _logger.info(f"Scoring cell method={method} mode={mode}")
        return self.recipes[method](mode)

    def reference(self) -> MetricsReport:
        """Clean enrollment against clean test with the baseline backend."""
        clean = merge_sets([self.protocol.enroll_high, self.protocol.test_high])
        return evaluate(score_trials(self.backend, clean, self.protocol.trials))

    def save_models(self, out_dir: str) -> None:
        if self._svr is not None:
            save_model(self._svr, os.path.join(out_dir, "svr_model.txt"))
            save_loss_curve(self._svr_losses, os.path.join(out_dir, "svr_loss.csv"))
        if self._plda is not None:
            save_plda(self._plda, os.path.join(out_dir, "plda_model.txt"))
            save_objective_curve(self._plda_objective, os.path.join(out_dir, "plda_objective.csv"))


def build_protocol(cfg: ExperimentConfig) -> Protocol:
    """Clean world, its degraded copy and the evaluation protocol."""
    clean = generate_world(cfg.world)
    degraded = degrade(clean, cfg.channel)
    return make_protocol(clean, degraded, cfg.split)


def run_full_experiment(cfg: ExperimentConfig, write: bool = True) -> ExperimentResult:
    """
    Run every (method, mode) cell of the configuration.

    With write=True the output directory receives, per cell,
    scores_<method>_<mode>.txt and report_<method>_<mode>.txt, plus
    reference_report.txt, pa_sweep_<mode>.csv (when pa ran), the trained
    models and summary.txt.
    """
    runner = ExperimentRunner(cfg)
    result = ExperimentResult()
    for mode in cfg.modes:
        for method in cfg.methods:
            scores = runner.score_cell(method, mode)
            result.scores[(method, mode)] = scores
            result.reports[(method, mode)] = evaluate(scores)
    result.reference = runner.reference()
    result.pa_alpha = dict(runner.pa_alpha)
    result.pa_sweeps = dict(runner.pa_sweeps)
    result.summary = summarize(result.reports, cfg.methods, cfg.modes) + _footer(result, cfg.modes)

    if write:
        out = cfg.out_dir
        os.makedirs(out, exist_ok=True)
        for (method, mode), scores in result.scores.items():
            save_scores(scores, os.path.join(out, f"scores_{method}_{mode}.txt"))
            write_text(os.path.join(out, f"report_{method}_{mode}.txt"), report_text(result.reports[(method, mode)]))
        write_text(os.path.join(out, "reference_report.txt"), report_text(result.reference))
        for mode, rows in result.pa_sweeps.items():
            save_sweep(rows, os.path.join(out, f"pa_sweep_{mode}.csv"))
        runner.save_models(out)
        write_text(os.path.join(out, "summary.txt"), result.summary)
        _logger.info(f"Wrote experiment artifacts to {out}")
    return result


def _footer(result: ExperimentResult, modes: Sequence[str]) -> str:
    lines = [
        f"# reference (clean enrollment, clean test): eer_pct={format_eer(result.reference.eer)} "
        f"min_dcf={format_min_dcf(result.reference.min_dcf_avg)}"
    ]
    for mode in modes:
        if mode in result.pa_alpha:
            lines.append(f"# pa best alpha ({mode}): {float_token(result.pa_alpha[mode])}")
    return "\n".join(lines) + "\n"
