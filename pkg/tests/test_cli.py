import os

import pytest

from svrbench.cli import run_command
from svrbench.embeddings import merge_sets
from svrbench.file_io import format_float, load_embeddings, load_scores, load_trials
from svrbench.metrics import evaluate
from svrbench.plda import load_plda
from svrbench.scoring import PldaBackend, score_trials

WORLD = [
    "--seed", "3", "--dim", "8", "--n-speakers", "40", "--utts-per-speaker", "6",
    "--n-target", "40", "--n-nontarget", "150",
]


@pytest.fixture
def data_dir(tmp_path):
    out = tmp_path / "data"
    assert run_command(["simulate", "--out-dir", str(out)] + WORLD) == 0
    return out


def test_simulate_writes_every_file(data_dir):
    names = set(os.listdir(data_dir))
    for split in ("train", "enroll", "test"):
        assert f"{split}_clean.evec" in names
        assert f"{split}_degraded.evec" in names
    assert "trials.txt" in names
    trials = load_trials(data_dir / "trials.txt")
    assert len(trials) == 190
    assert len(load_embeddings(data_dir / "train_clean.evec")) == 30 * 6


def test_simulate_is_reproducible(tmp_path):
    for name in ("a", "b"):
        assert run_command(["simulate", "--out-dir", str(tmp_path / name)] + WORLD) == 0
    for name in os.listdir(tmp_path / "a"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_score_and_evaluate(data_dir, tmp_path):
    scores = tmp_path / "scores.txt"
    report = tmp_path / "report.txt"
    det = tmp_path / "det.csv"
    assert run_command([
        "score", "--embeddings", str(data_dir / "enroll_clean.evec"),
        "--embeddings", str(data_dir / "test_degraded.evec"),
        "--trials", str(data_dir / "trials.txt"), "--out", str(scores),
    ]) == 0
    assert run_command(["evaluate", "--scores", str(scores), "--out", str(report), "--det-out", str(det)]) == 0
    text = report.read_text()
    assert "n_target=40\n" in text
    assert "n_nontarget=150\n" in text
    assert det.read_text().startswith("threshold,p_fn,p_fp\n")


def test_evaluate_without_labels_names_the_file(tmp_path, capsys):
    scores = tmp_path / "unlabeled_scores.txt"
    scores.write_text("e1 t1 0.5\ne1 t2 0.1\n")
    code = run_command(["evaluate", "--scores", str(scores), "--out", str(tmp_path / "report.txt")])
    assert code == 2
    assert "unlabeled_scores.txt" in capsys.readouterr().err
    assert not (tmp_path / "report.txt").exists()


def test_evaluate_with_separate_trials(tmp_path):
    scores = tmp_path / "scores.txt"
    scores.write_text("e1 t1 0.5\ne1 t2 0.1\n")
    trials = tmp_path / "trials.txt"
    trials.write_text("e1 t1 target\ne1 t2 nontarget\n")
    report = tmp_path / "report.txt"
    assert run_command(["evaluate", "--scores", str(scores), "--trials", str(trials), "--out", str(report)]) == 0
    assert report.read_text().startswith("eer=0\n")


def test_error_exit_codes(tmp_path, capsys):
    assert run_command(["evaluate", "--scores", str(tmp_path / "absent.txt"), "--out", str(tmp_path / "r")]) == 2
    assert run_command(["no-such-command"]) == 1
    config = tmp_path / "bad.env"
    config.write_text("colour=blue\n")
    assert run_command(["simulate", "--out-dir", str(tmp_path / "x"), "--config", str(config)]) == 1
    err = capsys.readouterr().err
    assert "svrbench: error:" in err
    assert "colour" in err


def test_plda_backend_needs_a_model(data_dir, tmp_path):
    code = run_command([
        "score", "--embeddings", str(data_dir / "enroll_clean.evec"),
        "--embeddings", str(data_dir / "test_degraded.evec"),
        "--trials", str(data_dir / "trials.txt"), "--out", str(tmp_path / "s.txt"), "--backend", "plda",
    ])
    assert code == 1


def test_train_reconstruct_and_score_with_snorm(data_dir, tmp_path):
    models = tmp_path / "models"
    assert run_command([
        "train", "--kind", "svr", "--low", str(data_dir / "train_degraded.evec"),
        "--high", str(data_dir / "train_clean.evec"), "--out-dir", str(models),
        "--hidden-dims", "16", "--steps", "20", "--log-every", "0",
    ]) == 0
    assert (models / "svr_loss.csv").read_text().count("\n") == 21

    rebuilt = tmp_path / "test_rec.evec"
    assert run_command([
        "reconstruct", "--model", str(models / "svr_model.txt"),
        "--embeddings", str(data_dir / "test_degraded.evec"), "--out", str(rebuilt),
    ]) == 0
    original = load_embeddings(data_dir / "test_degraded.evec")
    assert load_embeddings(rebuilt).utterance_ids == original.utterance_ids

    scores = tmp_path / "scores.txt"
    assert run_command([
        "score", "--embeddings", str(data_dir / "enroll_clean.evec"),
        "--embeddings", str(data_dir / "test_degraded.evec"),
        "--trials", str(data_dir / "trials.txt"), "--model", str(models / "svr_model.txt"),
        "--reconstruct-test", "--cohort", str(data_dir / "train_clean.evec"), "--top-k", "20",
        "--out", str(scores),
    ]) == 0
    assert len(load_scores(scores)) == 190


def test_sweep_alpha_starts_at_the_unadapted_model(data_dir, tmp_path):
    models = tmp_path / "models"
    assert run_command([
        "train", "--kind", "plda", "--embeddings", str(data_dir / "train_clean.evec"),
        "--out-dir", str(models), "--plda-iters", "4",
    ]) == 0
    assert (models / "plda_objective.csv").read_text().count("\n") == 5

    sweep = tmp_path / "sweep.csv"
    embeddings = [data_dir / "enroll_degraded.evec", data_dir / "test_degraded.evec"]
    assert run_command([
        "sweep-alpha", "--plda", str(models / "plda_model.txt"),
        "--adaptation", str(data_dir / "train_degraded.evec"),
        "--embeddings", str(embeddings[0]), "--embeddings", str(embeddings[1]),
        "--trials", str(data_dir / "trials.txt"), "--alpha-steps", "4", "--out", str(sweep),
    ]) == 0
    lines = sweep.read_text().splitlines()
    assert lines[0] == "alpha,eer,min_dcf_avg"
    assert [line.split(",")[0] for line in lines[1:]] == ["0.0", "0.25", "0.5", "0.75", "1.0"]

    unadapted = evaluate(score_trials(
        PldaBackend(load_plda(models / "plda_model.txt")),
        merge_sets([load_embeddings(p) for p in embeddings]),
        load_trials(data_dir / "trials.txt"),
    ))
    assert lines[1] == f"0.0,{format_float(unadapted.eer)},{format_float(unadapted.min_dcf_avg)}"


def test_cli_scores_match_the_full_experiment_baseline(data_dir, tmp_path):
    results = tmp_path / "results"
    assert run_command([
        "full-exp", "--out-dir", str(results), "--methods", "baseline", "--modes", "original",
    ] + WORLD) == 0
    scores = tmp_path / "scores.txt"
    assert run_command([
        "score", "--embeddings", str(data_dir / "enroll_clean.evec"),
        "--embeddings", str(data_dir / "test_degraded.evec"),
        "--trials", str(data_dir / "trials.txt"), "--out", str(scores),
    ]) == 0
    assert scores.read_bytes() == (results / "scores_baseline_original.txt").read_bytes()
    summary = (results / "summary.txt").read_text()
    assert summary.startswith("method\toriginal_eer_pct\toriginal_min_dcf\nbaseline\t")


def test_nonpositive_beta_is_a_usage_error(tmp_path):
    scores = tmp_path / "scores.txt"
    scores.write_text("e1 t1 0.5 target\ne1 t2 0.1 nontarget\n")
    assert run_command(["evaluate", "--scores", str(scores), "--betas", "0", "--out", str(tmp_path / "r")]) == 1


def test_invalid_utf8_scores_file_is_a_format_error(tmp_path, capsys):
    scores = tmp_path / "binary_scores.txt"
    scores.write_bytes(b"\xff\xfe e1 t1 0.5\n")
    assert run_command(["evaluate", "--scores", str(scores), "--out", str(tmp_path / "r")]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1
    assert "binary_scores.txt" in err
    assert "UTF-8" in err


def test_directory_as_input_is_a_data_error(tmp_path, capsys):
    assert run_command(["evaluate", "--scores", str(tmp_path), "--out", str(tmp_path / "r")]) == 2
    assert capsys.readouterr().err.startswith("svrbench: error:")


def test_negative_top_k_is_a_usage_error(data_dir, tmp_path, capsys):
    code = run_command([
        "score", "--embeddings", str(data_dir / "enroll_clean.evec"),
        "--embeddings", str(data_dir / "test_degraded.evec"),
        "--trials", str(data_dir / "trials.txt"), "--cohort", str(data_dir / "train_clean.evec"),
        "--top-k", "-1", "--out", str(tmp_path / "s.txt"),
    ])
    assert code == 1
    assert "top_k" in capsys.readouterr().err


def test_invalid_alpha_steps_is_a_usage_error(data_dir, tmp_path):
    models = tmp_path / "models"
    assert run_command([
        "train", "--kind", "plda", "--embeddings", str(data_dir / "train_clean.evec"),
        "--out-dir", str(models), "--plda-iters", "2",
    ]) == 0
    code = run_command([
        "sweep-alpha", "--plda", str(models / "plda_model.txt"),
        "--adaptation", str(data_dir / "train_degraded.evec"),
        "--embeddings", str(data_dir / "enroll_degraded.evec"),
        "--embeddings", str(data_dir / "test_degraded.evec"),
        "--trials", str(data_dir / "trials.txt"), "--alpha-steps", "0", "--out", str(tmp_path / "sweep.csv"),
    ])
    assert code == 1
    assert not (tmp_path / "sweep.csv").exists()
