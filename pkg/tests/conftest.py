"""Shared fixtures for the svrbench test suite."""

from typing import Dict, Sequence, Tuple

import numpy as np
import pytest

from svrbench.embeddings import NONTARGET, TARGET, EmbeddingSet, ScoreEntry, ScoreSet
from svrbench.simulate import WorldConfig, generate_world


def make_score_set(targets: Sequence[float], nontargets: Sequence[float]) -> ScoreSet:
    entries = [ScoreEntry(f"e{i}", f"t{i}", float(s), TARGET) for i, s in enumerate(targets)]
    entries += [ScoreEntry(f"e{i}", f"n{i}", float(s), NONTARGET) for i, s in enumerate(nontargets)]
    return ScoreSet(entries)


def brute_force_metrics(
    targets: Sequence[float],
    nontargets: Sequence[float],
    betas: Sequence[float] = (99.0, 199.0),
) -> Tuple[float, Dict[float, float]]:
    """EER and minDCF by direct counting at every candidate threshold."""
    targets = np.asarray(targets, dtype=float)
    nontargets = np.asarray(nontargets, dtype=float)
    distinct = sorted(set(targets.tolist()) | set(nontargets.tolist()))
    thresholds = [distinct[0] - max(1.0, abs(distinct[0]))]
    thresholds += [(a + b) / 2.0 for a, b in zip(distinct[:-1], distinct[1:])]
    thresholds.append(distinct[-1] + max(1.0, abs(distinct[-1])))

    p_fn = [float(np.sum(targets < th)) / len(targets) for th in thresholds]
    p_fp = [float(np.sum(nontargets >= th)) / len(nontargets) for th in thresholds]

    eer = None
    for a, b in zip(p_fn, p_fp):
        if a == b:
            eer = a
            break
    if eer is None:
        for i in range(1, len(thresholds)):
            if p_fn[i] - p_fp[i] > 0:
                a1, b1 = p_fn[i - 1], p_fn[i]
                a2, b2 = p_fp[i - 1], p_fp[i]
                t = (a2 - a1) / ((b1 - a1) - (b2 - a2))
                eer = a1 + t * (b1 - a1)
                break
    dcf = {beta: min(fn + beta * fp for fn, fp in zip(p_fn, p_fp)) for beta in betas}
    return eer, dcf


def finite_difference(f, flat: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of a flat parameter vector."""
    grad = np.empty_like(flat)
    for i in range(flat.size):
        up = flat.copy()
        down = flat.copy()
        up[i] += h
        down[i] -= h
        grad[i] = (f(up) - f(down)) / (2.0 * h)
    return grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def hand_scores() -> ScoreSet:
    """T = {0.9, 0.7, 0.3}, N = {0.8, 0.2, 0.1}."""
    return make_score_set([0.9, 0.7, 0.3], [0.8, 0.2, 0.1])


@pytest.fixture
def small_world() -> EmbeddingSet:
    return generate_world(WorldConfig(dim=8, n_speakers=20, utts_per_speaker=5, seed=7))


@pytest.fixture
def tiny_set() -> EmbeddingSet:
    vectors = np.array([
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [0.5, -0.5, 2.0],
    ])
    return EmbeddingSet(["a", "b", "c", "d"], vectors, ["s1", "s1", "s2", "s2"])
