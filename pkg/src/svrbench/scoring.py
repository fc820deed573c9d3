"""
Scoring Module

This module provides:
- ScoringBackend: Base class for trial scorers (cosine, PLDA)
- Cohort: Imposter embeddings for score normalization
- snorm: Adaptive symmetric score normalization
- score_trials: Score a trial list, optionally reconstructing one or both
  sides with an SVR network and normalizing against a cohort

Backends score row-matched matrices, so a whole trial list (or a whole
cohort) is scored in one call. Trials are scored in sorted (enroll, test)
order and mapped back, which makes every score independent of the order
of the trial list.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np

from .embeddings import MIN_NORM, EmbeddingSet, ScoreSet, Trial
from .errors import ConfigError, DegenerateCohort, DimensionMismatch, FormatError, InsufficientData, ZeroVector
from .network import MlpParameters
from .plda import PldaModel
from .training import reconstruct

_logger = logging.getLogger(__name__)

ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]

DEFAULT_TOP_K = 200
# utterances per block when scoring against a cohort
COHORT_BLOCK = 256


class ScoringBackend:
    """
    Base class for scorers.

    Subclasses implement `score_pairs(enroll, test)`, returning one score
    per matched row of two (n, d) matrices.
    """

    name = "backend"

    def score_pairs(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        return self.score_pairs(enroll, test)

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class CosineBackend(ScoringBackend):
    name = "cosine"

    def score_pairs(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        e = np.atleast_2d(np.asarray(enroll, dtype=np.float64))
        t = np.atleast_2d(np.asarray(test, dtype=np.float64))
        if e.shape != t.shape:
            raise DimensionMismatch(f"Cannot score matrices of shapes {e.shape} and {t.shape}.")
        norm_e = np.sqrt(np.einsum("ij,ij->i", e, e))
        norm_t = np.sqrt(np.einsum("ij,ij->i", t, t))
        if np.any(norm_e < MIN_NORM) or np.any(norm_t < MIN_NORM):
            raise ZeroVector("Cosine scoring hit a zero-norm embedding.")
        cos = np.einsum("ij,ij->i", e, t) / (norm_e * norm_t)
        return np.clip(cos, -1.0, 1.0)


class PldaBackend(ScoringBackend):
    """PLDA log-likelihood ratio, optionally on length-normalized vectors."""

    name = "plda"

    def __init__(self, model: PldaModel, length_norm: bool = False):
        self.model = model
        self.length_norm = length_norm

    def _prepare(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.model.dim:
            raise DimensionMismatch(f"PLDA model has dimension {self.model.dim}, embeddings have {x.shape[1]}.")
        if not self.length_norm:
            return x
        norms = np.linalg.norm(x, axis=1)
        if np.any(norms < MIN_NORM):
            raise ZeroVector("Cannot length-normalize a zero-norm embedding.")
        return x / norms[:, None]

    def score_pairs(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        e = self._prepare(enroll)
        t = self._prepare(test)
        if e.shape != t.shape:
            raise DimensionMismatch(f"Cannot score matrices of shapes {e.shape} and {t.shape}.")
        return self.model.scorer.score_pairs(e, t)

    def __repr__(self) -> str:
        return f"PldaBackend(dim={self.model.dim}, length_norm={self.length_norm})"


@dataclass(frozen=True)
class Cohort:
    """
    Imposter embeddings for s-norm.

    Attributes:
        embeddings: Cohort utterances
        top_k: Keep the top_k highest cohort scores per trial side (0 = all)
    """
    embeddings: EmbeddingSet
    top_k: int = DEFAULT_TOP_K

    def __post_init__(self):
        if len(self.embeddings) == 0:
            raise InsufficientData("Score normalization needs a non-empty cohort.")
        if self.top_k < 0:
            raise ValueError(f"top_k must be non-negative, got {self.top_k}.")

    @property
    def size(self) -> int:
        return len(self.embeddings)

    @property
    def effective_k(self) -> int:
        return self.size if self.top_k == 0 else min(self.top_k, self.size)


def _side_stats(
    vectors: np.ndarray,
    cohort: Cohort,
    score_fn: ScoreFn,
    enroll_side: bool,
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and population std of the top-k cohort scores of each row."""
    imposters = cohort.embeddings.matrix
    c = imposters.shape[0]
    k = cohort.effective_k
    means = np.empty(vectors.shape[0])
    stds = np.empty(vectors.shape[0])
    for start in range(0, vectors.shape[0], COHORT_BLOCK):
        block = vectors[start:start + COHORT_BLOCK]
        own = np.repeat(block, c, axis=0)
        others = np.tile(imposters, (block.shape[0], 1))
        raw = score_fn(own, others) if enroll_side else score_fn(others, own)
        top = np.sort(np.asarray(raw, dtype=np.float64).reshape(block.shape[0], c), axis=1)[:, c - k:]
        means[start:start + block.shape[0]] = top.mean(axis=1)
        stds[start:start + block.shape[0]] = top.std(axis=1)
    return means, stds


def snorm(
    raw: ScoreSet,
    score_fn: ScoreFn,
    embeddings: EmbeddingSet,
    cohort: Cohort,
    test_embeddings: Optional[EmbeddingSet] = None,
) -> ScoreSet:
    """
    Adaptive symmetric score normalization.

    Each raw score s of trial (e, t) becomes
    1/2 [(s - mu_e) / sigma_e + (s - mu_t) / sigma_t], where mu_e, sigma_e
    are the mean and population std of the top-k scores of e against the
    cohort (and likewise for t).

    Args:
        raw: Scores to normalize
        score_fn: Vectorized scorer over row-matched matrices
        embeddings: Enrollment-side vectors (also the test side unless
            test_embeddings is given)
        cohort: Imposter set
        test_embeddings: Test-side vectors, when they differ

    Raises:
        MissingUtterance: A trial utterance is not in the embeddings
        DimensionMismatch: Cohort and embeddings differ in dimension
        DegenerateCohort: Zero cohort-score spread on either side
    """
    test_embeddings = embeddings if test_embeddings is None else test_embeddings
    for side in (embeddings, test_embeddings):
        if side.dim != cohort.embeddings.dim:
            raise DimensionMismatch(
                f"Cohort dimension {cohort.embeddings.dim} differs from embedding dimension {side.dim}."
            )
    if len(raw) == 0:
        return raw

    enroll_ids = sorted({e.enroll_utt for e in raw})
    test_ids = sorted({e.test_utt for e in raw})
    e_mean, e_std = _side_stats(embeddings.matrix[embeddings.rows(enroll_ids)], cohort, score_fn, True)
    t_mean, t_std = _side_stats(test_embeddings.matrix[test_embeddings.rows(test_ids)], cohort, score_fn, False)
    for ids, std, side in ((enroll_ids, e_std, "enrollment"), (test_ids, t_std, "test")):
        if np.any(std <= 0.0):
            bad = ids[int(np.argmin(std))]
            raise DegenerateCohort(f"Cohort scores of {side} utterance '{bad}' have zero spread.")

    e_pos = {u: i for i, u in enumerate(enroll_ids)}
    t_pos = {u: i for i, u in enumerate(test_ids)}
    ei = np.array([e_pos[e.enroll_utt] for e in raw], dtype=np.intp)
    ti = np.array([t_pos[e.test_utt] for e in raw], dtype=np.intp)
    s = raw.scores
    normalized = 0.5 * ((s - e_mean[ei]) / e_std[ei] + (s - t_mean[ti]) / t_std[ti])
    _logger.debug("S-norm over %d trials with cohort of %d (top_k=%d)", len(raw), cohort.size, cohort.effective_k)
    return raw.with_scores(normalized)


@dataclass(frozen=True)
class ScoringOptions:
    reconstruct_enroll: bool = False
    reconstruct_test: bool = False
    svr: Optional[MlpParameters] = None
    cohort: Optional[Cohort] = None

    def __post_init__(self):
        if (self.reconstruct_enroll or self.reconstruct_test) and self.svr is None:
            raise ConfigError("Reconstruction was requested but no SVR model was given.")


def _canonical_order(trials: Sequence[Trial]) -> List[int]:
    seen: Dict[Tuple[str, str], int] = {}
    for i, t in enumerate(trials):
        if t.key in seen:
            raise FormatError(f"Duplicate trial {t.key} in trial list.")
        seen[t.key] = i
    return [seen[key] for key in sorted(seen)]


def score_trials(
    backend: ScoringBackend,
    embeddings: EmbeddingSet,
    trials: Sequence[Trial],
    options: Optional[ScoringOptions] = None,
) -> ScoreSet:
    """
    Score every trial; output entries follow the input trial order.

    Flagged sides are passed through the SVR network before scoring, then
    the whole set is optionally s-normed. Labels are copied from trials.

    Raises:
        MissingUtterance: A trial references an unknown utterance
        DimensionMismatch: Embeddings, network or backend disagree on dim
    """
    options = options or ScoringOptions()
    trials = list(trials)
    if not trials:
        return ScoreSet([])
    order = _canonical_order(trials)

    enroll_side = embeddings
    test_side = embeddings
    if options.reconstruct_enroll or options.reconstruct_test:
        rebuilt = reconstruct(options.svr, embeddings)
        enroll_side = rebuilt if options.reconstruct_enroll else embeddings
        test_side = rebuilt if options.reconstruct_test else embeddings

    canonical = [trials[i] for i in order]
    e_rows = enroll_side.rows(t.enroll_utt for t in canonical)
    t_rows = test_side.rows(t.test_utt for t in canonical)
    scores = np.asarray(backend.score_pairs(enroll_side.matrix[e_rows], test_side.matrix[t_rows]), dtype=np.float64)
    result = ScoreSet.from_trials(canonical, scores)
    if options.cohort is not None:
        result = snorm(result, backend.score_pairs, enroll_side, options.cohort, test_side)

    in_order = np.empty(len(trials))
    in_order[order] = result.scores
    _logger.info(
        "Scored %d trials with %r (reconstruct enroll=%s test=%s, snorm=%s)",
        len(trials), backend, options.reconstruct_enroll, options.reconstruct_test, options.cohort is not None,
    )
    return ScoreSet.from_trials(trials, in_order)
