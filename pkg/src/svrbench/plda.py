"""
PLDA Module

Two-covariance PLDA: an embedding is x = mu + y + e with speaker variable
y ~ N(0, B) and session noise e ~ N(0, W).

- plda_train_em: fit B and W by EM (mu is the global mean)
- plda_score / PldaScorer: same-vs-different speaker log-likelihood ratio
- plda_adapt: alpha-weighted interpolation towards an unlabeled
  adaptation set
- save_plda / load_plda: text model file, bit-exact round trip
"""

from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence, Tuple
import logging

import numpy as np
import scipy.linalg as sla

from .embeddings import EmbeddingSet, length_normalize_set
from .errors import DimensionMismatch, FormatError, InsufficientData, SingularCovariance
from .file_io import PathOrStream, float_token, format_float, open_text, source_name, write_lines

_logger = logging.getLogger(__name__)

MODEL_HEADER = "# plda v1"
SYMMETRY_TOL = 1e-10
REGULARIZATION = 1e-8
# eigenvalue ratio below which a covariance counts as near-singular
CONDITION_FLOOR = 1e-12


def _symmetric(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _regularize(cov: np.ndarray, name: str) -> np.ndarray:
    """Add 1e-8 * trace/d to the diagonal when cov is near-singular."""
    eig = np.linalg.eigvalsh(cov)
    top = max(float(eig[-1]), 0.0)
    if eig[0] > CONDITION_FLOOR * top and top > 0.0:
        return cov
    d = cov.shape[0]
    load = REGULARIZATION * float(np.trace(cov)) / d
    if not load > 0.0:
        load = REGULARIZATION
    _logger.warning("%s covariance is near-singular; adding %.3g to its diagonal", name, load)
    return cov + load * np.eye(d)


def _chol(cov: np.ndarray, name: str):
    try:
        return sla.cho_factor(cov, lower=True)
    except (sla.LinAlgError, ValueError):
        raise SingularCovariance(f"{name} covariance is not positive definite.") from None


def _inv_logdet(cov: np.ndarray, name: str) -> Tuple[np.ndarray, float]:
    factor = _chol(cov, name)
    inv = _symmetric(sla.cho_solve(factor, np.eye(cov.shape[0])))
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return inv, logdet


@dataclass(frozen=True, eq=False)
class PldaModel:
    """
    Two-covariance PLDA parameters.

    Attributes:
        mu: Global mean, shape (d,)
        between: Between-speaker covariance B, symmetric PSD
        within: Within-speaker covariance W, symmetric positive definite
    """
    mu: np.ndarray
    between: np.ndarray
    within: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=np.float64)
        between = np.array(self.between, dtype=np.float64)
        within = np.array(self.within, dtype=np.float64)
        d = mu.shape[0] if mu.ndim == 1 else -1
        if d < 1 or between.shape != (d, d) or within.shape != (d, d):
            raise DimensionMismatch(
                f"PLDA shapes do not fit: mu {mu.shape}, B {between.shape}, W {within.shape}."
            )
        for name, m in (("Between", between), ("Within", within)):
            if not np.all(np.isfinite(m)):
                raise FormatError(f"{name} covariance has non-finite entries.")
            scale = max(1.0, float(np.max(np.abs(m))))
            if np.max(np.abs(m - m.T)) > SYMMETRY_TOL * scale:
                raise FormatError(f"{name} covariance is not symmetric.")
        scale = max(1.0, float(np.max(np.abs(between))))
        if np.linalg.eigvalsh(between)[0] < -SYMMETRY_TOL * scale:
            raise SingularCovariance("Between covariance has negative eigenvalues.")
        if np.linalg.eigvalsh(within)[0] <= 0.0:
            raise SingularCovariance("Within covariance is not positive definite.")
        for a in (mu, between, within):
            a.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "between", between)
        object.__setattr__(self, "within", within)

    @property
    def dim(self) -> int:
        return int(self.mu.shape[0])

    @cached_property
    def scorer(self) -> "PldaScorer":
        return PldaScorer(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PldaModel):
            return NotImplemented
        return (
            np.array_equal(self.mu, other.mu)
            and np.array_equal(self.between, other.between)
            and np.array_equal(self.within, other.within)
        )


class PldaScorer:
    """
    Precomputed inverses for the closed-form LLR.

    With s = e + t and u = e - t (both centered), the same-speaker joint
    covariance diagonalizes into (2B + W) along s and W along u, so

        llr = -1/2 [log|2B+W| + log|W| - 2 log|B+W|]
              -1/2 [1/2 s'(2B+W)^-1 s + 1/2 u'W^-1 u - e'(B+W)^-1 e - t'(B+W)^-1 t]
    """

    def __init__(self, model: PldaModel):
        b, w = model.between, model.within
        self.mu = model.mu
        self.inv_sum, logdet_sum = _inv_logdet(2.0 * b + w, "Same-speaker (2B+W)")
        self.inv_within, logdet_within = _inv_logdet(w, "Within")
        self.inv_total, logdet_total = _inv_logdet(b + w, "Total (B+W)")
        self.const = -0.5 * (logdet_sum + logdet_within - 2.0 * logdet_total)

    def score_pairs(self, enroll: np.ndarray, test: np.ndarray) -> np.ndarray:
        """LLR of each row pair; rows of enroll and test are matched."""
        e = np.atleast_2d(enroll) - self.mu
        t = np.atleast_2d(test) - self.mu
        s = e + t
        u = e - t
        q_s = np.einsum("ij,jk,ik->i", s, self.inv_sum, s)
        q_u = np.einsum("ij,jk,ik->i", u, self.inv_within, u)
        q_e = np.einsum("ij,jk,ik->i", e, self.inv_total, e)
        q_t = np.einsum("ij,jk,ik->i", t, self.inv_total, t)
        return self.const - 0.5 * (0.5 * q_s + 0.5 * q_u - (q_e + q_t))


def plda_score(model: PldaModel, enroll, test) -> float:
    """
    Log-likelihood ratio of same vs different speaker for one trial.

    Raises:
        DimensionMismatch: If a vector's dimension differs from the model's
        SingularCovariance: If a required covariance cannot be inverted
    """
    e = np.asarray(enroll, dtype=np.float64)
    t = np.asarray(test, dtype=np.float64)
    if e.shape != (model.dim,) or t.shape != (model.dim,):
        raise DimensionMismatch(f"PLDA model has dimension {model.dim}, got {e.shape} and {t.shape}.")
    return float(model.scorer.score_pairs(e, t)[0])


# ---------------------------------------------------------------------------
# EM training
# ---------------------------------------------------------------------------

class _SpeakerStats:
    """Centered first-order statistics grouped by utterance count."""

    def __init__(self, x: np.ndarray, speaker_ids):
        groups = {}
        for row, spk in enumerate(speaker_ids):
            if spk is None:
                raise InsufficientData("PLDA training needs a speaker id for every utterance.")
            groups.setdefault(spk, []).append(row)
        self.n_utts = x.shape[0]
        self.n_speakers = len(groups)
        self.scatter = x.T @ x
        by_count = {}
        for rows in groups.values():
            by_count.setdefault(len(rows), []).append(x[rows].sum(axis=0))
        self.by_count = [(n, np.array(sums)) for n, sums in sorted(by_count.items())]
        self.max_count = max(len(rows) for rows in groups.values())


def _e_step(stats: _SpeakerStats, between: np.ndarray, within: np.ndarray):
    """Posterior moments of the speaker variables and the data log-likelihood."""
    d = between.shape[0]
    inv_b, logdet_b = _inv_logdet(between, "Between")
    inv_w, logdet_w = _inv_logdet(within, "Within")

    sum_yy = np.zeros((d, d))
    sum_fy = np.zeros((d, d))
    sum_nyy = np.zeros((d, d))
    loglik = -0.5 * stats.n_utts * (d * np.log(2.0 * np.pi) + logdet_w)
    loglik -= 0.5 * float(np.sum(inv_w * stats.scatter))
    for n, sums in stats.by_count:
        k = sums.shape[0]
        cov, logdet_prec = _inv_logdet(inv_b + n * inv_w, "Posterior precision")
        g = sums @ inv_w
        y = g @ cov
        yy = k * cov + y.T @ y
        sum_yy += yy
        sum_nyy += n * yy
        sum_fy += sums.T @ y
        loglik += -0.5 * k * (logdet_b + logdet_prec) + 0.5 * float(np.sum(g * y))
    return sum_yy, sum_fy, sum_nyy, loglik


def plda_train_em(
    data: EmbeddingSet,
    iters: int = 10,
    length_norm: bool = False,
) -> Tuple[PldaModel, np.ndarray]:
    """
    Fit a two-covariance PLDA model by EM.

    mu is the global mean. B and W start from the between/within scatter
    of the speaker means and are refined by EM with per-speaker posterior
    precision B^-1 + n_s W^-1.

    Args:
        data: Labeled embeddings
        iters: Number of EM iterations
        length_norm: Length-normalize the embeddings first

    Returns:
        (model, objective) where objective[k] is the per-utterance data
        log-likelihood after iteration k+1; it is non-decreasing

    Raises:
        InsufficientData: Fewer than two speakers, or no speaker with two
            utterances
        SingularCovariance: A covariance is singular even after
            regularization
    """
    if iters < 1:
        raise ValueError("iters must be positive.")
    if not data.is_labeled or len(data) == 0:
        raise InsufficientData("PLDA training needs labeled embeddings.")
    if length_norm:
        data = length_normalize_set(data)
    x = data.matrix
    mu = x.mean(axis=0)
    centered = x - mu
    stats = _SpeakerStats(centered, data.speaker_ids)
    if stats.n_speakers < 2:
        raise InsufficientData(f"PLDA training needs at least two speakers, got {stats.n_speakers}.")
    if stats.max_count < 2:
        raise InsufficientData("PLDA training needs a speaker with at least two utterances.")
    d = data.dim
    if d > stats.n_utts:
        _logger.warning("Dimension %d exceeds the number of utterances %d; covariances will be regularized", d, stats.n_utts)

    # start from the scatter of speaker means and the residual scatter
    total = stats.scatter / stats.n_utts
    mean_scatter = np.zeros((d, d))
    for n, sums in stats.by_count:
        means = sums / n
        mean_scatter += means.T @ means
    between = _regularize(_symmetric(mean_scatter / stats.n_speakers), "Between")
    within = _regularize(_symmetric(total - _weighted_mean_scatter(stats)), "Within")

    objective: List[float] = []
    for it in range(iters):
        sum_yy, sum_fy, sum_nyy, loglik = _e_step(stats, between, within)
        if it > 0:
            objective.append(loglik / stats.n_utts)
            _logger.debug("EM iteration %d objective %.10f", it, objective[-1])
        between = _regularize(_symmetric(sum_yy / stats.n_speakers), "Between")
        within = _regularize(
            _symmetric((stats.scatter - sum_fy - sum_fy.T + sum_nyy) / stats.n_utts), "Within"
        )
    objective.append(_e_step(stats, between, within)[3] / stats.n_utts)
    _logger.info(
        "PLDA EM: %d utterances, %d speakers, %d iterations, final objective %.6f",
        stats.n_utts, stats.n_speakers, iters, objective[-1],
    )
    return PldaModel(mu, between, within), np.array(objective)


def _weighted_mean_scatter(stats: _SpeakerStats) -> np.ndarray:
    """Utterance-weighted scatter of speaker means, sum_s n_s m_s m_s' / N."""
    d = stats.scatter.shape[0]
    acc = np.zeros((d, d))
    for n, sums in stats.by_count:
        acc += sums.T @ sums / n
    return acc / stats.n_utts


# ---------------------------------------------------------------------------
# Adaptation
# ---------------------------------------------------------------------------

def plda_adapt(model: PldaModel, adaptation: EmbeddingSet, alpha: float) -> PldaModel:
    """
    Interpolate a PLDA model towards an unlabeled adaptation set.

    The adaptation covariance T_a is split into B_a = r T_a and
    W_a = (1 - r) T_a with r = tr(B) / tr(B + W); every parameter is then
    (1 - alpha) * original + alpha * adapted. alpha = 0 returns the
    original model unchanged.

    Raises:
        InsufficientData: Fewer than two adaptation embeddings
        DimensionMismatch: Adaptation dimension differs from the model's
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}.")
    if adaptation.dim != model.dim:
        raise DimensionMismatch(f"Adaptation dimension {adaptation.dim} differs from model dimension {model.dim}.")
    if len(adaptation) < 2:
        raise InsufficientData("PLDA adaptation needs at least two embeddings.")
    if alpha == 0.0:
        return model

    x = adaptation.matrix
    mu_a = x.mean(axis=0)
    centered = x - mu_a
    t_a = _symmetric(centered.T @ centered / x.shape[0])
    ratio = float(np.trace(model.between)) / float(np.trace(model.between + model.within))
    b_a = ratio * t_a
    w_a = (1.0 - ratio) * t_a
    if alpha == 1.0:
        return PldaModel(mu_a, b_a, _regularize(w_a, "Adapted within"))

    keep = 1.0 - alpha
    return PldaModel(
        keep * model.mu + alpha * mu_a,
        keep * model.between + alpha * b_a,
        _regularize(keep * model.within + alpha * w_a, "Adapted within"),
    )


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

def save_plda(model: PldaModel, sink: PathOrStream) -> None:
    """Text file: header with dim, a `mu` line, then d `B` rows and d `W` rows."""
    lines = [f"{MODEL_HEADER} dim={model.dim}\n"]
    lines.append("mu " + " ".join(float_token(v) for v in model.mu) + "\n")
    for tag, matrix in (("B", model.between), ("W", model.within)):
        for row in matrix:
            lines.append(f"{tag} " + " ".join(float_token(v) for v in row) + "\n")
    write_lines(lines, sink)


def load_plda(source: PathOrStream) -> PldaModel:
    name = source_name(source)
    with open_text(source) as fh:
        lines = [line.split() for line in fh if line.strip()]
    try:
        header = lines[0]
        if " ".join(header[:3]) != MODEL_HEADER or not header[3].startswith("dim="):
            raise ValueError
        d = int(header[3][4:])
        body = lines[1:]
        if len(body) != 1 + 2 * d:
            raise ValueError
        rows = {"mu": [], "B": [], "W": []}
        for fields in body:
            if fields[0] not in rows or len(fields) != d + 1:
                raise ValueError
            rows[fields[0]].append([float(v) for v in fields[1:]])
        if len(rows["mu"]) != 1 or len(rows["B"]) != d or len(rows["W"]) != d:
            raise ValueError
    except (ValueError, IndexError):
        raise FormatError(f"{name}: not a valid PLDA model file (expected header '{MODEL_HEADER} dim=<d>').") from None
    return PldaModel(np.array(rows["mu"][0]), np.array(rows["B"]), np.array(rows["W"]))


def save_objective_curve(objective: Sequence[float], sink: PathOrStream) -> None:
    """CSV lines `iteration,objective`, iterations counted from 1."""
    lines = ["iteration,objective\n"]
    lines.extend(f"{i},{format_float(v)}\n" for i, v in enumerate(objective, start=1))
    write_lines(lines, sink)
