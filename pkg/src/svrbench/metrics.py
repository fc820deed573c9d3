"""
Metrics Module

Detection metrics over labeled score sets.

A trial is accepted iff score >= threshold. The candidate thresholds are
one value below the lowest score, the midpoints between consecutive
distinct scores, and one value above the highest score; candidate j
rejects exactly the j lowest distinct score values. Every metric here is
computed on that finite sweep, so results depend only on the order of
the scores.

- DCF(threshold; beta) = P_fn + beta * P_fp (unnormalized), minimized per
  beta and averaged over betas (99 and 199 by default)
- EER: the common rate where P_fn and P_fp cross
"""

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Sequence, Tuple
import logging

import numpy as np

from .embeddings import NONTARGET, TARGET, ScoreSet
from .errors import EmptyClass, MissingLabels
from .file_io import PathOrStream, format_float, write_lines

_logger = logging.getLogger(__name__)

DEFAULT_BETAS = (99.0, 199.0)


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    p_fn: float
    p_fp: float


class _Sweep(NamedTuple):
    thresholds: np.ndarray
    fn: np.ndarray
    fp: np.ndarray
    n_target: int
    n_nontarget: int

    @property
    def p_fn(self) -> np.ndarray:
        return self.fn / self.n_target

    @property
    def p_fp(self) -> np.ndarray:
        return self.fp / self.n_nontarget


def _split_classes(scores: ScoreSet) -> Tuple[np.ndarray, np.ndarray]:
    missing = sum(1 for e in scores if e.label is None)
    if missing:
        raise MissingLabels(f"{missing} of {len(scores)} scores have no target/nontarget label.")
    values = scores.scores
    labels = scores.labels
    targets = np.sort(values[[label == TARGET for label in labels]]) if len(values) else np.zeros(0)
    nontargets = np.sort(values[[label == NONTARGET for label in labels]]) if len(values) else np.zeros(0)
    if targets.size == 0:
        raise EmptyClass("Metrics need at least one target score.")
    if nontargets.size == 0:
        raise EmptyClass("Metrics need at least one nontarget score.")
    return targets, nontargets


def _margin(value: float) -> float:
    return max(1.0, abs(value))


def _sweep(scores: ScoreSet) -> _Sweep:
    targets, nontargets = _split_classes(scores)
    distinct = np.unique(np.concatenate([targets, nontargets]))
    below = distinct[0] - _margin(distinct[0])
    above = distinct[-1] + _margin(distinct[-1])
    midpoints = distinct[:-1] + 0.5 * (distinct[1:] - distinct[:-1])
    thresholds = np.concatenate([[below], midpoints, [above]])
    # errors after rejecting the j lowest distinct values
    fn = np.concatenate([[0], np.searchsorted(targets, distinct, side="right")])
    fp = nontargets.size - np.concatenate([[0], np.searchsorted(nontargets, distinct, side="right")])
    return _Sweep(thresholds, fn.astype(np.int64), fp.astype(np.int64), int(targets.size), int(nontargets.size))


def operating_points(scores: ScoreSet) -> List[OperatingPoint]:
    """
    Sweep every candidate threshold, lowest first.

    Raises:
        MissingLabels: If any score has no label
        EmptyClass: If either class is empty
    """
    sweep = _sweep(scores)
    return [
        OperatingPoint(float(th), float(pfn), float(pfp))
        for th, pfn, pfp in zip(sweep.thresholds, sweep.p_fn, sweep.p_fp)
    ]


def _eer(sweep: _Sweep) -> Tuple[float, float]:
    # sign of p_fn - p_fp in exact integer arithmetic
    diff = sweep.fn * sweep.n_nontarget - sweep.fp * sweep.n_target
    exact = np.flatnonzero(diff == 0)
    if exact.size:
        j = int(exact[0])
        return float(sweep.p_fn[j]), float(sweep.thresholds[j])
    j = int(np.flatnonzero(diff > 0)[0])
    i = j - 1
    p_fn, p_fp = sweep.p_fn, sweep.p_fp
    gap_lo = p_fn[i] - p_fp[i]
    gap_hi = p_fn[j] - p_fp[j]
    frac = gap_lo / (gap_lo - gap_hi)
    rate = p_fn[i] + frac * (p_fn[j] - p_fn[i])
    threshold = sweep.thresholds[i] + frac * (sweep.thresholds[j] - sweep.thresholds[i])
    return float(rate), float(threshold)


def _min_dcf(sweep: _Sweep, beta: float) -> Tuple[float, float]:
    dcf = sweep.p_fn + beta * sweep.p_fp
    j = int(np.argmin(dcf))
    return float(dcf[j]), float(sweep.thresholds[j])


def _check_betas(betas: Sequence[float]) -> Tuple[float, ...]:
    betas = tuple(float(b) for b in betas)
    if not betas or any(not b > 0 for b in betas):
        raise ValueError(f"betas must be a non-empty list of positive numbers, got {betas}.")
    return betas


def eer(scores: ScoreSet) -> float:
    """Equal error rate, interpolated linearly between sweep points."""
    return _eer(_sweep(scores))[0]


def min_dcf(scores: ScoreSet, betas: Sequence[float] = DEFAULT_BETAS) -> Tuple[float, Dict[float, float]]:
    """
    Minimum of P_fn + beta * P_fp over the sweep, for each beta.

    Returns:
        (mean over betas, {beta: minimum})
    """
    betas = _check_betas(betas)
    sweep = _sweep(scores)
    per_beta = {b: _min_dcf(sweep, b)[0] for b in betas}
    return float(np.mean(list(per_beta.values()))), per_beta


@dataclass(frozen=True)
class MetricsReport:
    eer: float
    min_dcf_avg: float
    min_dcf_per_beta: Dict[float, float]
    n_target: int
    n_nontarget: int
    det_points: List[OperatingPoint] = field(repr=False)
    eer_threshold: float = float("nan")
    min_dcf_thresholds: Dict[float, float] = field(default_factory=dict)


def evaluate(scores: ScoreSet, betas: Sequence[float] = DEFAULT_BETAS) -> MetricsReport:
    """Bundle EER, minDCF over betas, class counts and the DET points."""
    betas = _check_betas(betas)
    sweep = _sweep(scores)
    eer_value, eer_threshold = _eer(sweep)
    per_beta: Dict[float, float] = {}
    thresholds: Dict[float, float] = {}
    for b in betas:
        per_beta[b], thresholds[b] = _min_dcf(sweep, b)
    report = MetricsReport(
        eer=eer_value,
        min_dcf_avg=float(np.mean(list(per_beta.values()))),
        min_dcf_per_beta=per_beta,
        n_target=sweep.n_target,
        n_nontarget=sweep.n_nontarget,
        det_points=[
            OperatingPoint(float(th), float(a), float(b))
            for th, a, b in zip(sweep.thresholds, sweep.p_fn, sweep.p_fp)
        ],
        eer_threshold=eer_threshold,
        min_dcf_thresholds=thresholds,
    )
    _logger.info(
        "Evaluated %d target / %d nontarget trials: EER %.4f, minDCF %.4f",
        report.n_target, report.n_nontarget, report.eer, report.min_dcf_avg,
    )
    return report


def beta_key(beta: float) -> str:
    return format(beta, "g")


def report_text(report: MetricsReport) -> str:
    """`key=value` lines with 17-significant-digit floats."""
    lines = [
        f"eer={format_float(report.eer)}",
        f"eer_threshold={format_float(report.eer_threshold)}",
        f"min_dcf_avg={format_float(report.min_dcf_avg)}",
    ]
    for beta, value in report.min_dcf_per_beta.items():
        lines.append(f"min_dcf_beta_{beta_key(beta)}={format_float(value)}")
    for beta, value in report.min_dcf_thresholds.items():
        lines.append(f"min_dcf_threshold_beta_{beta_key(beta)}={format_float(value)}")
    lines.append(f"n_target={report.n_target}")
    lines.append(f"n_nontarget={report.n_nontarget}")
    return "\n".join(lines) + "\n"


def save_report(report: MetricsReport, sink: PathOrStream) -> None:
    write_lines([report_text(report)], sink)


def save_det_points(points: Sequence[OperatingPoint], sink: PathOrStream) -> None:
    lines = ["threshold,p_fn,p_fp\n"]
    lines.extend(f"{format_float(p.threshold)},{format_float(p.p_fn)},{format_float(p.p_fp)}\n" for p in points)
    write_lines(lines, sink)
