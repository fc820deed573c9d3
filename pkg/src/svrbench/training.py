"""
Training Module

Siamese training of the reconstruction network:

- PairedData: low/high-quality embeddings of the same utterances, with
  speaker labels
- sample_pairs / sample_pair_batch: draw same- and different-speaker pairs
- Sgd / Adam: optimizers over the flattened parameter vector
- train: the training loop, deterministic for a given seed
- reconstruct: apply a trained network to an embedding set

Training runs on a single thread; a batch gradient is one vectorized pass,
so the accumulation order is fixed and runs are bit-reproducible.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from .embeddings import EmbeddingSet
from .errors import DimensionMismatch, FormatError, InsufficientData, NumericalDivergence, ZeroVector
from .file_io import PathOrStream, format_float, write_lines
from .network import (
    ACTIVATIONS,
    MlpParameters,
    PairBatch,
    PairSample,
    batch_loss_and_grad,
    init_parameters,
    mlp_forward,
)

_logger = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


@dataclass(frozen=True)
class TrainConfig:
    """
    Hyperparameters of SVR training.

    Attributes:
        hidden_dims: Hidden layer widths (three layers in total by default)
        activation: 'relu' or 'tanh' after every hidden layer
        steps: Number of optimizer steps
        batch_size: Pairs per step
        learning_rate: Optimizer step size
        optimizer: 'adam' (beta1=0.9, beta2=0.999, eps=1e-8) or 'sgd'
        same_speaker_fraction: Share of same-speaker pairs in each batch
        seed: Seed for initialization and pair sampling
        loss_weights: (w_recon, w_cos)
        log_every: Log the batch loss every this many steps (0 disables)
    """
    hidden_dims: Tuple[int, ...] = (512, 512)
    activation: str = "relu"
    steps: int = 2000
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    same_speaker_fraction: float = 0.5
    seed: int = 0
    loss_weights: Tuple[float, float] = (1.0, 1.0)
    log_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        object.__setattr__(self, "loss_weights", tuple(float(w) for w in self.loss_weights))
        if any(h <= 0 for h in self.hidden_dims):
            raise ValueError("hidden_dims must all be positive.")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}.")
        if self.steps <= 0 or self.batch_size <= 0:
            raise ValueError("steps and batch_size must be positive.")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive.")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}.")
        if not 0.0 < self.same_speaker_fraction < 1.0:
            raise ValueError("same_speaker_fraction must lie strictly between 0 and 1.")
        if len(self.loss_weights) != 2 or any(not w > 0 for w in self.loss_weights):
            raise ValueError("loss_weights must be two positive numbers.")
        if self.log_every < 0:
            raise ValueError("log_every must be non-negative.")


class PairedData:
    """
    Low- and high-quality versions of the same utterances.

    The two sets must list the same utterance ids; `high` is reordered to
    match `low`. Speaker ids come from `low` when present, else `high`.
    """

    def __init__(self, low: EmbeddingSet, high: EmbeddingSet):
        if low.dim != high.dim:
            raise DimensionMismatch(f"Low-quality dim {low.dim} differs from high-quality dim {high.dim}.")
        if set(low.utterance_ids) != set(high.utterance_ids):
            raise InsufficientData("Low- and high-quality sets must contain the same utterances.")
        if high.utterance_ids != low.utterance_ids:
            high = high.subset(low.utterance_ids)
        speakers = low.speaker_ids if low.is_labeled else high.speaker_ids
        self.low = low
        self.high = high
        self.speaker_ids = speakers

        groups: Dict[str, List[int]] = {}
        for row, spk in enumerate(speakers):
            if spk is None:
                raise InsufficientData(f"Utterance '{low.utterance_ids[row]}' has no speaker id.")
            groups.setdefault(spk, []).append(row)
        self._grouped = np.array([r for rows in groups.values() for r in rows], dtype=np.intp)
        self._counts = np.array([len(rows) for rows in groups.values()], dtype=np.intp)
        self._starts = np.concatenate([[0], np.cumsum(self._counts)[:-1]]).astype(np.intp)
        self._multi = np.flatnonzero(self._counts >= 2)
        # speaker weight C(n, 2) makes same-speaker pairs uniform over all such pairs
        pairs = self._counts[self._multi] * (self._counts[self._multi] - 1) / 2.0
        self._pair_weights = pairs / pairs.sum() if pairs.size else pairs

    @property
    def dim(self) -> int:
        return self.low.dim

    @property
    def n_speakers(self) -> int:
        return int(self._counts.size)

    def __len__(self) -> int:
        return len(self.low)

    def same_speaker_rows(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        if n == 0:
            return np.zeros(0, np.intp), np.zeros(0, np.intp)
        if self._multi.size == 0:
            raise InsufficientData("Same-speaker pairs need a speaker with at least two utterances.")
        spk = rng.choice(self._multi, size=n, p=self._pair_weights)
        counts = self._counts[spk]
        first = rng.integers(0, counts)
        second = rng.integers(0, counts - 1)
        second = second + (second >= first)
        starts = self._starts[spk]
        return self._grouped[starts + first], self._grouped[starts + second]

    def different_speaker_rows(self, n: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        if n == 0:
            return np.zeros(0, np.intp), np.zeros(0, np.intp)
        if self.n_speakers < 2:
            raise InsufficientData("Different-speaker pairs need at least two speakers.")
        spk1 = rng.integers(0, self.n_speakers, size=n)
        spk2 = rng.integers(0, self.n_speakers - 1, size=n)
        spk2 = spk2 + (spk2 >= spk1)
        utt1 = rng.integers(0, self._counts[spk1])
        utt2 = rng.integers(0, self._counts[spk2])
        return self._grouped[self._starts[spk1] + utt1], self._grouped[self._starts[spk2] + utt2]


def sample_pair_batch(data: PairedData, n: int, cfg: TrainConfig, rng: np.random.Generator) -> PairBatch:
    """
    Draw n pairs, round(same_speaker_fraction * n) of them same-speaker.

    Raises:
        InsufficientData: If a required pair polarity cannot be formed
    """
    if len(data) == 0:
        raise InsufficientData("Cannot sample pairs from an empty dataset.")
    n_same = int(math.floor(cfg.same_speaker_fraction * n + 0.5))
    n_diff = n - n_same
    same1, same2 = data.same_speaker_rows(n_same, rng)
    diff1, diff2 = data.different_speaker_rows(n_diff, rng)
    rows1 = np.concatenate([same1, diff1])
    rows2 = np.concatenate([same2, diff2])
    flags = np.concatenate([np.ones(n_same, bool), np.zeros(n_diff, bool)])
    order = rng.permutation(n)
    rows1, rows2, flags = rows1[order], rows2[order], flags[order]
    low, high = data.low.matrix, data.high.matrix
    return PairBatch(low[rows1], high[rows1], low[rows2], high[rows2], flags)


def sample_pairs(data: PairedData, n: int, cfg: TrainConfig, rng: np.random.Generator) -> List[PairSample]:
    """List form of sample_pair_batch."""
    return sample_pair_batch(data, n, cfg, rng).samples()


class Sgd:
    """Plain gradient descent."""

    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        return flat - self.learning_rate * grad


class Adam:
    """Adam with bias-corrected moment estimates."""

    def __init__(self, learning_rate: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m: Optional[np.ndarray] = None
        self._v: Optional[np.ndarray] = None
        self._t = 0

    def step(self, flat: np.ndarray, grad: np.ndarray) -> np.ndarray:
        if self._m is None:
            self._m = np.zeros_like(flat)
            self._v = np.zeros_like(flat)
        self._t += 1
        self._m = self.beta1 * self._m + (1.0 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1.0 - self.beta2) * grad * grad
        m_hat = self._m / (1.0 - self.beta1 ** self._t)
        v_hat = self._v / (1.0 - self.beta2 ** self._t)
        return flat - self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return Sgd(cfg.learning_rate)
    return Adam(cfg.learning_rate)


@dataclass(frozen=True, eq=False)
class TrainResult:
    params: MlpParameters
    losses: np.ndarray = field(repr=False)

    @property
    def initial_loss(self) -> float:
        return float(self.losses[0])

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def train(data: PairedData, cfg: TrainConfig) -> TrainResult:
    """
    Train the reconstruction network with the Siamese pair loss.

    Each step draws a fresh batch, records its mean loss at the current
    parameters and takes one optimizer step.

    Returns:
        TrainResult with the final parameters and the per-step loss curve

    Raises:
        InsufficientData: Empty dataset or a pair polarity cannot be formed
        NumericalDivergence: The loss became non-finite
    """
    if len(data) == 0:
        raise InsufficientData("Training data is empty.")
    rng = np.random.default_rng(cfg.seed)
    params = init_parameters(data.dim, cfg.hidden_dims, cfg.activation, rng)
    optimizer = make_optimizer(cfg)
    flat = params.flatten()
    losses = np.empty(cfg.steps)

    _logger.info(
        "Training SVR network %s on %d utterances / %d speakers for %d steps",
        params.layer_dims, len(data), data.n_speakers, cfg.steps,
    )
    for step in range(cfg.steps):
        batch = sample_pair_batch(data, cfg.batch_size, cfg, rng)
        try:
            loss, grad = batch_loss_and_grad(params, batch, cfg.loss_weights)
        except (ZeroVector, FormatError) as e:
            raise NumericalDivergence(f"Step {step}: {e}") from e
        if not math.isfinite(loss):
            raise NumericalDivergence(
                f"Loss became non-finite at step {step}; try a smaller learning rate (now {cfg.learning_rate})."
            )
        losses[step] = loss
        flat = optimizer.step(flat, grad.flatten())
        if not np.all(np.isfinite(flat)):
            raise NumericalDivergence(f"Parameters became non-finite at step {step}.")
        params = params.unflatten(flat)
        if cfg.log_every and (step % cfg.log_every == 0 or step == cfg.steps - 1):
            _logger.info("step %d/%d mean batch loss %.6f", step + 1, cfg.steps, loss)

    return TrainResult(params, losses)


def reconstruct(params: MlpParameters, embeddings: EmbeddingSet) -> EmbeddingSet:
    """
    Replace every vector by the network output, keeping ids and order.

    Raises:
        DimensionMismatch: If the set and network dimensions differ
    """
    if embeddings.dim != params.dim:
        raise DimensionMismatch(f"Set dimension {embeddings.dim} differs from network dimension {params.dim}.")
    return embeddings.with_matrix(mlp_forward(params, embeddings.matrix))


def reconstruction_error(params: MlpParameters, data: PairedData) -> float:
    """Mean squared distance |F(x_low) - x_high|^2 over the utterances."""
    residual = mlp_forward(params, data.low.matrix) - data.high.matrix
    return float(np.mean(np.einsum("ij,ij->i", residual, residual)))


def save_loss_curve(losses: Sequence[float], sink: PathOrStream) -> None:
    """CSV lines `step,loss`, steps counted from 1."""
    lines = ["step,loss\n"]
    lines.extend(f"{i},{format_float(v)}\n" for i, v in enumerate(losses, start=1))
    write_lines(lines, sink)

