"""
Simulate Module

Seeded synthetic speakers and degradation channels standing in for real
x-vector corpora.

- generate_world: Gaussian speaker means plus per-utterance spread
- DegradationChannel / degrade: additive noise, low-rank projection or a
  fixed affine channel, applied to a clean set
- scenario_channel: presets for the noise, sample-rate and telephone
  mismatch scenarios
- make_protocol: speaker-disjoint train split plus enroll/test sets and
  labeled trials for the evaluation speakers

Everything is a pure function of its config and seed.
"""

from dataclasses import dataclass, replace
from typing import List, NamedTuple, Optional
import logging
import math

import numpy as np
import scipy.linalg as sla

from .embeddings import NONTARGET, TARGET, EmbeddingSet, Trial
from .errors import ConfigError, DimensionMismatch, InsufficientData
from .training import PairedData

_logger = logging.getLogger(__name__)

CHANNEL_KINDS = ("additive_noise", "rank_projection", "affine_channel")
SCENARIOS = ("noise", "sample-rate", "telephone")


@dataclass(frozen=True)
class WorldConfig:
    """
    Synthetic speaker population.

    Attributes:
        dim: Embedding dimension
        n_speakers: Number of speakers
        utts_per_speaker: Utterances per speaker
        sigma_between: Std of speaker means around the origin
        sigma_within: Std of utterances around their speaker mean
        seed: Generator seed
    """
    dim: int = 32
    n_speakers: int = 400
    utts_per_speaker: int = 10
    sigma_between: float = 1.0
    sigma_within: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"dim must be positive, got {self.dim}.")
        if self.n_speakers < 2:
            raise ConfigError(f"n_speakers must be at least 2, got {self.n_speakers}.")
        if self.utts_per_speaker < 1:
            raise ConfigError(f"utts_per_speaker must be at least 1, got {self.utts_per_speaker}.")
        if not self.sigma_between > 0:
            raise ConfigError(f"sigma_between must be positive, got {self.sigma_between}.")
        if not self.sigma_within >= 0:
            raise ConfigError(f"sigma_within must be non-negative, got {self.sigma_within}.")


def generate_world(cfg: WorldConfig) -> EmbeddingSet:
    """Labeled clean embeddings, utterances grouped by speaker."""
    rng = np.random.default_rng(cfg.seed)
    means = rng.standard_normal((cfg.n_speakers, cfg.dim)) * cfg.sigma_between
    spread = rng.standard_normal((cfg.n_speakers * cfg.utts_per_speaker, cfg.dim)) * cfg.sigma_within
    vectors = np.repeat(means, cfg.utts_per_speaker, axis=0) + spread
    ids = [f"spk{i}/utt{j}" for i in range(cfg.n_speakers) for j in range(cfg.utts_per_speaker)]
    speakers = [f"spk{i}" for i in range(cfg.n_speakers) for _ in range(cfg.utts_per_speaker)]
    _logger.info("Generated %d speakers x %d utterances (dim=%d)", cfg.n_speakers, cfg.utts_per_speaker, cfg.dim)
    return EmbeddingSet(ids, vectors, speakers, dim=cfg.dim)


@dataclass(frozen=True)
class DegradationChannel:
    """
    A fixed embedding-space degradation.

    additive_noise: x + n
    rank_projection: Q Q' x + n, Q a random orthonormal d x rank basis
    affine_channel: A x + b + U z + n, A = R diag(scales),
        R = expm(rotation * K) for a random skew-symmetric K, scales
        uniform in [1 - s, 1 + s], b ~ N(0, bias_spread^2 I); U is a random
        orthonormal d x nuisance_rank basis and z ~ N(0, nuisance_sigma^2 I)
        a per-utterance session offset inside it

    n ~ N(0, sigma^2 I) is drawn per utterance; the transform is drawn once
    from the channel seed.
    """
    kind: str
    sigma: float = 0.0
    rank: int = 0
    scale_spread: float = 0.0
    bias_spread: float = 0.0
    rotation: float = 0.0
    nuisance_rank: int = 0
    nuisance_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ConfigError(f"Unknown channel kind '{self.kind}'; expected one of {CHANNEL_KINDS}.")
        if not self.sigma >= 0 or not self.bias_spread >= 0 or not self.rotation >= 0:
            raise ConfigError("Channel sigma, bias_spread and rotation must be non-negative.")
        if not 0 <= self.scale_spread < 1:
            raise ConfigError(f"scale_spread must lie in [0, 1), got {self.scale_spread}.")
        if self.kind == "rank_projection" and self.rank < 1:
            raise ConfigError(f"rank must be at least 1, got {self.rank}.")
        if self.nuisance_rank < 0 or not self.nuisance_sigma >= 0:
            raise ConfigError("nuisance_rank and nuisance_sigma must be non-negative.")

    @classmethod
    def additive_noise(cls, sigma: float, seed: int = 0) -> "DegradationChannel":
        return cls("additive_noise", sigma=sigma, seed=seed)

    @classmethod
    def rank_projection(cls, rank: int, sigma: float = 0.0, seed: int = 0) -> "DegradationChannel":
        return cls("rank_projection", sigma=sigma, rank=rank, seed=seed)

    @classmethod
    def affine_channel(
        cls,
        scale_spread: float = 0.5,
        bias_spread: float = 1.2,
        sigma: float = 0.1,
        rotation: float = 0.6,
        nuisance_rank: int = 4,
        nuisance_sigma: float = 2.0,
        seed: int = 0,
    ) -> "DegradationChannel":
        """Telephone-like preset; nuisance_rank=0 gives the plain A x + b + n channel."""
        return cls(
            "affine_channel",
            sigma=sigma,
            scale_spread=scale_spread,
            bias_spread=bias_spread,
            rotation=rotation,
            nuisance_rank=nuisance_rank,
            nuisance_sigma=nuisance_sigma,
            seed=seed,
        )

    def with_seed(self, seed: int) -> "DegradationChannel":
        return replace(self, seed=seed)


def scenario_channel(name: str, dim: int, seed: int = 0) -> DegradationChannel:
    """Preset channel for a mismatch scenario: noise, sample-rate or telephone."""
    if name == "noise":
        return DegradationChannel.additive_noise(0.8, seed=seed)
    if name == "sample-rate":
        return DegradationChannel.rank_projection(max(1, dim // 2), sigma=0.1, seed=seed)
    if name == "telephone":
        return DegradationChannel.affine_channel(seed=seed)
    raise ConfigError(f"Unknown scenario '{name}'; expected one of {SCENARIOS}.")


def _rotation(dim: int, angle: float, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((dim, dim))
    skew = (g - g.T) / math.sqrt(2.0 * dim)
    return sla.expm(angle * skew)


class ChannelTransform(NamedTuple):
    matrix: Optional[np.ndarray]
    bias: Optional[np.ndarray]
    nuisance: Optional[np.ndarray]


def _orthonormal(dim: int, rank: int, rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, rank)))
    return q


def channel_transform(ch: DegradationChannel, dim: int, rng: np.random.Generator) -> ChannelTransform:
    """The fixed part of a channel, drawn from rng."""
    if ch.kind == "additive_noise":
        return ChannelTransform(None, None, None)
    if ch.kind == "rank_projection":
        if ch.rank > dim:
            raise DimensionMismatch(f"Projection rank {ch.rank} exceeds embedding dimension {dim}.")
        q = _orthonormal(dim, ch.rank, rng)
        return ChannelTransform(q @ q.T, None, None)
    if ch.nuisance_rank > dim:
        raise DimensionMismatch(f"Nuisance rank {ch.nuisance_rank} exceeds embedding dimension {dim}.")
    rotation = _rotation(dim, ch.rotation, rng)
    scales = rng.uniform(1.0 - ch.scale_spread, 1.0 + ch.scale_spread, size=dim)
    bias = rng.standard_normal(dim) * ch.bias_spread
    nuisance = _orthonormal(dim, ch.nuisance_rank, rng) if ch.nuisance_rank else None
    return ChannelTransform(rotation * scales[None, :], bias, nuisance)


def degrade(embeddings: EmbeddingSet, ch: DegradationChannel) -> EmbeddingSet:
    """
    Apply a channel to every embedding; ids and speakers are kept.

    Raises:
        DimensionMismatch: If a channel rank exceeds the dimension
    """
    rng = np.random.default_rng(ch.seed)
    transform = channel_transform(ch, embeddings.dim, rng)
    x = embeddings.matrix
    if transform.matrix is not None:
        x = x @ transform.matrix.T
    if transform.bias is not None:
        x = x + transform.bias
    if ch.sigma > 0:
        x = x + rng.standard_normal(x.shape) * ch.sigma
    if transform.nuisance is not None and ch.nuisance_sigma > 0:
        offsets = rng.standard_normal((x.shape[0], transform.nuisance.shape[1])) * ch.nuisance_sigma
        x = x + offsets @ transform.nuisance.T
    _logger.info("Degraded %d embeddings with %s channel", len(embeddings), ch.kind)
    return embeddings.with_matrix(x)


@dataclass(frozen=True)
class SplitConfig:
    """
    Evaluation protocol layout.

    Attributes:
        train_speaker_fraction: Share of speakers reserved for training
        n_enroll_utts: Enrollment utterances per evaluation speaker; the
            remaining ones are test utterances
        n_target: Target trials to sample
        n_nontarget: Nontarget trials to sample
        seed: Split and sampling seed
    """
    train_speaker_fraction: float = 0.75
    n_enroll_utts: int = 3
    n_target: int = 1000
    n_nontarget: int = 5000
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_speaker_fraction < 1.0:
            raise ConfigError("train_speaker_fraction must lie strictly between 0 and 1.")
        if self.n_enroll_utts < 1:
            raise ConfigError("n_enroll_utts must be positive.")
        if self.n_target < 1 or self.n_nontarget < 1:
            raise ConfigError("n_target and n_nontarget must be positive.")


@dataclass(frozen=True, eq=False)
class Protocol:
    """Train pairs plus clean/degraded enroll and test sets and their trials."""
    train: PairedData
    enroll_high: EmbeddingSet
    enroll_low: EmbeddingSet
    test_high: EmbeddingSet
    test_low: EmbeddingSet
    trials: List[Trial]

    @property
    def train_speakers(self) -> List[str]:
        return sorted(set(self.train.speaker_ids))

    @property
    def eval_speakers(self) -> List[str]:
        return sorted({s for s in self.enroll_high.speaker_ids})


def make_protocol(high: EmbeddingSet, low: EmbeddingSet, split: Optional[SplitConfig] = None) -> Protocol:
    """
    Split a clean/degraded world into training pairs and evaluation trials.

    Speakers are split at random into disjoint train and eval groups. Each
    eval speaker's utterances are shuffled; the first n_enroll_utts become
    enrollment utterances, the rest test utterances. Trials are drawn
    without replacement from the enroll x test grid, labeled by speaker
    identity, and listed in grid order.

    Raises:
        InsufficientData: Too few speakers, utterances or candidate trials
    """
    split = split or SplitConfig()
    if set(high.utterance_ids) != set(low.utterance_ids):
        raise InsufficientData("Clean and degraded sets must contain the same utterances.")
    low = low.subset(high.utterance_ids)
    groups = high.speaker_groups()
    speakers = list(groups)
    rng = np.random.default_rng(split.seed)

    n_train = int(math.floor(split.train_speaker_fraction * len(speakers) + 0.5))
    if n_train < 1 or len(speakers) - n_train < 2:
        raise InsufficientData(
            f"{len(speakers)} speakers cannot be split into a training group and two or more eval speakers."
        )
    order = rng.permutation(len(speakers))
    train_idx = np.sort(order[:n_train])
    eval_idx = np.sort(order[n_train:])

    ids = high.utterance_ids
    train_rows = sorted(r for i in train_idx for r in groups[speakers[i]])
    train_ids = [ids[r] for r in train_rows]
    train = PairedData(low.subset(train_ids), high.subset(train_ids))

    enroll_ids: List[str] = []
    test_ids: List[str] = []
    for i in eval_idx:
        rows = groups[speakers[i]]
        if len(rows) <= split.n_enroll_utts:
            raise InsufficientData(
                f"Speaker '{speakers[i]}' has {len(rows)} utterances; need more than {split.n_enroll_utts}."
            )
        shuffled = [rows[k] for k in rng.permutation(len(rows))]
        enroll_ids.extend(ids[r] for r in shuffled[:split.n_enroll_utts])
        test_ids.extend(ids[r] for r in shuffled[split.n_enroll_utts:])

    enroll_spk = np.array([high.speaker_of(u) for u in enroll_ids])
    test_spk = np.array([high.speaker_of(u) for u in test_ids])
    same = (enroll_spk[:, None] == test_spk[None, :]).ravel()
    target_cells = np.flatnonzero(same)
    nontarget_cells = np.flatnonzero(~same)
    if split.n_target > target_cells.size or split.n_nontarget > nontarget_cells.size:
        raise InsufficientData(
            f"Requested {split.n_target} target / {split.n_nontarget} nontarget trials, "
            f"but only {target_cells.size} / {nontarget_cells.size} are available."
        )
    chosen = np.sort(np.concatenate([
        rng.choice(target_cells, size=split.n_target, replace=False),
        rng.choice(nontarget_cells, size=split.n_nontarget, replace=False),
    ]))
    n_test = len(test_ids)
    trials = [
        Trial(enroll_ids[c // n_test], test_ids[c % n_test], TARGET if same[c] else NONTARGET)
        for c in chosen
    ]
    _logger.info(
        "Protocol: %d train speakers, %d eval speakers, %d enroll / %d test utterances, %d trials",
        n_train, len(eval_idx), len(enroll_ids), len(test_ids), len(trials),
    )
    return Protocol(
        train=train,
        enroll_high=high.subset(enroll_ids),
        enroll_low=low.subset(enroll_ids),
        test_high=high.subset(test_ids),
        test_low=low.subset(test_ids),
        trials=trials,
    )
