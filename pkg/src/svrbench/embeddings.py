"""
Embeddings Module

Domain types shared by every other module:
- Embedding: one utterance vector with its utterance and speaker ids
- EmbeddingSet: an ordered, dimension-consistent collection of embeddings
- Trial: an (enrollment, test) pair with an optional ground-truth label
- ScoreSet: scored trials

Plus the two basic vector operations, cosine similarity and length
normalization.

All vectors are float64 and stored read-only, so instances can be shared
between threads without copying.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Optional, Sequence, Tuple
import logging
import math

import numpy as np

from .errors import DimensionMismatch, FormatError, InsufficientData, MissingUtterance, ZeroVector

_logger = logging.getLogger(__name__)

TARGET = "target"
NONTARGET = "nontarget"
LABELS = (TARGET, NONTARGET)

# Reconstructed outputs below this norm have no usable direction.
MIN_NORM = 1e-30


def _frozen_vector(values) -> np.ndarray:
    vector = np.array(values, dtype=np.float64)
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class Embedding:
    """
    A single utterance embedding.

    Attributes:
        utterance_id: Unique id of the utterance within its set
        vector: The embedding, a 1-d float64 array
        speaker_id: Speaker label, None when unknown
    """
    utterance_id: str
    vector: np.ndarray
    speaker_id: Optional[str] = None

    def __post_init__(self):
        if not self.utterance_id:
            raise FormatError("Embedding utterance_id must be non-empty.")
        vector = _frozen_vector(self.vector)
        if vector.ndim != 1 or vector.size == 0:
            raise DimensionMismatch(
                f"Embedding '{self.utterance_id}' must be a non-empty 1-d vector, got shape {vector.shape}."
            )
        if not np.all(np.isfinite(vector)):
            raise FormatError(f"Embedding '{self.utterance_id}' has non-finite components.")
        object.__setattr__(self, "vector", vector)

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])

    def __eq__(self, other) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return (
            self.utterance_id == other.utterance_id
            and self.speaker_id == other.speaker_id
            and np.array_equal(self.vector, other.vector)
        )


class EmbeddingSet:
    """
    Ordered collection of embeddings sharing one dimension.

    Vectors live in a single read-only (n, dim) matrix so backends can
    score whole sets at once; `items` gives the per-utterance view.
    """

    def __init__(
        self,
        utterance_ids: Sequence[str],
        vectors,
        speaker_ids: Optional[Sequence[Optional[str]]] = None,
        dim: Optional[int] = None,
    ):
        ids = tuple(str(u) for u in utterance_ids)
        matrix = np.array(vectors, dtype=np.float64)
        if matrix.size == 0 and dim is not None:
            matrix = matrix.reshape(0, dim)
        if matrix.ndim != 2:
            raise DimensionMismatch(f"Embedding matrix must be 2-d, got shape {matrix.shape}.")
        if matrix.shape[0] != len(ids):
            raise DimensionMismatch(
                f"{len(ids)} utterance ids but {matrix.shape[0]} vectors."
            )
        if dim is not None and matrix.shape[1] != dim:
            raise DimensionMismatch(f"Expected dimension {dim}, got {matrix.shape[1]}.")
        if matrix.shape[1] < 1:
            raise DimensionMismatch("Embedding dimension must be at least 1.")
        if not np.all(np.isfinite(matrix)):
            raise FormatError("Embedding set contains non-finite values.")
        if any(not u for u in ids):
            raise FormatError("Utterance ids must be non-empty.")

        speakers = tuple(speaker_ids) if speaker_ids is not None else (None,) * len(ids)
        if len(speakers) != len(ids):
            raise DimensionMismatch(f"{len(ids)} utterance ids but {len(speakers)} speaker ids.")

        index: Dict[str, int] = {}
        for row, utt in enumerate(ids):
            if utt in index:
                raise FormatError(f"Duplicate utterance id '{utt}'.")
            index[utt] = row

        matrix.setflags(write=False)
        self._ids = ids
        self._speakers = speakers
        self._matrix = matrix
        self._index = index

    @classmethod
    def from_embeddings(cls, items: Iterable[Embedding], dim: Optional[int] = None) -> "EmbeddingSet":
        items = list(items)
        if not items:
            if dim is None:
                raise DimensionMismatch("Cannot infer the dimension of an empty embedding set.")
            return cls([], np.zeros((0, dim)), [], dim=dim)
        dims = {e.dim for e in items}
        if len(dims) != 1:
            raise DimensionMismatch(f"Embeddings have mixed dimensions: {sorted(dims)}.")
        return cls(
            [e.utterance_id for e in items],
            np.stack([e.vector for e in items]),
            [e.speaker_id for e in items],
            dim=dim,
        )

    @property
    def dim(self) -> int:
        return int(self._matrix.shape[1])

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    @property
    def utterance_ids(self) -> Tuple[str, ...]:
        return self._ids

    @property
    def speaker_ids(self) -> Tuple[Optional[str], ...]:
        return self._speakers

    @property
    def items(self) -> List[Embedding]:
        return list(self)

    @property
    def is_labeled(self) -> bool:
        return all(s is not None for s in self._speakers)

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self) -> Iterator[Embedding]:
        for row, utt in enumerate(self._ids):
            yield Embedding(utt, self._matrix[row], self._speakers[row])

    def __contains__(self, utterance_id: str) -> bool:
        return utterance_id in self._index

    def __eq__(self, other) -> bool:
        if not isinstance(other, EmbeddingSet):
            return NotImplemented
        return (
            self._ids == other._ids
            and self._speakers == other._speakers
            and self._matrix.shape == other._matrix.shape
            and np.array_equal(self._matrix, other._matrix)
        )

    def __repr__(self) -> str:
        return f"EmbeddingSet(n={len(self)}, dim={self.dim})"

    def row(self, utterance_id: str) -> int:
        try:
            return self._index[utterance_id]
        except KeyError:
            raise MissingUtterance(f"Utterance '{utterance_id}' is not in the embedding set.") from None

    def vector(self, utterance_id: str) -> np.ndarray:
        return self._matrix[self.row(utterance_id)]

    def speaker_of(self, utterance_id: str) -> Optional[str]:
        return self._speakers[self.row(utterance_id)]

    def rows(self, utterance_ids: Iterable[str]) -> np.ndarray:
        return np.array([self.row(u) for u in utterance_ids], dtype=np.intp)

    def subset(self, utterance_ids: Iterable[str]) -> "EmbeddingSet":
        """Select utterances by id, in the given order."""
        rows = self.rows(list(utterance_ids))
        return EmbeddingSet(
            [self._ids[r] for r in rows],
            self._matrix[rows],
            [self._speakers[r] for r in rows],
            dim=self.dim,
        )

    def with_matrix(self, matrix) -> "EmbeddingSet":
        """Same ids and speakers, new vectors (one row per utterance)."""
        return EmbeddingSet(self._ids, matrix, self._speakers)

    def without_speakers(self) -> "EmbeddingSet":
        return EmbeddingSet(self._ids, self._matrix, None)

    def speaker_groups(self) -> Dict[str, List[int]]:
        """Row indices per speaker, speakers in order of first appearance."""
        groups: Dict[str, List[int]] = {}
        for row, spk in enumerate(self._speakers):
            if spk is None:
                raise InsufficientData(f"Utterance '{self._ids[row]}' has no speaker id.")
            groups.setdefault(spk, []).append(row)
        return groups


def merge_sets(sets: Sequence[EmbeddingSet]) -> EmbeddingSet:
    """Concatenate embedding sets; utterance ids must stay unique."""
    if not sets:
        raise DimensionMismatch("Nothing to merge.")
    if len(sets) == 1:
        return sets[0]
    dims = {s.dim for s in sets}
    if len(dims) != 1:
        raise DimensionMismatch(f"Cannot merge embedding sets of dimensions {sorted(dims)}.")
    ids: List[str] = []
    speakers: List[Optional[str]] = []
    for s in sets:
        ids.extend(s.utterance_ids)
        speakers.extend(s.speaker_ids)
    return EmbeddingSet(ids, np.vstack([s.matrix for s in sets]), speakers)


@dataclass(frozen=True)
class Trial:
    """An enrollment/test pair, label is 'target', 'nontarget' or None."""
    enroll_utt: str
    test_utt: str
    label: Optional[str] = None

    def __post_init__(self):
        if not self.enroll_utt or not self.test_utt:
            raise FormatError("Trial utterance ids must be non-empty.")
        if self.label is not None and self.label not in LABELS:
            raise FormatError(f"Unknown trial label '{self.label}'; expected one of {LABELS}.")

    @property
    def key(self) -> Tuple[str, str]:
        return (self.enroll_utt, self.test_utt)


@dataclass(frozen=True)
class ScoreEntry:
    enroll_utt: str
    test_utt: str
    score: float
    label: Optional[str] = None

    @property
    def key(self) -> Tuple[str, str]:
        return (self.enroll_utt, self.test_utt)


class ScoreSet:
    """Scores for a list of trials, one entry per unique (enroll, test) pair."""

    def __init__(self, entries: Iterable[ScoreEntry]):
        entries = tuple(entries)
        seen = set()
        for entry in entries:
            if not math.isfinite(entry.score):
                raise FormatError(f"Non-finite score for trial {entry.key}.")
            if entry.label is not None and entry.label not in LABELS:
                raise FormatError(f"Unknown label '{entry.label}' for trial {entry.key}.")
            if entry.key in seen:
                raise FormatError(f"Duplicate trial {entry.key} in score set.")
            seen.add(entry.key)
        self._entries = entries

    @classmethod
    def from_trials(cls, trials: Sequence[Trial], scores) -> "ScoreSet":
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(trials),):
            raise DimensionMismatch(f"{len(trials)} trials but {scores.shape} scores.")
        return cls(
            ScoreEntry(t.enroll_utt, t.test_utt, float(s), t.label) for t, s in zip(trials, scores)
        )

    @property
    def entries(self) -> Tuple[ScoreEntry, ...]:
        return self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ScoreEntry]:
        return iter(self._entries)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ScoreSet):
            return NotImplemented
        return self._entries == other._entries

    @property
    def scores(self) -> np.ndarray:
        return np.array([e.score for e in self._entries], dtype=np.float64)

    @property
    def labels(self) -> List[Optional[str]]:
        return [e.label for e in self._entries]

    @property
    def trials(self) -> List[Trial]:
        return [Trial(e.enroll_utt, e.test_utt, e.label) for e in self._entries]

    @property
    def is_labeled(self) -> bool:
        return all(e.label is not None for e in self._entries)

    def as_dict(self) -> Dict[Tuple[str, str], float]:
        return {e.key: e.score for e in self._entries}

    def with_scores(self, scores) -> "ScoreSet":
        """Same trials and labels, replaced scores."""
        scores = np.asarray(scores, dtype=np.float64)
        if scores.shape != (len(self._entries),):
            raise DimensionMismatch(f"{len(self._entries)} entries but {scores.shape} scores.")
        return ScoreSet(
            ScoreEntry(e.enroll_utt, e.test_utt, float(s), e.label) for e, s in zip(self._entries, scores)
        )

    def with_labels(self, trials: Sequence[Trial]) -> "ScoreSet":
        """Attach labels from a trial list; every scored pair must be listed."""
        lookup = {t.key: t.label for t in trials}
        entries = []
        for e in self._entries:
            if e.key not in lookup:
                raise MissingUtterance(f"Trial {e.key} is not in the trial list.")
            entries.append(ScoreEntry(e.enroll_utt, e.test_utt, e.score, lookup[e.key]))
        return ScoreSet(entries)


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim != 1 or b.ndim != 1 or a.shape != b.shape:
        raise DimensionMismatch(f"Cannot compare vectors of shapes {a.shape} and {b.shape}.")
    if a.size == 0:
        raise DimensionMismatch("Vectors must have at least one component.")


def cosine_similarity(a, b) -> float:
    """
    Cosine of the angle between two vectors, clamped to [-1, 1].

    Raises:
        DimensionMismatch: If the vectors have different lengths
        ZeroVector: If either vector has zero norm
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ZeroVector("Cosine similarity is undefined for a zero vector.")
    value = float(np.dot(a, b)) / (norm_a * norm_b)
    return min(1.0, max(-1.0, value))


def length_normalize(embedding: Embedding) -> Embedding:
    """Scale an embedding to unit Euclidean norm, keeping its ids."""
    norm = float(np.linalg.norm(embedding.vector))
    if norm == 0.0:
        raise ZeroVector(f"Cannot length-normalize zero vector '{embedding.utterance_id}'.")
    return Embedding(embedding.utterance_id, embedding.vector / norm, embedding.speaker_id)


def length_normalize_set(embeddings: EmbeddingSet) -> EmbeddingSet:
    """Row-wise length normalization of a whole set."""
    norms = np.linalg.norm(embeddings.matrix, axis=1)
    if np.any(norms == 0.0):
        bad = embeddings.utterance_ids[int(np.argmin(norms))]
        raise ZeroVector(f"Cannot length-normalize zero vector '{bad}'.")
    return embeddings.with_matrix(embeddings.matrix / norms[:, None])
