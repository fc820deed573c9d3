"""
File I/O Module

Readers and writers for the plain-text artifacts exchanged between
svrbench commands:

- EVEC embedding files: `# evec v1 dim=<d>` header, then one
  `<utterance_id> <speaker_id|-> <v1> ... <vd>` line per utterance
- TRIALS files: `<enroll_utt> <test_utt>[ <target|nontarget>]`
- SCORES files: `<enroll_utt> <test_utt> <score>[ <label>]`

Every writer goes through `atomic_write`, so a crashed run never leaves a
half-written file behind.
"""

from contextlib import contextmanager
from typing import IO, Iterator, List, Optional, Sequence, TextIO, Union
import io
import logging
import math
import os
import re
import tempfile

import numpy as np

from .embeddings import LABELS, EmbeddingSet, ScoreEntry, ScoreSet, Trial
from .errors import FormatError

_logger = logging.getLogger(__name__)

PathOrStream = Union[str, os.PathLike, TextIO]

EVEC_HEADER = re.compile(r"^# evec v1 dim=(\d+)$")
UNKNOWN_SPEAKER = "-"


def format_float(value: float) -> str:
    """17 significant digits, enough to round-trip any float64."""
    return format(float(value), ".17g")


def float_token(value: float) -> str:
    # repr is the shortest string that parses back to the same float64
    return repr(float(value))


@contextmanager
def atomic_write(path: Union[str, os.PathLike], binary: bool = False) -> Iterator[IO]:
    """
    Open a temporary file next to `path` and move it into place on success.

    The temporary file is removed if the block raises.
    """
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        mode = "wb" if binary else "w"
        kwargs = {} if binary else {"encoding": "utf-8", "newline": "\n"}
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp_path, path)
        _logger.debug("Wrote %s", path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


@contextmanager
def open_text(source: PathOrStream) -> Iterator[TextIO]:
    if isinstance(source, (str, os.PathLike)):
        path = os.fspath(source)
        if not os.path.exists(path):
            raise FileNotFoundError(f"Input file not found at '{path}'.")
        try:
            with open(path, "r", encoding="utf-8") as fh:
                yield fh
        except UnicodeDecodeError as e:
            raise FormatError(f"{path}: not valid UTF-8 text (byte {e.start}).") from e
    elif isinstance(source, (bytes, bytearray)):
        try:
            text = source.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(f"<bytes>: not valid UTF-8 text (byte {e.start}).") from e
        yield io.StringIO(text)
    elif isinstance(source, (io.BufferedIOBase, io.RawIOBase)):
        wrapper = io.TextIOWrapper(source, encoding="utf-8")
        try:
            yield wrapper
        except UnicodeDecodeError as e:
            raise FormatError(f"{source_name(source)}: not valid UTF-8 text (byte {e.start}).") from e
        finally:
            wrapper.detach()
    else:
        yield source


def source_name(source) -> str:
    if isinstance(source, (str, os.PathLike)):
        return os.fspath(source)
    return getattr(source, "name", "<stream>")


def _parse_float(token: str, where: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise FormatError(f"{where}: '{token}' is not a number.") from None
    if not math.isfinite(value):
        raise FormatError(f"{where}: non-finite value '{token}'.")
    return value


# ---------------------------------------------------------------------------
# EVEC
# ---------------------------------------------------------------------------

def load_embeddings(source: PathOrStream) -> EmbeddingSet:
    """
    Read an EVEC embedding file.

    Args:
        source: Path, text stream or UTF-8 bytes

    Returns:
        EmbeddingSet with the header dimension, rows in file order

    Raises:
        FormatError: Bad header, wrong field count, non-numeric value,
            duplicate utterance id or dimension mismatch
    """
    name = source_name(source)
    with open_text(source) as fh:
        header = fh.readline().rstrip("\n")
        match = EVEC_HEADER.match(header)
        if not match:
            raise FormatError(f"{name}: expected header '# evec v1 dim=<d>', got '{header}'.")
        dim = int(match.group(1))
        if dim < 1:
            raise FormatError(f"{name}: dimension must be positive.")

        ids: List[str] = []
        speakers: List[Optional[str]] = []
        rows: List[List[float]] = []
        seen = set()
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split()
            where = f"{name}:{lineno}"
            if len(fields) != dim + 2:
                raise FormatError(f"{where}: expected {dim + 2} fields, got {len(fields)}.")
            utt, spk = fields[0], fields[1]
            if utt in seen:
                raise FormatError(f"{where}: duplicate utterance id '{utt}'.")
            seen.add(utt)
            ids.append(utt)
            speakers.append(None if spk == UNKNOWN_SPEAKER else spk)
            rows.append([_parse_float(tok, where) for tok in fields[2:]])

    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    _logger.info("Loaded %d embeddings (dim=%d) from %s", len(ids), dim, name)
    return EmbeddingSet(ids, matrix, speakers, dim=dim)


def save_embeddings(embeddings: EmbeddingSet, sink: PathOrStream) -> None:
    """Write an EVEC file; values use the shortest round-tripping repr."""
    lines = [f"# evec v1 dim={embeddings.dim}\n"]
    for utt, spk, vector in zip(embeddings.utterance_ids, embeddings.speaker_ids, embeddings.matrix):
        values = " ".join(float_token(v) for v in vector)
        lines.append(f"{utt} {spk if spk is not None else UNKNOWN_SPEAKER} {values}\n")
    write_lines(lines, sink)


# ---------------------------------------------------------------------------
# TRIALS
# ---------------------------------------------------------------------------

def _parse_label(token: str, where: str) -> str:
    if token not in LABELS:
        raise FormatError(f"{where}: unknown label '{token}', expected 'target' or 'nontarget'.")
    return token


def load_trials(source: PathOrStream) -> List[Trial]:
    """Read a TRIALS file, keeping file order."""
    name = source_name(source)
    trials: List[Trial] = []
    with open_text(source) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            where = f"{name}:{lineno}"
            if len(fields) == 2:
                trials.append(Trial(fields[0], fields[1]))
            elif len(fields) == 3:
                trials.append(Trial(fields[0], fields[1], _parse_label(fields[2], where)))
            else:
                raise FormatError(f"{where}: expected 2 or 3 fields, got {len(fields)}.")
    _logger.info("Loaded %d trials from %s", len(trials), name)
    return trials


def save_trials(trials: Sequence[Trial], sink: PathOrStream) -> None:
    lines = []
    for t in trials:
        suffix = f" {t.label}" if t.label is not None else ""
        lines.append(f"{t.enroll_utt} {t.test_utt}{suffix}\n")
    write_lines(lines, sink)


# ---------------------------------------------------------------------------
# SCORES
# ---------------------------------------------------------------------------

def save_scores(scores: ScoreSet, sink: PathOrStream) -> None:
    """Write a SCORES file, scores to 17 significant digits, labels when known."""
    lines = []
    for e in scores:
        suffix = f" {e.label}" if e.label is not None else ""
        lines.append(f"{e.enroll_utt} {e.test_utt} {format_float(e.score)}{suffix}\n")
    write_lines(lines, sink)


def load_scores(source: PathOrStream) -> ScoreSet:
    name = source_name(source)
    entries: List[ScoreEntry] = []
    with open_text(source) as fh:
        for lineno, line in enumerate(fh, start=1):
            fields = line.split()
            if not fields:
                continue
            where = f"{name}:{lineno}"
            if len(fields) not in (3, 4):
                raise FormatError(f"{where}: expected 3 or 4 fields, got {len(fields)}.")
            label = _parse_label(fields[3], where) if len(fields) == 4 else None
            entries.append(ScoreEntry(fields[0], fields[1], _parse_float(fields[2], where), label))
    try:
        return ScoreSet(entries)
    except FormatError as e:
        raise FormatError(f"{name}: {e}") from None


def write_lines(lines: Sequence[str], sink: PathOrStream) -> None:
    if isinstance(sink, (str, os.PathLike)):
        with atomic_write(sink) as fh:
            fh.writelines(lines)
    else:
        sink.writelines(lines)


def write_text(path: Union[str, os.PathLike], text: str) -> None:
    with atomic_write(path) as fh:
        fh.write(text)
