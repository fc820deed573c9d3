"""
Reconstruction Network Module

The fully connected network F that maps a low-quality embedding to an
estimate of its high-quality counterpart, and the Siamese pair loss it is
trained with:

    L = w_recon * (|F(x1_low) - x1_high|^2 + |F(x2_low) - x2_high|^2)
      + w_cos * (cos(F(x1_low), F(x2_low)) - delta)^2

delta is 1 for a same-speaker pair and 0 otherwise. Both branches share one
parameter set, so their gradients are summed into the same arrays.

Gradients are computed analytically by backpropagation over a batch; the
batch loss and gradient are means over pairs.
"""

from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple
import logging

import numpy as np

from .embeddings import MIN_NORM
from .errors import DimensionMismatch, FormatError, ZeroVector
from .file_io import PathOrStream, float_token, open_text, source_name, write_lines

_logger = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh")
MODEL_HEADER = "# svrnet v1"


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activation_grad(z: np.ndarray, a: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return (z > 0.0).astype(np.float64)
    return 1.0 - a * a


@dataclass(frozen=True, eq=False)
class MlpParameters:
    """
    Weights and biases of the reconstruction network.

    Layer k computes z = W_k @ a + b_k; every layer but the last is
    followed by the activation, the last one is linear.

    Attributes:
        weights: One (out, in) matrix per layer
        biases: One (out,) vector per layer
        activation: 'relu' or 'tanh'
    """
    weights: Tuple[np.ndarray, ...]
    biases: Tuple[np.ndarray, ...]
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation '{self.activation}', expected one of {ACTIVATIONS}.")
        weights = tuple(np.array(w, dtype=np.float64) for w in self.weights)
        biases = tuple(np.array(b, dtype=np.float64) for b in self.biases)
        if not weights or len(weights) != len(biases):
            raise DimensionMismatch(f"{len(weights)} weight matrices but {len(biases)} bias vectors.")
        for k, (w, b) in enumerate(zip(weights, biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionMismatch(f"Layer {k}: weight {w.shape} and bias {b.shape} do not fit.")
            if k > 0 and w.shape[1] != weights[k - 1].shape[0]:
                raise DimensionMismatch(
                    f"Layer {k} expects {w.shape[1]} inputs but layer {k - 1} has {weights[k - 1].shape[0]} outputs."
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise FormatError(f"Layer {k} has non-finite parameters.")
            w.setflags(write=False)
            b.setflags(write=False)
        if weights[0].shape[1] != weights[-1].shape[0]:
            raise DimensionMismatch(
                f"Input dimension {weights[0].shape[1]} differs from output dimension {weights[-1].shape[0]}."
            )
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)

    @property
    def dim(self) -> int:
        return int(self.weights[0].shape[1])

    @property
    def layer_dims(self) -> List[int]:
        return [self.dim] + [int(w.shape[0]) for w in self.weights]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def size(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        """All parameters as one vector, layer by layer, weight then bias."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def unflatten(self, flat: np.ndarray) -> "MlpParameters":
        """Parameters shaped like self from a flat vector."""
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise DimensionMismatch(f"Expected {self.size} parameters, got {flat.shape}.")
        weights, biases = [], []
        offset = 0
        for w, b in zip(self.weights, self.biases):
            weights.append(flat[offset:offset + w.size].reshape(w.shape))
            offset += w.size
            biases.append(flat[offset:offset + b.size])
            offset += b.size
        return MlpParameters(tuple(weights), tuple(biases), self.activation)

    def allclose(self, other: "MlpParameters", atol: float = 0.0, rtol: float = 0.0) -> bool:
        return (
            self.activation == other.activation
            and self.layer_dims == other.layer_dims
            and np.allclose(self.flatten(), other.flatten(), atol=atol, rtol=rtol)
        )

    def __eq__(self, other) -> bool:
        if not isinstance(other, MlpParameters):
            return NotImplemented
        return (
            self.activation == other.activation
            and self.layer_dims == other.layer_dims
            and np.array_equal(self.flatten(), other.flatten())
        )


def init_parameters(
    dim: int,
    hidden_dims: Sequence[int] = (512, 512),
    activation: str = "relu",
    rng: Optional[np.random.Generator] = None,
) -> MlpParameters:
    """
    Glorot-uniform weights, zero biases, for a dim -> hidden... -> dim network.

    Args:
        dim: Embedding dimension (input and output width)
        hidden_dims: Hidden layer widths
        activation: 'relu' or 'tanh'
        rng: Random generator; a fresh unseeded one when None
    """
    rng = rng if rng is not None else np.random.default_rng()
    dims = [dim] + list(hidden_dims) + [dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParameters(tuple(weights), tuple(biases), activation)


def identity_parameters(dim: int) -> MlpParameters:
    """Single linear layer W = I, b = 0."""
    return MlpParameters((np.eye(dim),), (np.zeros(dim),), "relu")


def _check_input(params: MlpParameters, x: np.ndarray) -> None:
    if x.shape[-1] != params.dim:
        raise DimensionMismatch(f"Network expects dimension {params.dim}, got {x.shape[-1]}.")


def _forward_cache(params: MlpParameters, x: np.ndarray):
    """Forward pass over rows of x, keeping layer inputs and pre-activations."""
    inputs, pre = [], []
    a = x
    last = params.n_layers - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(a)
        z = a @ w.T + b
        pre.append(z)
        a = z if k == last else _activate(z, params.activation)
    return a, inputs, pre


def mlp_forward(params: MlpParameters, x) -> np.ndarray:
    """
    Apply the network to one vector (shape (d,)) or to rows of a matrix.

    Raises:
        DimensionMismatch: If the input width differs from the network's
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, x)
    single = x.ndim == 1
    out, _, _ = _forward_cache(params, np.atleast_2d(x))
    return out[0] if single else out


def _backward(params: MlpParameters, d_out: np.ndarray, inputs, pre) -> Tuple[List[np.ndarray], List[np.ndarray]]:
    grads_w: List[np.ndarray] = [None] * params.n_layers
    grads_b: List[np.ndarray] = [None] * params.n_layers
    delta = d_out
    for k in reversed(range(params.n_layers)):
        if k < params.n_layers - 1:
            a = inputs[k + 1]
            delta = delta * _activation_grad(pre[k], a, params.activation)
        grads_w[k] = delta.T @ inputs[k]
        grads_b[k] = delta.sum(axis=0)
        if k > 0:
            delta = delta @ params.weights[k]
    return grads_w, grads_b


@dataclass(frozen=True, eq=False)
class PairSample:
    """
    Two (low, high) embedding pairs and whether their speakers match.
    """
    x1_low: np.ndarray
    x1_high: np.ndarray
    x2_low: np.ndarray
    x2_high: np.ndarray
    same_speaker: bool

    def __post_init__(self):
        vectors = [np.array(v, dtype=np.float64) for v in (self.x1_low, self.x1_high, self.x2_low, self.x2_high)]
        dims = {v.shape for v in vectors}
        if len(dims) != 1 or vectors[0].ndim != 1:
            raise DimensionMismatch(f"Pair sample vectors have mismatched shapes: {sorted(dims)}.")
        for name, v in zip(("x1_low", "x1_high", "x2_low", "x2_high"), vectors):
            if not np.all(np.isfinite(v)):
                raise FormatError(f"Pair sample {name} has non-finite values.")
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        object.__setattr__(self, "same_speaker", bool(self.same_speaker))

    @property
    def dim(self) -> int:
        return int(self.x1_low.shape[0])

    def swapped(self) -> "PairSample":
        return PairSample(self.x2_low, self.x2_high, self.x1_low, self.x1_high, self.same_speaker)


@dataclass(frozen=True, eq=False)
class PairBatch:
    """Stacked pair samples, one row per pair."""
    x1_low: np.ndarray
    x1_high: np.ndarray
    x2_low: np.ndarray
    x2_high: np.ndarray
    same_speaker: np.ndarray

    def __len__(self) -> int:
        return int(self.x1_low.shape[0])

    @classmethod
    def stack(cls, samples: Sequence[PairSample]) -> "PairBatch":
        if not samples:
            raise ValueError("Cannot stack an empty list of pair samples.")
        return cls(
            np.stack([s.x1_low for s in samples]),
            np.stack([s.x1_high for s in samples]),
            np.stack([s.x2_low for s in samples]),
            np.stack([s.x2_high for s in samples]),
            np.array([s.same_speaker for s in samples], dtype=bool),
        )

    def samples(self) -> List[PairSample]:
        return [
            PairSample(self.x1_low[i], self.x1_high[i], self.x2_low[i], self.x2_high[i], bool(self.same_speaker[i]))
            for i in range(len(self))
        ]


class LossTerms(NamedTuple):
    recon1: float
    recon2: float
    cos_term: float


class PairLoss(NamedTuple):
    loss: float
    terms: LossTerms


def _as_batch(sample) -> PairBatch:
    if isinstance(sample, PairBatch):
        return sample
    if isinstance(sample, PairSample):
        return PairBatch.stack([sample])
    return PairBatch.stack(list(sample))


def _loss_parts(params: MlpParameters, batch: PairBatch, weights: Tuple[float, float]):
    """Per-pair residuals, cosines and everything backprop needs."""
    for x in (batch.x1_low, batch.x1_high, batch.x2_low, batch.x2_high):
        _check_input(params, x)
    w_recon, w_cos = weights
    n = len(batch)
    # both branches in one pass: rows [0, n) are branch 1, [n, 2n) branch 2
    out, inputs, pre = _forward_cache(params, np.vstack([batch.x1_low, batch.x2_low]))
    y1, y2 = out[:n], out[n:]
    r1 = y1 - batch.x1_high
    r2 = y2 - batch.x2_high
    norm1 = np.linalg.norm(y1, axis=1)
    norm2 = np.linalg.norm(y2, axis=1)
    if np.any(norm1 < MIN_NORM) or np.any(norm2 < MIN_NORM):
        raise ZeroVector("A reconstructed embedding has zero norm; the cosine term is undefined.")
    raw_cos = np.einsum("ij,ij->i", y1, y2) / (norm1 * norm2)
    cos = np.clip(raw_cos, -1.0, 1.0)
    delta = batch.same_speaker.astype(np.float64)
    recon1 = np.einsum("ij,ij->i", r1, r1)
    recon2 = np.einsum("ij,ij->i", r2, r2)
    cos_term = (cos - delta) ** 2
    losses = w_recon * (recon1 + recon2) + w_cos * cos_term
    return {
        "losses": losses, "recon1": recon1, "recon2": recon2, "cos_term": cos_term,
        "y1": y1, "y2": y2, "r1": r1, "r2": r2, "norm1": norm1, "norm2": norm2,
        "cos": raw_cos, "delta": delta, "inputs": inputs, "pre": pre,
    }


def svr_pair_loss(params: MlpParameters, sample: PairSample, weights: Tuple[float, float] = (1.0, 1.0)) -> PairLoss:
    """
    Siamese reconstruction loss of one pair sample.

    Returns:
        PairLoss(loss, LossTerms(recon1, recon2, cos_term)); the terms are
        unweighted, loss = w_recon*(recon1+recon2) + w_cos*cos_term

    Raises:
        DimensionMismatch: If sample and network dimensions differ
        ZeroVector: If a reconstructed output has norm below 1e-30
    """
    parts = _loss_parts(params, _as_batch(sample), weights)
    return PairLoss(
        float(parts["losses"][0]),
        LossTerms(float(parts["recon1"][0]), float(parts["recon2"][0]), float(parts["cos_term"][0])),
    )


def batch_loss(params: MlpParameters, batch, weights: Tuple[float, float] = (1.0, 1.0)) -> float:
    """Mean pair loss over a batch."""
    parts = _loss_parts(params, _as_batch(batch), weights)
    return float(np.mean(parts["losses"]))


def batch_loss_and_grad(
    params: MlpParameters, batch, weights: Tuple[float, float] = (1.0, 1.0)
) -> Tuple[float, MlpParameters]:
    """
    Mean pair loss over a batch and its exact gradient.

    The gradient is returned as an MlpParameters with the same shapes as
    `params`.
    """
    batch = _as_batch(batch)
    w_recon, w_cos = weights
    parts = _loss_parts(params, batch, weights)
    n = len(batch)
    y1, y2 = parts["y1"], parts["y2"]
    n1 = parts["norm1"][:, None]
    n2 = parts["norm2"][:, None]
    c = parts["cos"][:, None]
    coef = 2.0 * w_cos * (c - parts["delta"][:, None])

    # d cos / d y1 = y2/(|y1||y2|) - cos * y1/|y1|^2, symmetric for y2
    d_y1 = 2.0 * w_recon * parts["r1"] + coef * (y2 / (n1 * n2) - c * y1 / (n1 * n1))
    d_y2 = 2.0 * w_recon * parts["r2"] + coef * (y1 / (n1 * n2) - c * y2 / (n2 * n2))
    d_out = np.vstack([d_y1, d_y2]) / n

    grads_w, grads_b = _backward(params, d_out, parts["inputs"], parts["pre"])
    grad = MlpParameters(tuple(grads_w), tuple(grads_b), params.activation)
    return float(np.mean(parts["losses"])), grad


def svr_pair_grad(params: MlpParameters, sample: PairSample, weights: Tuple[float, float] = (1.0, 1.0)) -> MlpParameters:
    """Exact gradient of svr_pair_loss with respect to every weight and bias."""
    return batch_loss_and_grad(params, _as_batch(sample), weights)[1]


# ---------------------------------------------------------------------------
# Model file
# ---------------------------------------------------------------------------

def save_model(params: MlpParameters, sink: PathOrStream) -> None:
    """
    Write a text model file that round-trips bit-exactly.

    Layout: header, `activation <name>`, `dims <d0> <d1> ... <dL>`, then per
    layer one `W` line per row (row-major) and one `b` line.
    """
    lines = [
        f"{MODEL_HEADER}\n",
        f"activation {params.activation}\n",
        "dims " + " ".join(str(d) for d in params.layer_dims) + "\n",
    ]
    for w, b in zip(params.weights, params.biases):
        for row in w:
            lines.append("W " + " ".join(float_token(v) for v in row) + "\n")
        lines.append("b " + " ".join(float_token(v) for v in b) + "\n")
    write_lines(lines, sink)
    _logger.info("Saved network with layer dims %s", params.layer_dims)


def load_model(source: PathOrStream) -> MlpParameters:
    """Read a model file written by save_model."""
    name = source_name(source)
    with open_text(source) as fh:
        lines = [line.rstrip("\n") for line in fh if line.strip()]
    if not lines or lines[0] != MODEL_HEADER:
        raise FormatError(f"{name}: not a svrnet model file (expected header '{MODEL_HEADER}').")
    try:
        tag, activation = lines[1].split()
        dims_fields = lines[2].split()
        if tag != "activation" or dims_fields[0] != "dims":
            raise ValueError
        dims = [int(d) for d in dims_fields[1:]]
    except (ValueError, IndexError):
        raise FormatError(f"{name}: malformed activation/dims lines.") from None

    weights, biases = [], []
    cursor = 3
    try:
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            rows = []
            for _ in range(fan_out):
                fields = lines[cursor].split()
                cursor += 1
                if fields[0] != "W" or len(fields) != fan_in + 1:
                    raise ValueError
                rows.append([float(v) for v in fields[1:]])
            fields = lines[cursor].split()
            cursor += 1
            if fields[0] != "b" or len(fields) != fan_out + 1:
                raise ValueError
            weights.append(np.array(rows).reshape(fan_out, fan_in))
            biases.append(np.array([float(v) for v in fields[1:]]))
    except (ValueError, IndexError):
        raise FormatError(f"{name}: malformed layer block near line {cursor + 1}.") from None
    if cursor != len(lines):
        raise FormatError(f"{name}: trailing content after the last layer.")
    try:
        return MlpParameters(tuple(weights), tuple(biases), activation)
    except (ValueError, DimensionMismatch) as e:
        raise FormatError(f"{name}: {e}") from None
