"""Small feed-forward classifiers with hand-written reverse-mode gradients.

Weights are stored as ``(fan_out, fan_in)`` matrices so a layer computes
``z = a @ W.T + b``. Softmax is applied only at evaluation time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointError, CheckpointVersionError, ConfigError, NumericError, ShapeError

CHECKPOINT_VERSION = 1
PROB_FLOOR = 1e-12
ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class Gradient:
    """Parameter-shaped container for derivatives (or any parameter delta)."""

    weights: tuple
    biases: tuple

    def flat(self) -> np.ndarray:
        return _flatten(self.weights, self.biases)

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(w * w) for w in self.weights) + sum(np.sum(b * b) for b in self.biases)))

    def scale(self, factor: float) -> "Gradient":
        return Gradient(tuple(w * factor for w in self.weights), tuple(b * factor for b in self.biases))

    def __add__(self, other: "Gradient") -> "Gradient":
        return Gradient(
            tuple(a + b for a, b in zip(self.weights, other.weights)),
            tuple(a + b for a, b in zip(self.biases, other.biases)),
        )

    def __sub__(self, other: "Gradient") -> "Gradient":
        return Gradient(
            tuple(a - b for a, b in zip(self.weights, other.weights)),
            tuple(a - b for a, b in zip(self.biases, other.biases)),
        )

    @classmethod
    def zeros_like(cls, model: "MlpModel") -> "Gradient":
        return cls(tuple(np.zeros_like(w) for w in model.weights), tuple(np.zeros_like(b) for b in model.biases))


@dataclass(frozen=True)
class MlpModel:
    """Parameters of a fully connected classifier ``d -> h1 -> ... -> K``."""

    weights: tuple
    biases: tuple
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("weights and biases must be non-empty and of equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} incompatible with bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i}: expects {w.shape[1]} inputs, previous layer gives {self.weights[i - 1].shape[0]}")

    @property
    def layer_dims(self) -> tuple:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def flat(self) -> np.ndarray:
        return _flatten(self.weights, self.biases)

    def with_flat(self, vector: np.ndarray) -> "MlpModel":
        weights, biases = _unflatten(vector, self.weights, self.biases)
        return MlpModel(weights, biases, self.activation)

    def with_params(self, weights, biases) -> "MlpModel":
        return MlpModel(tuple(weights), tuple(biases), self.activation)

    def apply(self, delta: Gradient, step: float = 1.0) -> "MlpModel":
        """Return ``params + step * delta``."""
        return MlpModel(
            tuple(w + step * d for w, d in zip(self.weights, delta.weights)),
            tuple(b + step * d for b, d in zip(self.biases, delta.biases)),
            self.activation,
        )

    def same_params(self, other: "MlpModel") -> bool:
        """Bitwise equality of every parameter array."""
        return (
            self.activation == other.activation
            and len(self.weights) == len(other.weights)
            and all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.weights, other.weights))
            and all(a.shape == b.shape and a.tobytes() == b.tobytes() for a, b in zip(self.biases, other.biases))
        )


def _flatten(weights, biases) -> np.ndarray:
    parts = []
    for w, b in zip(weights, biases):
        parts.append(w.ravel())
        parts.append(b.ravel())
    return np.concatenate(parts)


def _unflatten(vector, weights, biases):
    vector = np.asarray(vector, dtype=np.float64)
    new_w, new_b, pos = [], [], 0
    for w, b in zip(weights, biases):
        new_w.append(vector[pos:pos + w.size].reshape(w.shape).copy())
        pos += w.size
        new_b.append(vector[pos:pos + b.size].copy())
        pos += b.size
    if pos != vector.size:
        raise ShapeError(f"flat vector has {vector.size} entries, model needs {pos}")
    return tuple(new_w), tuple(new_b)


def init_params(layer_dims: Sequence[int], activation: str = "relu", seed: int = 0) -> MlpModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and zero biases."""
    dims = list(layer_dims)
    if len(dims) < 2 or any(int(d) < 1 for d in dims):
        raise ConfigError(f"layer_dims needs at least two positive entries, got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpModel(tuple(weights), tuple(biases), activation)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def _act_grad(name, z, a):
    return (z > 0).astype(z.dtype) if name == "relu" else 1.0 - a * a


def _as_batch(model: MlpModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.layer_dims[0]:
        raise ShapeError(f"inputs of shape {np.shape(inputs)} do not match input width {model.layer_dims[0]}")
    return x


def _forward_cache(model: MlpModel, x: np.ndarray):
    pre, post = [], [x]
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w.T + b
        if not np.all(np.isfinite(z)):
            raise NumericError(f"non-finite pre-activation in layer {i}")
        pre.append(z)
        a = z if i == last else _act(model.activation, z)
        post.append(a)
    return pre, post


def forward(model: MlpModel, inputs) -> tuple:
    """Return ``(logits, probabilities)`` for a batch (or single row)."""
    x = _as_batch(model, inputs)
    _, post = _forward_cache(model, x)
    logits = post[-1]
    return logits, softmax(logits)


def predict(model: MlpModel, inputs) -> np.ndarray:
    """Argmax labels; ties go to the lowest class index."""
    logits, _ = forward(model, inputs)
    return np.argmax(logits, axis=1)


def hidden_features(model: MlpModel, inputs) -> np.ndarray:
    """Activations feeding the output layer."""
    x = _as_batch(model, inputs)
    _, post = _forward_cache(model, x)
    return post[-2]


def cross_entropy(probabilities, labels) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    picked = p[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(picked, PROB_FLOOR))))


def _check_labels(model: MlpModel, labels, m: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape != (m,):
        raise ShapeError(f"expected {m} labels, got shape {y.shape}")
    if np.any(y < 0) or np.any(y >= model.num_classes):
        raise ShapeError(f"labels must lie in [0, {model.num_classes})")
    return y


def backward(model: MlpModel, inputs, dlogits: np.ndarray) -> tuple:
    """Back-propagate ``dL/dlogits`` (m x K) through the network.

    Returns ``(Gradient, dL/dinputs)`` where the parameter gradient sums the
    per-row contributions.
    """
    x = _as_batch(model, inputs)
    pre, post = _forward_cache(model, x)
    return _backward(model, pre, post, np.asarray(dlogits, dtype=np.float64))


def _backward(model, pre, post, delta):
    n_layers = len(model.weights)
    gw, gb = [None] * n_layers, [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gw[i] = delta.T @ post[i]
        gb[i] = delta.sum(axis=0)
        delta = delta @ model.weights[i]
        if i > 0:
            delta = delta * _act_grad(model.activation, pre[i - 1], post[i])
        if not np.all(np.isfinite(delta)):
            raise NumericError(f"non-finite gradient in layer {i}")
    return Gradient(tuple(gw), tuple(gb)), delta


def loss_and_dlogits(model: MlpModel, x: np.ndarray, labels) -> tuple:
    """Mean cross-entropy plus its derivative w.r.t. the logits, from a cache."""
    pre, post = _forward_cache(model, x)
    y = _check_labels(model, labels, x.shape[0])
    p = softmax(post[-1])
    loss = cross_entropy(p, y)
    d = p.copy()
    d[np.arange(len(y)), y] -= 1.0
    d /= len(y)
    return loss, d, pre, post


def grad_params(model: MlpModel, inputs, labels) -> tuple:
    """Mean cross-entropy over the batch and its parameter gradient."""
    x = _as_batch(model, inputs)
    loss, d, pre, post = loss_and_dlogits(model, x, labels)
    grad, _ = _backward(model, pre, post, d)
    return loss, grad


def grad_input(model: MlpModel, x, y) -> np.ndarray:
    """Gradient of the single-sample cross-entropy w.r.t. the input.

    Accepts one sample (``x`` 1-D) or a batch, in which case row ``i`` is the
    gradient of sample ``i``'s own loss.
    """
    single = np.ndim(x) == 1
    xb = _as_batch(model, x)
    _, d, pre, post = loss_and_dlogits(model, xb, np.atleast_1d(y))
    _, dx = _backward(model, pre, post, d * xb.shape[0])
    return dx[0] if single else dx


def per_sample_grads(model: MlpModel, inputs, dlogits: np.ndarray) -> np.ndarray:
    """Flattened parameter gradient for every row separately, shape (m, P)."""
    x = _as_batch(model, inputs)
    pre, post = _forward_cache(model, x)
    delta = np.asarray(dlogits, dtype=np.float64)
    m = x.shape[0]
    blocks = []
    for i in range(len(model.weights) - 1, -1, -1):
        gw = np.einsum("mo,mi->moi", delta, post[i]).reshape(m, -1)
        blocks.append((gw, delta.copy()))
        delta = delta @ model.weights[i]
        if i > 0:
            delta = delta * _act_grad(model.activation, pre[i - 1], post[i])
    parts = []
    for gw, gb in reversed(blocks):
        parts.extend([gw, gb])
    return np.concatenate(parts, axis=1)


def logit_jacobian(model: MlpModel, inputs) -> np.ndarray:
    """Jacobian of the logits w.r.t. flat parameters, rows ordered (sample, class)."""
    x = _as_batch(model, inputs)
    m, k = x.shape[0], model.num_classes
    jac = np.empty((m, k, model.n_params))
    for c in range(k):
        onehot = np.zeros((m, k))
        onehot[:, c] = 1.0
        jac[:, c, :] = per_sample_grads(model, x, onehot)
    return jac.reshape(m * k, -1)


def _fmt(values) -> list:
    return [format(float(v), ".17g") for v in np.ravel(values)]


def checkpoint_save(model: MlpModel, path) -> None:
    lines = [
        "{",
        f'  "version": {CHECKPOINT_VERSION},',
        f'  "layer_dims": {json.dumps(list(model.layer_dims))},',
        f'  "activation": "{model.activation}",',
        '  "layers": [',
    ]
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        sep = "," if i < len(model.weights) - 1 else ""
        lines.append(f'    {{"weights": [{", ".join(_fmt(w))}],')
        lines.append(f'     "biases": [{", ".join(_fmt(b))}]}}{sep}')
    lines += ["  ]", "}", ""]
    Path(path).write_text("\n".join(lines))


def checkpoint_load(path) -> MlpModel:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint document ({exc})") from exc
    if not isinstance(doc, dict):
        raise CheckpointError(f"{path}: top level must be an object")
    for field in ("version", "layer_dims", "activation", "layers"):
        if field not in doc:
            raise CheckpointError(f"{path}: missing field '{field}'")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: version {doc['version']} unsupported (expected {CHECKPOINT_VERSION})")
    dims = doc["layer_dims"]
    if not isinstance(dims, list) or len(dims) < 2 or len(doc["layers"]) != len(dims) - 1:
        raise CheckpointError(f"{path}: field 'layer_dims' inconsistent with 'layers'")
    weights, biases = [], []
    for i, (layer, fan_in, fan_out) in enumerate(zip(doc["layers"], dims[:-1], dims[1:])):
        try:
            w = np.array(layer["weights"], dtype=np.float64)
            b = np.array(layer["biases"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"{path}: field 'layers[{i}]' malformed ({exc})") from exc
        if w.size != fan_in * fan_out:
            raise CheckpointError(f"{path}: field 'layers[{i}].weights' has {w.size} values, expected {fan_in * fan_out}")
        if b.size != fan_out:
            raise CheckpointError(f"{path}: field 'layers[{i}].biases' has {b.size} values, expected {fan_out}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise CheckpointError(f"{path}: field 'layers[{i}]' contains non-finite values")
        weights.append(w.reshape(fan_out, fan_in))
        biases.append(b)
    try:
        return MlpModel(tuple(weights), tuple(biases), doc["activation"])
    except ConfigError as exc:
        raise CheckpointError(f"{path}: field 'activation' invalid ({exc})") from exc
