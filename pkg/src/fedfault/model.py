"""Softmax-regression / one-hidden-layer MLP kernel with analytic gradients.

All parameters live in one flat float64 vector. Layout:

* ``hidden_dim == 0``: ``W (d x C)`` then ``b (C)``
* ``hidden_dim > 0``: ``W1 (d x h)``, ``b1 (h)``, ``W2 (h x C)``, ``b2 (C)``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_FLOOR = 1e-300
ACTIVATIONS = ("tanh", "relu")


class NonFiniteError(FloatingPointError):
    """Raised when an update produces NaN or Inf weights."""


@dataclass(frozen=True)
class ModelArch:
    input_dim: int
    num_classes: int
    hidden_dim: int = 0
    activation: str = "tanh"

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.hidden_dim < 0:
            raise ValueError(f"hidden_dim must be >= 0, got {self.hidden_dim}")

    @property
    def num_params(self) -> int:
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if h == 0:
            return d * c + c
        return d * h + h + h * c + c

    def layer_shapes(self) -> list[tuple[int, ...]]:
        d, c, h = self.input_dim, self.num_classes, self.hidden_dim
        if h == 0:
            return [(d, c), (c,)]
        return [(d, h), (h,), (h, c), (c,)]


def parameter_count(arch: ModelArch) -> int:
    return arch.num_params


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Flat, read-only weight vector bound to an architecture."""

    values: np.ndarray
    arch: ModelArch

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if values.size != self.arch.num_params:
            raise ValueError(
                f"expected {self.arch.num_params} values for {self.arch}, got {values.size}"
            )
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.arch == other.arch and np.array_equal(self.values, other.values)

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.values).all())

    def layers(self) -> list[np.ndarray]:
        return _unpack(self.values, self.arch)


@dataclass(frozen=True)
class Hyperparams:
    eta: float
    local_epochs: int = 1
    batch_size: int = 50

    def __post_init__(self) -> None:
        if not self.eta > 0:
            raise ValueError(f"eta must be > 0, got {self.eta}")
        if self.local_epochs < 1:
            raise ValueError(f"local_epochs must be >= 1, got {self.local_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def _unpack(values: np.ndarray, arch: ModelArch) -> list[np.ndarray]:
    out = []
    offset = 0
    for shape in arch.layer_shapes():
        size = shape[0] * shape[1] if len(shape) == 2 else shape[0]
        out.append(values[offset : offset + size].reshape(shape))
        offset += size
    return out


def init_params(arch: ModelArch, rng: np.random.Generator | int) -> ParamVector:
    """Xavier-uniform weights, zero biases."""
    rng = np.random.default_rng(rng)
    chunks = []
    for shape in arch.layer_shapes():
        if len(shape) == 2:
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            chunks.append(rng.uniform(-limit, limit, size=shape).ravel())
        else:
            chunks.append(np.zeros(shape))
    return ParamVector(np.concatenate(chunks), arch)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def _check_features(features: np.ndarray, arch: ModelArch) -> np.ndarray:
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(
            f"feature matrix must have shape (n, {arch.input_dim}), got {x.shape}"
        )
    return x


def forward(params: ParamVector, features: np.ndarray) -> np.ndarray:
    """Class-probability matrix, one row per example."""
    x = _check_features(features, params.arch)
    layers = params.layers()
    if params.arch.hidden_dim == 0:
        w, b = layers
        return softmax(x @ w + b)
    w1, b1, w2, b2 = layers
    return softmax(_activate(x @ w1 + b1, params.arch.activation) @ w2 + b2)


def _activate(pre: np.ndarray, activation: str) -> np.ndarray:
    if activation == "tanh":
        return np.tanh(pre)
    return np.maximum(pre, 0.0)


def predict(params: ParamVector, features: np.ndarray) -> np.ndarray:
    return forward(params, features).argmax(axis=1)


def class_weights_from_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Balanced weights ``N / (C_present * n_c)``; absent classes get 1."""
    counts = np.bincount(np.asarray(labels), minlength=num_classes).astype(np.float64)
    present = counts > 0
    weights = np.ones(num_classes)
    weights[present] = counts.sum() / (present.sum() * counts[present])
    return weights


def loss_and_grad(
    params: ParamVector,
    features: np.ndarray,
    labels: np.ndarray,
    class_weights: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Mean class-weighted cross-entropy and its exact gradient."""
    arch = params.arch
    x = _check_features(features, arch)
    y = np.asarray(labels)
    if y.ndim != 1 or y.size != x.shape[0] or y.size == 0:
        raise ValueError("labels must be a non-empty vector matching the feature rows")
    if y.min() < 0 or y.max() >= arch.num_classes:
        raise ValueError(f"label out of range [0, {arch.num_classes})")
    omega = None if class_weights is None else np.asarray(class_weights, dtype=np.float64)[y]
    return raw_loss_and_grad(params.values, arch, x, y, omega)


def raw_loss_and_grad(
    values: np.ndarray,
    arch: ModelArch,
    x: np.ndarray,
    y: np.ndarray,
    omega: np.ndarray | None,
) -> tuple[float, np.ndarray]:
    """Unchecked kernel behind :func:`loss_and_grad`; ``omega`` is per-example."""
    n = y.size
    rows = np.arange(n)
    layers = _unpack(values, arch)
    if arch.hidden_dim == 0:
        w, b = layers
        probs = softmax(x @ w + b)
    else:
        w1, b1, w2, b2 = layers
        pre = x @ w1 + b1
        hidden = _activate(pre, arch.activation)
        probs = softmax(hidden @ w2 + b2)

    log_p = np.log(np.maximum(probs[rows, y], LOG_FLOOR))
    if omega is None:
        loss = -float(log_p.sum()) / n
    else:
        loss = -float((omega * log_p).sum()) / n

    # d loss / d logits
    delta = probs
    delta[rows, y] -= 1.0
    if omega is None:
        delta /= n
    else:
        delta *= (omega / n)[:, None]

    if arch.hidden_dim == 0:
        return loss, np.concatenate([(x.T @ delta).ravel(), delta.sum(axis=0)])
    if arch.activation == "tanh":
        d_hidden = (delta @ w2.T) * (1.0 - hidden * hidden)
    else:
        d_hidden = (delta @ w2.T) * (pre > 0)
    return loss, np.concatenate(
        [(x.T @ d_hidden).ravel(), d_hidden.sum(axis=0), (hidden.T @ delta).ravel(), delta.sum(axis=0)]
    )


def sgd_step(params: ParamVector, grad: np.ndarray, eta: float) -> ParamVector:
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != params.values.shape:
        raise ValueError(f"gradient length {grad.size} != parameter length {len(params)}")
    with np.errstate(over="ignore", invalid="ignore"):
        values = params.values - eta * grad
    if not np.isfinite(values).all():
        raise NonFiniteError("SGD step produced non-finite weights")
    return ParamVector(values, params.arch)
