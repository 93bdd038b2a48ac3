"""Dense math primitives with hand-written backward rules.

The model graph is small and fixed, so there is no autodiff tape: each
operation returns a forward value plus whatever the caller needs to apply
its backward rule, and gradients are accumulated into named parameter
buffers. A "Tensor2" in the interface sense is a 2-D C-contiguous float64
ndarray (rows/cols = shape, data = ravel). All math is 64-bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "SELU_LAMBDA",
    "SELU_ALPHA",
    "TrainConfig",
    "ParameterStore",
    "selu",
    "selu_backward",
    "softplus",
    "sigmoid",
    "leaky_relu",
    "relu",
    "linear",
    "linear_backward",
    "softmax_cross_entropy",
    "batch_softmax_cross_entropy",
    "dropout_mask",
    "glorot",
    "sgd_momentum_step",
    "grad_check",
]

SELU_LAMBDA = 1.0507009873554805
SELU_ALPHA = 1.6732632423543772


@dataclass
class TrainConfig:
    """Hyperparameters; defaults are the single listed values of the protocol."""

    learning_rate: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 0.0001
    dropout: float = 0.25
    hidden_dim: int = 128
    se_dim: int = 128
    heads: int = 5
    agg_layers: int = 2
    nl_sample_limit: int = 128
    patience: int = 100
    max_epochs: int = 2000
    seed: int = 0
    # estimator training schedule (multi-stage self-supervised sampling)
    m3s_warmup_epochs: int = 200
    m3s_stages: int = 4
    m3s_stage_epochs: int = 100
    m3s_top_t: int | None = None     # None -> ceil(0.05 * node_count)
    per_anchor: int = 5
    clusters: int | None = None      # None -> class_count
    batch_size: int | None = None    # None -> full batch

    def __post_init__(self):
        if not (0.0 <= self.dropout < 1.0):
            raise ValueError("dropout must be in [0, 1)")
        for name in ("learning_rate", "hidden_dim", "se_dim", "heads", "agg_layers",
                     "nl_sample_limit", "patience", "max_epochs", "m3s_warmup_epochs",
                     "per_anchor"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.momentum < 0 or self.weight_decay < 0:
            raise ValueError("momentum and weight_decay must be nonnegative")

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass
class _Entry:
    value: np.ndarray
    grad: np.ndarray
    momentum: np.ndarray


class ParameterStore:
    """Named dense parameters, each with paired grad and momentum buffers."""

    def __init__(self):
        self._entries: dict[str, _Entry] = {}

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        if name in self._entries:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = np.array(value, dtype=np.float64)
        self._entries[name] = _Entry(value, np.zeros_like(value), np.zeros_like(value))
        return value

    def names(self) -> list[str]:
        return list(self._entries)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def value(self, name: str) -> np.ndarray:
        return self._entries[name].value

    def grad(self, name: str) -> np.ndarray:
        return self._entries[name].grad

    def momentum_buf(self, name: str) -> np.ndarray:
        return self._entries[name].momentum

    def accumulate(self, name: str, g: np.ndarray) -> None:
        self._entries[name].grad += g

    def zero_grads(self) -> None:
        for e in self._entries.values():
            e.grad[...] = 0.0

    def snapshot_values(self) -> dict[str, np.ndarray]:
        return {k: e.value.copy() for k, e in self._entries.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for k, v in values.items():
            e = self._entries[k]
            if e.value.shape != v.shape:
                raise ValueError(f"shape mismatch loading {k!r}")
            e.value[...] = v

    def assert_finite(self) -> None:
        for k, e in self._entries.items():
            if not np.all(np.isfinite(e.value)):
                raise FloatingPointError(f"non-finite values in parameter {k!r}")


# ---------------------------------------------------------------------------
# activations and losses

def selu(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x > 0, SELU_LAMBDA * x, SELU_LAMBDA * SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))
    return out if out.ndim else float(out)


def selu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    pos = x > 0
    deriv = np.where(pos, SELU_LAMBDA, SELU_LAMBDA * SELU_ALPHA * np.exp(np.minimum(x, 0.0)))
    return grad_out * deriv


def softplus(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    return out if out.ndim else float(out)


def sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    x = np.asarray(x, dtype=np.float64)
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return out if out.ndim else float(out)


def leaky_relu(x: np.ndarray, slope: float = 0.2) -> np.ndarray:
    return np.where(x > 0, x, slope * x)


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def linear(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    """W @ x + b for a single vector x."""
    W = np.asarray(W, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.shape[1] != x.shape[0] or W.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: W {W.shape}, b {b.shape}, x {x.shape}")
    return W @ x + b


def linear_backward(W: np.ndarray, x: np.ndarray, grad_out: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients (dW, db, dx) of y = W @ x + b given dL/dy."""
    dW = np.outer(grad_out, x)
    db = grad_out.copy()
    dx = W.T @ grad_out
    return dW, db, dx


def softmax_cross_entropy(logits: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """-log softmax(logits)[label] and its gradient (softmax - one_hot)."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("empty logits")
    if not (0 <= label < logits.size):
        raise ValueError(f"label {label} out of range for {logits.size} logits")
    m = logits.max()
    exps = np.exp(logits - m)
    z = exps.sum()
    loss = float(np.log(z) + m - logits[label])
    grad = exps / z
    grad[label] -= 1.0
    return loss, grad


def batch_softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray
                                ) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over rows; gradient already includes the 1/B factor."""
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ValueError("logits/labels shape mismatch")
    m = logits.max(axis=1, keepdims=True)
    exps = np.exp(logits - m)
    z = exps.sum(axis=1, keepdims=True)
    idx = np.arange(len(labels))
    losses = np.log(z[:, 0]) + m[:, 0] - logits[idx, labels]
    grad = exps / z
    grad[idx, labels] -= 1.0
    grad /= len(labels)
    return float(losses.mean()), grad


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout multiplier: zeros with prob rate, else 1/(1-rate)."""
    if rate == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


# ---------------------------------------------------------------------------
# optimizer and gradient checking

def sgd_momentum_step(store: ParameterStore, cfg: TrainConfig) -> None:
    """m <- mu*m + (g + wd*p); p <- p - lr*m; grads zeroed."""
    for name in store.names():
        e = store._entries[name]
        e.momentum *= cfg.momentum
        e.momentum += e.grad + cfg.weight_decay * e.value
        e.value -= cfg.learning_rate * e.momentum
        e.grad[...] = 0.0


def grad_check(f, store: ParameterStore, *, samples_per_param: int = 8,
               step: float = 1e-5, rng: np.random.Generator | None = None,
               param_names: list[str] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f(store)` must be deterministic, return the scalar loss, and leave
    dL/dp in the store's grad buffers (zeroing them first is f's job).
    Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|).
    """
    rng = rng or np.random.default_rng(0)
    f(store)
    analytic = {k: store.grad(k).copy() for k in store.names()}
    worst = 0.0
    names = param_names if param_names is not None else store.names()
    for name in names:
        value = store.value(name)
        flat = value.reshape(-1)
        k = min(samples_per_param, flat.size)
        coords = rng.choice(flat.size, size=k, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + step
            hi = f(store)
            flat[c] = orig - step
            lo = f(store)
            flat[c] = orig
            numeric = (hi - lo) / (2.0 * step)
            a = analytic[name].reshape(-1)[c]
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    f(store)  # restore grads for the unperturbed point
    return worst
