"""Dense math substrate: activations with analytic gradients, Xavier init,
softmax cross-entropy, ADAM and a finite-difference gradient checker.

Weight matrices are stored as ``(fan_in, fan_out)`` and applied to row
vectors, so ``dense_forward`` works unchanged on a batch of inputs.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class NumericalError(FloatingPointError):
    """A NaN or Inf turned up where finite values are required."""


class ActivationKind(str, enum.Enum):
    RELU = "ReLu"
    TANH = "Tanh"
    SIGMOID = "Sigmoid"
    ELU = "Elu"
    SQUARE = "Square"
    RS = "RS"
    CRELU = "CReLu"
    CRES = "CReS"

    @property
    def multiplier(self) -> int:
        return _MULTIPLIER[self]

    @property
    def squares(self) -> bool:
        return self in (ActivationKind.SQUARE, ActivationKind.RS, ActivationKind.CRES)


_MULTIPLIER = {
    ActivationKind.RELU: 1,
    ActivationKind.TANH: 1,
    ActivationKind.SIGMOID: 1,
    ActivationKind.ELU: 1,
    ActivationKind.SQUARE: 1,
    ActivationKind.RS: 2,
    ActivationKind.CRELU: 2,
    ActivationKind.CRES: 4,
}


def _as_kind(kind) -> ActivationKind:
    try:
        return ActivationKind(kind)
    except ValueError:
        raise ValueError(f"unknown activation kind {kind!r}") from None


def check_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what} contains non-finite values")
    return x


def xavier_init(fan_in: int, fan_out: int, seed=None, dtype=np.float64) -> np.ndarray:
    """Uniform Glorot initialisation on +-sqrt(6 / (fan_in + fan_out)).

    ``seed`` may be an int, a SeedSequence or an existing Generator.
    """
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan dimensions must be >= 1, got ({fan_in}, {fan_out})")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype, copy=False)


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activate(kind, x: np.ndarray) -> np.ndarray:
    """Apply ``kind`` along the last axis; widening kinds concatenate blocks."""
    kind = _as_kind(kind)
    if kind is ActivationKind.RELU:
        return np.maximum(x, 0)
    if kind is ActivationKind.TANH:
        return np.tanh(x)
    if kind is ActivationKind.SIGMOID:
        return _sigmoid(x)
    if kind is ActivationKind.ELU:
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
    if kind is ActivationKind.SQUARE:
        return x * x
    pos = np.maximum(x, 0)
    if kind is ActivationKind.RS:
        return np.concatenate([pos, x * x], axis=-1)
    neg = np.maximum(-x, 0)
    if kind is ActivationKind.CRELU:
        return np.concatenate([pos, neg], axis=-1)
    return np.concatenate([pos, neg, pos * pos, neg * neg], axis=-1)


def activate_backward(kind, x: np.ndarray, upstream: np.ndarray,
                      out: np.ndarray | None = None) -> np.ndarray:
    """Gradient w.r.t. ``x`` given dL/d(activate(kind, x)).

    ``out`` optionally passes the cached forward output (used by Tanh and
    Sigmoid to skip recomputation). The ReLu kink has derivative 0.
    """
    kind = _as_kind(kind)
    n = x.shape[-1]
    if upstream.shape[-1] != n * kind.multiplier or upstream.shape[:-1] != x.shape[:-1]:
        raise ValueError(
            f"upstream shape {upstream.shape} does not match {kind.value} output for input {x.shape}")
    if kind is ActivationKind.RELU:
        return upstream * (x > 0)
    if kind is ActivationKind.TANH:
        y = np.tanh(x) if out is None else out
        return upstream * (1 - y * y)
    if kind is ActivationKind.SIGMOID:
        y = _sigmoid(x) if out is None else out
        return upstream * y * (1 - y)
    if kind is ActivationKind.ELU:
        return upstream * np.where(x > 0, 1.0, np.exp(np.minimum(x, 0)))
    if kind is ActivationKind.SQUARE:
        return upstream * 2 * x
    if kind is ActivationKind.RS:
        return upstream[..., :n] * (x > 0) + upstream[..., n:] * 2 * x
    pos_mask = x > 0
    neg_mask = x < 0
    g = upstream[..., :n] * pos_mask - upstream[..., n:2 * n] * neg_mask
    if kind is ActivationKind.CRELU:
        return g
    # d/dx relu(x)^2 = 2 relu(x); d/dx relu(-x)^2 = -2 relu(-x)
    return g + upstream[..., 2 * n:3 * n] * 2 * np.maximum(x, 0) \
        - upstream[..., 3 * n:] * 2 * np.maximum(-x, 0)


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    if W.ndim != 2 or b.shape != (W.shape[1],) or x.shape[-1] != W.shape[0]:
        raise ValueError(f"shape mismatch: W{W.shape}, b{b.shape}, x{x.shape}")
    return x @ W + b


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_ce(logits: np.ndarray, target_index):
    """Softmax cross-entropy with max subtraction.

    Works on a single logit vector or a batch (last axis = classes, one
    target per row). Returns ``(probs, loss, dlogits)``; for a batch the
    loss is the per-row array.
    """
    logits = np.asarray(logits)
    if logits.size == 0 or logits.shape[-1] == 0:
        raise ValueError("softmax_ce needs at least one logit")
    target = np.asarray(target_index)
    if np.any(target < 0) or np.any(target >= logits.shape[-1]):
        raise IndexError(f"target {target_index} out of range for {logits.shape[-1]} logits")
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=-1, keepdims=True)
    probs = e / s
    if logits.ndim == 1:
        loss = float(np.log(s[0]) - z[target])
        d = probs.copy()
        d[target] -= 1
        return probs, loss, d
    rows = np.arange(logits.shape[0])
    loss = np.log(s[:, 0]) - z[rows, target]
    d = probs.copy()
    d[rows, target] -= 1
    return probs, loss, d


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.lr < 1:
            raise ValueError(f"learning rate must lie in (0, 1), got {self.lr}")


@dataclass
class OptimizerState:
    """ADAM moments for a flat parameter vector."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros_like(cls, params: np.ndarray) -> "OptimizerState":
        return cls(np.zeros_like(params), np.zeros_like(params), 0)


def adam_step(params: np.ndarray, grads: np.ndarray, state: OptimizerState,
              cfg: OptimizerConfig, active: Sequence[slice] | None = None) -> OptimizerState:
    """One bias-corrected ADAM update, in place on ``params`` and ``state``.

    ``active`` lists the flat ranges that may change; everything outside
    them (frozen tensors and their moments) is left untouched. ``None``
    means every parameter is trainable.
    """
    if grads.shape != params.shape or state.m.shape != params.shape:
        raise ValueError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grads)):
        bad = np.flatnonzero(~np.isfinite(grads))
        raise NumericalError(f"non-finite gradient at {bad.size} coordinates (first {bad[:5].tolist()})")
    state.step += 1
    t = state.step
    step_size = cfg.lr * np.sqrt(1 - cfg.beta2 ** t) / (1 - cfg.beta1 ** t)
    eps_hat = cfg.eps * np.sqrt(1 - cfg.beta2 ** t)
    ranges = [slice(None)] if active is None else active
    for sl in ranges:
        g = grads[sl]
        m = state.m[sl]
        v = state.v[sl]
        m *= cfg.beta1
        m += (1 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1 - cfg.beta2) * (g * g)
        # equivalent to lr * mhat / (sqrt(vhat) + eps) with the corrections folded in
        params[sl] -= step_size * m / (np.sqrt(v) + eps_hat)
    return state


def grad_check(fun: Callable[[np.ndarray], float], x: np.ndarray, analytic: np.ndarray,
               h: float = 1e-5, max_coords: int | None = None, seed=0) -> float:
    """Max over (sampled) coordinates of |analytic - numeric| / max(1, |numeric|).

    ``fun`` is evaluated with central differences on a float64 copy of ``x``.
    """
    x = np.array(x, dtype=np.float64)
    analytic = np.asarray(analytic, dtype=np.float64).reshape(x.shape)
    flat = x.reshape(-1)
    coords = np.arange(flat.size)
    if max_coords is not None and flat.size > max_coords:
        coords = np.random.default_rng(seed).choice(flat.size, size=max_coords, replace=False)
    worst = 0.0
    for i in coords:
        orig = flat[i]
        flat[i] = orig + h
        fp = fun(x)
        flat[i] = orig - h
        fm = fun(x)
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericalError(f"non-finite evaluation at coordinate {i}")
        numeric = (fp - fm) / (2 * h)
        err = abs(analytic.reshape(-1)[i] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst
