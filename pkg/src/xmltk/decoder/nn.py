"""Numerically stable activations and the binary cross-entropy loss."""

from __future__ import annotations

import numpy as np

# stands in for -inf on disallowed logits; large enough to never win an argmax
MASK_VALUE = -1e30

_LO = np.nextafter(0.0, 1.0)
_HI = np.nextafter(1.0, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def probability(x):
    """Sigmoid clipped to the open interval (0, 1)."""
    return np.clip(sigmoid(x), _LO, _HI)


def softplus(x):
    return np.logaddexp(0.0, x)


def bce_loss(x, y) -> float:
    """Mean over entries of -[y log s(x) + (1 - y) log(1 - s(x))].

    Uses the identity ``-[y log s(x) + (1-y) log(1-s(x))] = softplus(x) - y x``.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"logit shape {x.shape} != target shape {y.shape}")
    return float(np.mean(softplus(x) - y * x))


def bce_rows(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-row mean BCE for 2-D inputs."""
    return np.mean(softplus(x) - y * x, axis=-1)


def bce_grad(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Gradient of the per-row mean BCE with respect to the logits."""
    return (sigmoid(x) - y) / x.shape[-1]


def softmax(s: np.ndarray) -> np.ndarray:
    m = s.max(axis=-1, keepdims=True)
    e = np.exp(s - m)
    return e / e.sum(axis=-1, keepdims=True)
