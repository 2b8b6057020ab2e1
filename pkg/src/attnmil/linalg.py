"""Small numeric core: stable activations, seeded RNG, finite-difference checks.

Everything here operates on float64 numpy arrays. The RNG is numpy's PCG64
so that a given 64-bit seed reproduces the identical stream on every
platform.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import DimensionError, NumericError


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator: PCG64 keyed by a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def softmax(v: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax (max-subtraction)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise DimensionError("softmax of empty input")
    if not np.all(np.isfinite(v)):
        raise NumericError("softmax input contains non-finite values")
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def sigmoid(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def relu(v: np.ndarray) -> np.ndarray:
    return np.maximum(v, 0.0)


def gated_activation(
    h: np.ndarray,
    ua: np.ndarray,
    va: np.ndarray,
    bua: np.ndarray | None = None,
    bva: np.ndarray | None = None,
) -> np.ndarray:
    """tanh(va @ h) * sigm(ua @ h), the gated nonlinearity of the attention
    backbone. ``h`` may be a single vector or a stack of row vectors."""
    h = np.asarray(h, dtype=np.float64)
    if ua.shape != va.shape:
        raise DimensionError(f"ua {ua.shape} and va {va.shape} differ")
    if h.shape[-1] != ua.shape[1]:
        raise DimensionError(f"input dim {h.shape[-1]} != weight fan-in {ua.shape[1]}")
    t = h @ va.T
    s = h @ ua.T
    if bva is not None:
        t = t + bva
    if bua is not None:
        s = s + bua
    return np.tanh(t) * sigmoid(s)


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    x: np.ndarray,
    analytic_grad: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Max relative error between central differences of ``f`` and
    ``analytic_grad``, normalized by max(1, |g_i|) per coordinate."""
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(analytic_grad, dtype=np.float64)
    if x.shape != g.shape:
        raise DimensionError(f"x {x.shape} vs grad {g.shape}")
    worst = 0.0
    flat_x = x.ravel()
    flat_g = g.ravel()
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + eps
        fp = f(x)
        flat_x[i] = orig - eps
        fm = f(x)
        flat_x[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericError("objective returned non-finite value")
        num = (fp - fm) / (2.0 * eps)
        err = abs(num - flat_g[i]) / max(1.0, abs(flat_g[i]))
        worst = max(worst, err)
    return worst
