"""Hot inner loops with optional numba acceleration.

Every kernel has a pure-numpy implementation and (when numba imports and
``ATTNMIL_DISABLE_NUMBA`` is unset) an ``@njit`` twin compiled lazily on
first call. Both paths produce bit-identical float64 results; the test
suite asserts this and ``benchmarks/bench_kernels.py`` compares timings.

The matmul-heavy parts of the model are left to BLAS via numpy; only the
loops that numpy cannot fuse live here.
"""

from __future__ import annotations

import os

import numpy as np

_DISABLED = os.environ.get("ATTNMIL_DISABLE_NUMBA", "0").lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # no-op decorator fallback
        if args and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def using_numba() -> bool:
    return HAVE_NUMBA


# -- heatmap footprint accumulation ----------------------------------------


def _accumulate_np(score_sum, hit_count, xs, ys, w, h, scores):
    height, width = score_sum.shape
    for i in range(xs.shape[0]):
        x0 = max(xs[i], 0)
        y0 = max(ys[i], 0)
        x1 = min(xs[i] + w, width)
        y1 = min(ys[i] + h, height)
        if x1 <= x0 or y1 <= y0:
            continue
        score_sum[y0:y1, x0:x1] += scores[i]
        hit_count[y0:y1, x0:x1] += 1


@njit(cache=True)
def _accumulate_nb(score_sum, hit_count, xs, ys, w, h, scores):  # pragma: no cover
    height, width = score_sum.shape
    for i in range(xs.shape[0]):
        x0 = max(xs[i], 0)
        y0 = max(ys[i], 0)
        x1 = min(xs[i] + w, width)
        y1 = min(ys[i] + h, height)
        for y in range(y0, y1):
            for x in range(x0, x1):
                score_sum[y, x] += scores[i]
                hit_count[y, x] += 1


def accumulate_footprints(score_sum, hit_count, xs, ys, w, h, scores):
    """Add ``scores[i]`` over the clipped w*h window anchored at (xs[i], ys[i])."""
    xs = np.ascontiguousarray(xs, dtype=np.int64)
    ys = np.ascontiguousarray(ys, dtype=np.int64)
    scores = np.ascontiguousarray(scores, dtype=np.float64)
    impl = _accumulate_nb if HAVE_NUMBA else _accumulate_np
    impl(score_sum, hit_count, xs, ys, int(w), int(h), scores)


# -- batched binary smooth hinge loss --------------------------------------


def _smooth_hinge_np(logits, labels, alpha, tau):
    m = logits.shape[0]
    losses = np.empty(m)
    grads = np.empty_like(logits)
    for i in range(m):
        y = labels[i]
        sy = logits[i, y]
        u0 = (alpha * (0 != y) + logits[i, 0] - sy) / tau
        u1 = (alpha * (1 != y) + logits[i, 1] - sy) / tau
        hi = u0 if u0 > u1 else u1
        e0 = np.exp(u0 - hi)
        e1 = np.exp(u1 - hi)
        z = e0 + e1
        losses[i] = tau * (hi + np.log(z))
        q0 = e0 / z
        q1 = e1 / z
        grads[i, 0] = q0 - (1.0 if y == 0 else 0.0)
        grads[i, 1] = q1 - (1.0 if y == 1 else 0.0)
    return losses, grads


@njit(cache=True)
def _smooth_hinge_nb(logits, labels, alpha, tau):  # pragma: no cover
    m = logits.shape[0]
    losses = np.empty(m)
    grads = np.empty_like(logits)
    for i in range(m):
        y = labels[i]
        sy = logits[i, y]
        u0 = (alpha * (0 != y) + logits[i, 0] - sy) / tau
        u1 = (alpha * (1 != y) + logits[i, 1] - sy) / tau
        hi = u0 if u0 > u1 else u1
        e0 = np.exp(u0 - hi)
        e1 = np.exp(u1 - hi)
        z = e0 + e1
        losses[i] = tau * (hi + np.log(z))
        q0 = e0 / z
        q1 = e1 / z
        grads[i, 0] = q0 - (1.0 if y == 0 else 0.0)
        grads[i, 1] = q1 - (1.0 if y == 1 else 0.0)
    return losses, grads


def batch_smooth_hinge(logits, labels, alpha, tau):
    """Smooth top-1 hinge loss and gradient for a batch of 2-class logits.

    Returns (losses[M], grads[M,2]) with grads of the per-item loss w.r.t.
    its own logits.
    """
    logits = np.ascontiguousarray(logits, dtype=np.float64)
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    impl = _smooth_hinge_nb if HAVE_NUMBA else _smooth_hinge_np
    return impl(logits, labels, float(alpha), float(tau))


# -- fused Adam update ------------------------------------------------------


def _adam_np(theta, grad, m, v, t, lr, beta1, beta2, eps, decay):
    g = grad + decay * theta
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    theta -= lr * mhat / (np.sqrt(vhat) + eps)


@njit(cache=True)
def _adam_nb(theta, grad, m, v, t, lr, beta1, beta2, eps, decay):  # pragma: no cover
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i in range(theta.shape[0]):
        g = grad[i] + decay * theta[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * g
        v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
        theta[i] -= lr * (m[i] / c1) / (np.sqrt(v[i] / c2) + eps)


def adam_update(theta, grad, m, v, t, lr, beta1, beta2, eps, decay):
    """In-place Adam step with bias correction; decay is additive L2."""
    if HAVE_NUMBA:
        _adam_nb(
            theta.ravel(),
            np.ascontiguousarray(grad, dtype=np.float64).ravel(),
            m.ravel(),
            v.ravel(),
            int(t),
            float(lr),
            float(beta1),
            float(beta2),
            float(eps),
            float(decay),
        )
    else:
        _adam_np(theta, grad, m, v, int(t), lr, beta1, beta2, eps, decay)
