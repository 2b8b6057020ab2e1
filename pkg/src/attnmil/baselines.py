"""Max-pooling MIL baselines.

Each instance is scored independently with a two-layer network; the bag
prediction comes from a single selected instance. The binary variant picks
the instance with the highest raw positive-class score, the multi-class
variant the instance whose largest single-class raw score is greatest.
Ties go to the lowest instance index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .linalg import softmax
from .losses import cross_entropy

HIDDEN_DIM = 512


@dataclass
class MilParams:
    n_classes: int
    feat_dim: int
    w1: np.ndarray  # (512, D)
    b1: np.ndarray  # (512,)
    w2: np.ndarray  # (n, 512)
    b2: np.ndarray  # (n,)

    def blocks(self):
        return [("w1", self.w1), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def copy(self) -> "MilParams":
        return MilParams(
            self.n_classes,
            self.feat_dim,
            **{name: arr.copy() for name, arr in self.blocks()},
        )

    def zeros_like(self) -> "MilParams":
        return MilParams(
            self.n_classes,
            self.feat_dim,
            **{name: np.zeros_like(arr) for name, arr in self.blocks()},
        )

    def validate(self):
        expected = {
            "w1": (HIDDEN_DIM, self.feat_dim),
            "b1": (HIDDEN_DIM,),
            "w2": (self.n_classes, HIDDEN_DIM),
            "b2": (self.n_classes,),
        }
        for name, arr in self.blocks():
            if arr.shape != expected[name]:
                raise DimensionError(
                    f"{name}: expected {expected[name]}, got {arr.shape}"
                )


def init_mil_params(
    n_classes: int, rng: np.random.Generator, feat_dim: int = 1024
) -> MilParams:
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return MilParams(
        n_classes=n_classes,
        feat_dim=feat_dim,
        w1=u((HIDDEN_DIM, feat_dim), feat_dim),
        b1=np.zeros(HIDDEN_DIM),
        w2=u((n_classes, HIDDEN_DIM), HIDDEN_DIM),
        b2=np.zeros(n_classes),
    )


def instance_scores(features: np.ndarray, params: MilParams):
    """Per-instance raw class scores s_k = W2 relu(W1 z_k + b1) + b2.

    Returns (scores (K, n), relu activations (K, 512), pre-activations)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.feat_dim:
        raise DimensionError(
            f"features must be (K, {params.feat_dim}), got {features.shape}"
        )
    pre = features @ params.w1.T + params.b1
    act = np.maximum(pre, 0.0)
    return act @ params.w2.T + params.b2, act, pre


def mil_forward(features: np.ndarray, params: MilParams):
    """Binary max-pooling MIL. Returns (selected index, slide logits, probs)."""
    if params.n_classes != 2:
        raise DimensionError("binary MIL requires exactly 2 classes")
    scores, _, _ = instance_scores(features, params)
    k = int(np.argmax(scores[:, 1]))  # first index wins ties
    logits = scores[k]
    return k, logits, softmax(logits)


def mmil_forward(features: np.ndarray, params: MilParams):
    """Multi-class variant: select the instance whose best single-class raw
    score is largest. Returns (selected index, slide logits, probs)."""
    scores, _, _ = instance_scores(features, params)
    k = int(np.argmax(np.max(scores, axis=1)))
    logits = scores[k]
    return k, logits, softmax(logits)


def mil_loss_and_grads(features: np.ndarray, label: int, params: MilParams):
    """Cross-entropy on the max-pooled instance; gradients flow only through
    the selected instance. Returns (loss, grads, selected index, probs)."""
    features = np.asarray(features, dtype=np.float64)
    scores, act, pre = instance_scores(features, params)
    if params.n_classes == 2:
        k = int(np.argmax(scores[:, 1]))
    else:
        k = int(np.argmax(np.max(scores, axis=1)))
    loss, d_logits = cross_entropy(scores[k], label)

    grads = params.zeros_like()
    grads.w2[:] = np.outer(d_logits, act[k])
    grads.b2[:] = d_logits
    dh = d_logits @ params.w2
    d_pre = dh * (pre[k] > 0)
    grads.w1[:] = np.outer(d_pre, features[k])
    grads.b1[:] = d_pre
    return loss, grads, k, softmax(scores[k])
