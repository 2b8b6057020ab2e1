"""Slide/patch losses and attention-guided pseudo-label generation.

The patch-level supervision works branch by branch: the branch matching the
ground-truth class labels its least-attended instances 0 and most-attended
instances 1; under the mutual-exclusivity assumption every other branch
labels its own most-attended instances 0 ("false positive" evidence).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .kernels import batch_smooth_hinge
from .linalg import softmax


@dataclass
class LossConfig:
    alpha: float = 1.0
    tau: float = 1.0
    c1: float = 0.7
    c2: float = 0.3
    bag_evidence: int = 8  # B: instances labeled per evidence set
    mutually_exclusive: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if self.alpha < 0 or self.c1 < 0 or self.c2 < 0:
            raise ConfigError("alpha, c1, c2 must be non-negative")
        if self.bag_evidence < 1:
            raise ConfigError(f"B must be >= 1, got {self.bag_evidence}")


@dataclass
class PseudoLabelSet:
    """Per-branch (instance_index, binary_label) pairs for one iteration."""

    per_branch: dict = field(default_factory=dict)  # branch -> list[(idx, label)]
    b_effective: int = 0
    mutually_exclusive: bool = True

    def total_count(self) -> int:
        return sum(len(v) for v in self.per_branch.values())

    def flat(self):
        """(branch, index, label) triples in deterministic order."""
        out = []
        for m in sorted(self.per_branch):
            out.extend((m, idx, lab) for idx, lab in self.per_branch[m])
        return out


def generate_pseudo_labels(
    attention: np.ndarray, ground_truth: int, config: LossConfig
) -> PseudoLabelSet:
    """Rank-based evidence selection on post-softmax attention scores.

    Ties are broken by instance index (stable sort); the evidence count is
    truncated to floor(K/2) on small bags so the positive and negative sets
    stay disjoint.
    """
    attention = np.asarray(attention)
    n, k = attention.shape
    if k < 2:
        raise DataError(f"bag too small for pseudo-labeling (K={k})")
    if not 0 <= ground_truth < n:
        raise DataError(f"label {ground_truth} out of range for {n} branches")
    b_eff = min(config.bag_evidence, k // 2)
    out = PseudoLabelSet(
        b_effective=b_eff, mutually_exclusive=config.mutually_exclusive
    )
    for m in range(n):
        order = np.argsort(attention[m], kind="stable")
        if m == ground_truth:
            pairs = [(int(i), 0) for i in order[:b_eff]]
            pairs += [(int(i), 1) for i in order[k - b_eff :]]
            out.per_branch[m] = pairs
        elif config.mutually_exclusive:
            out.per_branch[m] = [(int(i), 0) for i in order[k - b_eff :]]
    return out


def svm_loss(s: np.ndarray, y: int, alpha: float = 1.0) -> float:
    """Multiclass hinge: max(max_{j!=y}(s_j + alpha) - s_y, 0)."""
    s = np.asarray(s, dtype=np.float64)
    if not 0 <= y < s.size:
        raise DataError(f"label {y} out of range")
    rest = np.delete(s, y)
    return float(max(np.max(rest) + alpha - s[y], 0.0))


def smooth_svm_loss(s: np.ndarray, y: int, alpha: float = 1.0, tau: float = 1.0):
    """Smooth top-1 hinge: tau * logsumexp((alpha*[j != y] + s_j - s_y) / tau).

    Returns (loss, gradient w.r.t. s). At alpha=0, tau=1 this is exactly
    cross-entropy on s.
    """
    if tau <= 0:
        raise ConfigError(f"tau must be > 0, got {tau}")
    s = np.asarray(s, dtype=np.float64)
    if not 0 <= y < s.size:
        raise DataError(f"label {y} out of range")
    u = (alpha * (np.arange(s.size) != y) + s - s[y]) / tau
    hi = np.max(u)
    e = np.exp(u - hi)
    z = e.sum()
    loss = tau * (hi + np.log(z))
    grad = e / z
    grad[y] -= 1.0
    return float(loss), grad


def cross_entropy(s: np.ndarray, y: int):
    """Cross-entropy on logits; returns (loss, gradient softmax(s) - onehot)."""
    s = np.asarray(s, dtype=np.float64)
    if not 0 <= y < s.size:
        raise DataError(f"label {y} out of range")
    shifted = s - np.max(s)
    logz = np.log(np.sum(np.exp(shifted)))
    loss = logz - shifted[y]
    grad = softmax(s)
    grad[y] -= 1.0
    return float(loss), grad


def patch_loss_and_grads(
    cluster_logits: np.ndarray, pseudo: PseudoLabelSet, config: LossConfig
):
    """Mean smooth hinge over all pseudo-labeled instances, pooled across
    branches. Returns (mean_loss, d_loss/d_cluster_logits with shape (n,K,2)).
    An empty label set yields loss 0 and zero gradient."""
    d = np.zeros_like(cluster_logits)
    triples = pseudo.flat()
    if not triples:
        return 0.0, d
    logits = np.array([cluster_logits[m, i] for m, i, _ in triples])
    labels = np.array([lab for _, _, lab in triples], dtype=np.int64)
    losses, grads = batch_smooth_hinge(logits, labels, config.alpha, config.tau)
    inv_m = 1.0 / len(triples)
    for row, (m, i, _) in enumerate(triples):
        d[m, i] += grads[row] * inv_m
    return float(losses.mean()), d


def total_loss(slide_loss: float, patch_losses, config: LossConfig) -> float:
    """c1 * slide loss + c2 * mean(patch losses); empty patch list counts 0."""
    patch_losses = list(patch_losses)
    mean_patch = float(np.mean(patch_losses)) if patch_losses else 0.0
    return config.c1 * slide_loss + config.c2 * mean_patch
