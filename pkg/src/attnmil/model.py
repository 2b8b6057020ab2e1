"""Gated-attention MIL network with per-class branches and clustering heads.

Architecture, for a bag of K instance feature vectors z_k (D-dim):

  h_k        = relu(W1 z_k + b1)                    K x 512
  g_k        = tanh(Va h_k + bva) * sigm(Ua h_k + bua)   K x 256
  raw[m, k]  = Wa[m] g_k + ba[m]                    n x K
  attn[m]    = softmax_k(raw[m])                    n x K
  repr[m]    = sum_k attn[m, k] h_k                 n x 512
  logit[m]   = Wc[m] repr[m] + bc[m]                n
  cluster[m] = Winst[m] h_k + binst[m]              n x K x 2

The ReLU after the embedding layer can be disabled via ``relu_embed`` for
ablation; it is on by default.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .linalg import sigmoid, softmax

EMBED_DIM = 512
ATTN_DIM = 256


@dataclass
class ClamParams:
    """All learnable weights. Biases are 1-D, weight matrices 2-D (the
    clustering heads are stacked into a single 3-D array)."""

    n_classes: int
    feat_dim: int
    w1: np.ndarray  # (512, D)
    b1: np.ndarray  # (512,)
    va: np.ndarray  # (256, 512)
    bva: np.ndarray  # (256,)
    ua: np.ndarray  # (256, 512)
    bua: np.ndarray  # (256,)
    wa: np.ndarray  # (n, 256)
    ba: np.ndarray  # (n,)
    wc: np.ndarray  # (n, 512)
    bc: np.ndarray  # (n,)
    winst: np.ndarray  # (n, 2, 512)
    binst: np.ndarray  # (n, 2)

    def blocks(self):
        """(name, array) pairs in the canonical (checkpoint) order."""
        return [
            ("w1", self.w1),
            ("b1", self.b1),
            ("va", self.va),
            ("bva", self.bva),
            ("ua", self.ua),
            ("bua", self.bua),
            ("wa", self.wa),
            ("ba", self.ba),
            ("wc", self.wc),
            ("bc", self.bc),
            ("winst", self.winst),
            ("binst", self.binst),
        ]

    def copy(self) -> "ClamParams":
        return ClamParams(
            self.n_classes,
            self.feat_dim,
            **{name: arr.copy() for name, arr in self.blocks()},
        )

    def zeros_like(self) -> "ClamParams":
        return ClamParams(
            self.n_classes,
            self.feat_dim,
            **{name: np.zeros_like(arr) for name, arr in self.blocks()},
        )

    def validate(self):
        n, d = self.n_classes, self.feat_dim
        expected = {
            "w1": (EMBED_DIM, d),
            "b1": (EMBED_DIM,),
            "va": (ATTN_DIM, EMBED_DIM),
            "bva": (ATTN_DIM,),
            "ua": (ATTN_DIM, EMBED_DIM),
            "bua": (ATTN_DIM,),
            "wa": (n, ATTN_DIM),
            "ba": (n,),
            "wc": (n, EMBED_DIM),
            "bc": (n,),
            "winst": (n, 2, EMBED_DIM),
            "binst": (n, 2),
        }
        for name, arr in self.blocks():
            if arr.shape != expected[name]:
                raise DimensionError(
                    f"{name}: expected {expected[name]}, got {arr.shape}"
                )
            if not np.all(np.isfinite(arr)):
                raise NumericError(f"{name} contains non-finite values")


def init_params(
    n_classes: int, rng: np.random.Generator, feat_dim: int = 1024
) -> ClamParams:
    """Uniform [-1/sqrt(fan_in), 1/sqrt(fan_in)] weights, zero biases."""
    if n_classes < 2:
        raise ConfigError(f"need at least 2 classes, got {n_classes}")

    def u(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ClamParams(
        n_classes=n_classes,
        feat_dim=feat_dim,
        w1=u((EMBED_DIM, feat_dim), feat_dim),
        b1=np.zeros(EMBED_DIM),
        va=u((ATTN_DIM, EMBED_DIM), EMBED_DIM),
        bva=np.zeros(ATTN_DIM),
        ua=u((ATTN_DIM, EMBED_DIM), EMBED_DIM),
        bua=np.zeros(ATTN_DIM),
        wa=u((n_classes, ATTN_DIM), ATTN_DIM),
        ba=np.zeros(n_classes),
        wc=u((n_classes, EMBED_DIM), EMBED_DIM),
        bc=np.zeros(n_classes),
        winst=u((n_classes, 2, EMBED_DIM), EMBED_DIM),
        binst=np.zeros((n_classes, 2)),
    )


@dataclass
class AttentionResult:
    embedded: np.ndarray  # (K, 512)
    raw_attention: np.ndarray  # (n, K)
    attention: np.ndarray  # (n, K)
    slide_repr: np.ndarray  # (n, 512)
    slide_logits: np.ndarray  # (n,)
    probs: np.ndarray  # (n,)
    # caches for the backward pass
    pre_embed: np.ndarray = field(repr=False, default=None)  # (K, 512)
    tanh_part: np.ndarray = field(repr=False, default=None)  # (K, 256)
    sig_part: np.ndarray = field(repr=False, default=None)  # (K, 256)
    gated: np.ndarray = field(repr=False, default=None)  # (K, 256)


def embed_instances(
    features: np.ndarray, params: ClamParams, relu_embed: bool = True
) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.feat_dim:
        raise DimensionError(
            f"features must be (K, {params.feat_dim}), got {features.shape}"
        )
    pre = features @ params.w1.T + params.b1
    return np.maximum(pre, 0.0) if relu_embed else pre


def attention_forward(
    features: np.ndarray, params: ClamParams, relu_embed: bool = True
) -> AttentionResult:
    """Full forward pass from raw instance features to slide probabilities."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.feat_dim:
        raise DimensionError(
            f"features must be (K, {params.feat_dim}), got {features.shape}"
        )
    if features.shape[0] < 1:
        raise DimensionError("bag must contain at least one instance")
    pre = features @ params.w1.T + params.b1
    h = np.maximum(pre, 0.0) if relu_embed else pre
    t = np.tanh(h @ params.va.T + params.bva)
    s = sigmoid(h @ params.ua.T + params.bua)
    g = t * s
    raw = g @ params.wa.T + params.ba  # (K, n)
    raw = raw.T  # (n, K)
    attn = softmax(raw, axis=1)
    slide_repr = attn @ h  # (n, 512)
    slide_logits = np.einsum("me,me->m", params.wc, slide_repr) + params.bc
    probs = softmax(slide_logits)
    return AttentionResult(
        embedded=h,
        raw_attention=raw,
        attention=attn,
        slide_repr=slide_repr,
        slide_logits=slide_logits,
        probs=probs,
        pre_embed=pre,
        tanh_part=t,
        sig_part=s,
        gated=g,
    )


def cluster_forward(embedded: np.ndarray, params: ClamParams) -> np.ndarray:
    """Cluster logits, shape (n, K, 2)."""
    embedded = np.asarray(embedded, dtype=np.float64)
    if embedded.ndim != 2 or embedded.shape[1] != EMBED_DIM:
        raise DimensionError(f"embedded must be (K, {EMBED_DIM}), got {embedded.shape}")
    return np.einsum("mce,ke->mkc", params.winst, embedded) + params.binst[:, None, :]


def model_backward(
    features: np.ndarray,
    params: ClamParams,
    fwd: AttentionResult,
    d_slide_logits: np.ndarray,
    d_cluster_logits: np.ndarray | None = None,
    relu_embed: bool = True,
) -> ClamParams:
    """Gradients of a scalar loss given its gradient w.r.t. the slide logits
    and (optionally) the cluster logits. Returns a ClamParams of gradients.
    """
    features = np.asarray(features, dtype=np.float64)
    h, attn = fwd.embedded, fwd.attention
    grads = params.zeros_like()

    # classifier layer
    grads.wc[:] = d_slide_logits[:, None] * fwd.slide_repr
    grads.bc[:] = d_slide_logits
    d_repr = d_slide_logits[:, None] * params.wc  # (n, 512)

    # attention pooling: repr[m] = attn[m] @ h
    d_attn = d_repr @ h.T  # (n, K)
    dh = attn.T @ d_repr  # (K, 512)

    # softmax over instances, per branch
    inner = np.sum(d_attn * attn, axis=1, keepdims=True)
    d_raw = attn * (d_attn - inner)  # (n, K)

    # branch heads: raw[m, k] = wa[m] . g_k + ba[m]
    grads.wa[:] = d_raw @ fwd.gated
    grads.ba[:] = d_raw.sum(axis=1)
    dg = d_raw.T @ params.wa  # (K, 256)

    # gated nonlinearity
    dt = dg * fwd.sig_part
    ds = dg * fwd.tanh_part
    d_pre_t = dt * (1.0 - fwd.tanh_part**2)
    d_pre_s = ds * fwd.sig_part * (1.0 - fwd.sig_part)
    grads.va[:] = d_pre_t.T @ h
    grads.bva[:] = d_pre_t.sum(axis=0)
    grads.ua[:] = d_pre_s.T @ h
    grads.bua[:] = d_pre_s.sum(axis=0)
    dh += d_pre_t @ params.va + d_pre_s @ params.ua

    # clustering heads
    if d_cluster_logits is not None:
        grads.winst[:] = np.einsum("mkc,ke->mce", d_cluster_logits, h)
        grads.binst[:] = d_cluster_logits.sum(axis=1)
        dh += np.einsum("mkc,mce->ke", d_cluster_logits, params.winst)

    # embedding layer
    d_pre = dh * (fwd.pre_embed > 0) if relu_embed else dh
    grads.w1[:] = d_pre.T @ features
    grads.b1[:] = d_pre.sum(axis=0)
    return grads
