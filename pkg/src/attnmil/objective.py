"""End-to-end training objective for the attention model on one bag."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import (
    LossConfig,
    PseudoLabelSet,
    cross_entropy,
    generate_pseudo_labels,
    patch_loss_and_grads,
)
from .model import (
    AttentionResult,
    ClamParams,
    attention_forward,
    cluster_forward,
    model_backward,
)


@dataclass
class BagLossResult:
    total: float
    slide_loss: float
    patch_loss: float
    grads: ClamParams
    forward: AttentionResult
    pseudo: PseudoLabelSet


def clam_loss_and_grads(
    features: np.ndarray,
    label: int,
    params: ClamParams,
    config: LossConfig,
    relu_embed: bool = True,
    pseudo: PseudoLabelSet | None = None,
) -> BagLossResult:
    """Total loss c1*L_slide + c2*L_patch and its analytic gradients.

    Pseudo-labels are regenerated from the current attention scores unless
    a fixed ``pseudo`` is supplied (the instance selection is treated as a
    constant w.r.t. the parameters either way, so finite-difference checks
    must pass a frozen set).
    """
    fwd = attention_forward(features, params, relu_embed=relu_embed)
    slide_loss, d_logits = cross_entropy(fwd.slide_logits, label)

    if pseudo is None and config.c2 > 0:
        pseudo = generate_pseudo_labels(fwd.attention, label, config)

    if pseudo is not None and config.c2 > 0:
        cluster_logits = cluster_forward(fwd.embedded, params)
        patch_loss, d_cluster = patch_loss_and_grads(cluster_logits, pseudo, config)
        d_cluster *= config.c2
    else:
        pseudo = pseudo or PseudoLabelSet(mutually_exclusive=config.mutually_exclusive)
        patch_loss, d_cluster = 0.0, None

    total = config.c1 * slide_loss + config.c2 * patch_loss
    grads = model_backward(
        features,
        params,
        fwd,
        d_slide_logits=config.c1 * d_logits,
        d_cluster_logits=d_cluster,
        relu_embed=relu_embed,
    )
    return BagLossResult(
        total=total,
        slide_loss=slide_loss,
        patch_loss=patch_loss,
        grads=grads,
        forward=fwd,
        pseudo=pseudo,
    )
