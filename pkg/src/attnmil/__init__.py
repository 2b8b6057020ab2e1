"""attnmil: weakly-supervised attention-based multiple-instance learning,
from raster-image preprocessing to trained checkpoints and heatmaps."""

from .bags import FeatureBag, load_bag, read_bag, save_bag, write_bag
from .baselines import MilParams, init_mil_params, mil_forward, mmil_forward
from .checkpoint import load_checkpoint, save_checkpoint
from .linalg import finite_diff_check, gated_activation, make_rng, softmax
from .metrics import auc_mw, confidence_summary, macro_ovr_auc, pca_project
from .losses import (
    LossConfig,
    PseudoLabelSet,
    cross_entropy,
    generate_pseudo_labels,
    smooth_svm_loss,
    svm_loss,
    total_loss,
)
from .model import (
    AttentionResult,
    ClamParams,
    attention_forward,
    cluster_forward,
    embed_instances,
    init_params,
    model_backward,
)
from .objective import clam_loss_and_grads
from .synth import SynthSpec, generate_bags
from .training import (
    AdamState,
    ClamAdapter,
    EarlyStopState,
    MilAdapter,
    TrainConfig,
    adam_step,
    balanced_sample_epoch,
    evaluate_fold,
    fit,
    monte_carlo_split,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AttentionResult",
    "ClamAdapter",
    "ClamParams",
    "EarlyStopState",
    "FeatureBag",
    "LossConfig",
    "MilAdapter",
    "MilParams",
    "PseudoLabelSet",
    "SynthSpec",
    "TrainConfig",
    "adam_step",
    "attention_forward",
    "auc_mw",
    "balanced_sample_epoch",
    "confidence_summary",
    "clam_loss_and_grads",
    "cluster_forward",
    "cross_entropy",
    "embed_instances",
    "evaluate_fold",
    "finite_diff_check",
    "fit",
    "gated_activation",
    "generate_bags",
    "generate_pseudo_labels",
    "init_mil_params",
    "init_params",
    "load_bag",
    "load_checkpoint",
    "macro_ovr_auc",
    "make_rng",
    "mil_forward",
    "mmil_forward",
    "model_backward",
    "monte_carlo_split",
    "pca_project",
    "read_bag",
    "save_bag",
    "save_checkpoint",
    "smooth_svm_loss",
    "softmax",
    "svm_loss",
    "total_loss",
    "write_bag",
]
