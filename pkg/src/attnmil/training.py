"""Training loop: balanced sampling, Adam, early stopping, Monte-Carlo
cross-validation splits, and fold evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import metrics as metrics_mod
from .bags import FeatureBag
from .baselines import MilParams, mil_loss_and_grads, mil_forward, mmil_forward
from .errors import ConfigError, DataError, TrainingError
from .kernels import adam_update
from .linalg import make_rng
from .losses import LossConfig, cross_entropy
from .model import ClamParams, attention_forward
from .objective import clam_loss_and_grads


@dataclass
class TrainConfig:
    learning_rate: float = 2e-4
    weight_decay: float = 1e-5
    min_epochs: int = 50
    max_epochs: int = 200
    patience: int = 20
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.min_epochs > self.max_epochs:
            raise ConfigError("min_epochs must be <= max_epochs")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")


# -- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, config: TrainConfig):
    """One in-place Adam update over every parameter block. L2 decay is
    added to the gradients before the moment updates."""
    state.step_count += 1
    for (name, theta), (_, g) in zip(params.blocks(), grads.blocks()):
        if theta.shape != g.shape:
            raise ConfigError(f"gradient shape mismatch for block {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        adam_update(
            theta,
            g,
            state.m[name],
            state.v[name],
            state.step_count,
            config.learning_rate,
            state.beta1,
            state.beta2,
            state.eps,
            config.weight_decay,
        )
    return params, state


# -- early stopping ---------------------------------------------------------


@dataclass
class EarlyStopState:
    min_epochs: int
    max_epochs: int
    patience: int
    best_val_loss: float = math.inf
    best_epoch: int = 0
    epochs_since_best: int = 0
    best_checkpoint: object = None

    def update(self, epoch: int, val_loss: float, params=None) -> bool:
        """Record one epoch; returns True when training should stop."""
        if val_loss < self.best_val_loss:
            self.best_val_loss = val_loss
            self.best_epoch = epoch
            self.epochs_since_best = 0
            if params is not None:
                self.best_checkpoint = params.copy()
        else:
            self.epochs_since_best += 1
        if epoch >= self.max_epochs:
            return True
        return epoch >= self.min_epochs and self.epochs_since_best > self.patience


# -- splits and sampling ----------------------------------------------------


@dataclass
class SplitPlan:
    folds: list  # list of (train_ids, val_ids, test_ids), each a list of case ids
    fractions: tuple = (0.8, 0.1, 0.1)


def monte_carlo_split(
    cases: list[tuple[str, int]],
    n_folds: int,
    rng: np.random.Generator,
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> SplitPlan:
    """Repeated random class-stratified case-level partitions.

    ``cases`` is a list of (case_id, class). Every class needs at least 3
    cases so each of train/val/test is non-empty for it.
    """
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {fractions}")
    by_class: dict[int, list[str]] = {}
    for case_id, cls in cases:
        by_class.setdefault(cls, []).append(case_id)
    for cls, ids in sorted(by_class.items()):
        if len(ids) < 3:
            raise DataError(
                f"class {cls} has only {len(ids)} case(s); need at least 3"
            )
    folds = []
    for _ in range(n_folds):
        train, val, test = [], [], []
        for cls in sorted(by_class):
            ids = list(by_class[cls])
            rng.shuffle(ids)
            n = len(ids)
            n_val = max(1, round(n * fractions[1]))
            n_test = max(1, round(n * fractions[2]))
            if n - n_val - n_test < 1:
                raise DataError(f"class {cls}: too few cases for fractions")
            val.extend(ids[:n_val])
            test.extend(ids[n_val : n_val + n_test])
            train.extend(ids[n_val + n_test :])
        folds.append((sorted(train), sorted(val), sorted(test)))
    return SplitPlan(folds=folds, fractions=tuple(fractions))


def balanced_sample_epoch(
    labels: np.ndarray, rng: np.random.Generator, n_draws: int | None = None
) -> np.ndarray:
    """Indices for one epoch: multinomial draws with replacement, each slide
    weighted inversely to its class frequency."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("empty training set")
    counts = np.bincount(labels)
    if np.any(counts[np.unique(labels)] == 0):
        raise DataError("class with zero slides")
    weights = 1.0 / counts[labels]
    weights /= weights.sum()
    n = n_draws if n_draws is not None else labels.size
    return rng.choice(labels.size, size=n, replace=True, p=weights)


def balanced_weights(labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    counts = np.bincount(labels)
    w = 1.0 / counts[labels]
    return w / w.sum()


# -- model adapters ---------------------------------------------------------


class ClamAdapter:
    """Binds attention-model params to the generic training loop."""

    kind = "clam"

    def __init__(self, params: ClamParams, loss_config: LossConfig, relu_embed=True):
        self.params = params
        self.loss_config = loss_config
        self.relu_embed = relu_embed

    def train_loss_and_grads(self, bag: FeatureBag):
        res = clam_loss_and_grads(
            bag.features64(),
            bag.label,
            self.params,
            self.loss_config,
            relu_embed=self.relu_embed,
        )
        return res.total, res.grads

    def val_loss(self, bag: FeatureBag) -> float:
        fwd = attention_forward(bag.features64(), self.params, self.relu_embed)
        loss, _ = cross_entropy(fwd.slide_logits, bag.label)
        return loss

    def predict_probs(self, bag: FeatureBag) -> np.ndarray:
        fwd = attention_forward(bag.features64(), self.params, self.relu_embed)
        return fwd.probs


class MilAdapter:
    kind = "mil"

    def __init__(self, params: MilParams, loss_config: LossConfig | None = None):
        self.params = params

    def train_loss_and_grads(self, bag: FeatureBag):
        loss, grads, _, _ = mil_loss_and_grads(
            bag.features64(), bag.label, self.params
        )
        return loss, grads

    def val_loss(self, bag: FeatureBag) -> float:
        loss, _, _, _ = mil_loss_and_grads(bag.features64(), bag.label, self.params)
        return loss

    def predict_probs(self, bag: FeatureBag) -> np.ndarray:
        fwd = mil_forward if self.params.n_classes == 2 else mmil_forward
        _, _, probs = fwd(bag.features64(), self.params)
        return probs


# -- training loop ----------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    stopped: bool


@dataclass
class FitResult:
    params: object
    log: list
    best_epoch: int
    best_val_loss: float


def fit(
    adapter,
    train_bags: list[FeatureBag],
    val_bags: list[FeatureBag],
    config: TrainConfig,
) -> FitResult:
    """Batch-size-1 training with class-balanced sampling and Adam; keeps the
    checkpoint with the lowest mean validation cross-entropy."""
    if not train_bags or not val_bags:
        raise DataError("train and validation sets must be non-empty")
    rng = make_rng(config.seed)
    labels = np.array([b.label for b in train_bags])
    opt = AdamState()
    stopper = EarlyStopState(
        min_epochs=config.min_epochs,
        max_epochs=config.max_epochs,
        patience=config.patience,
    )
    log = []
    for epoch in range(1, config.max_epochs + 1):
        order = balanced_sample_epoch(labels, rng)
        total = 0.0
        for idx in order:
            loss, grads = adapter.train_loss_and_grads(train_bags[idx])
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite training loss at epoch {epoch}")
            total += loss
            adam_step(adapter.params, grads, opt, config)
        train_loss = total / len(order)
        val_loss = float(np.mean([adapter.val_loss(b) for b in val_bags]))
        if not np.isfinite(val_loss):
            raise TrainingError(f"non-finite validation loss at epoch {epoch}")
        stop = stopper.update(epoch, val_loss, adapter.params)
        log.append(EpochRecord(epoch, train_loss, val_loss, stop))
        if stop:
            break
    best = stopper.best_checkpoint
    return FitResult(
        params=best,
        log=log,
        best_epoch=stopper.best_epoch,
        best_val_loss=stopper.best_val_loss,
    )


def format_log(log: list[EpochRecord]) -> str:
    lines = ["epoch,train_loss,val_loss,stopped"]
    for rec in log:
        lines.append(
            f"{rec.epoch},{rec.train_loss!r},{rec.val_loss!r},{int(rec.stopped)}"
        )
    return "\n".join(lines) + "\n"


# -- evaluation -------------------------------------------------------------


@dataclass
class FoldResult:
    slide_ids: list
    labels: np.ndarray
    probs: np.ndarray  # (N, n)
    per_class_auc: list
    macro_auc: float
    confidence: metrics_mod.ConfidenceSummary


def evaluate_fold(adapter, test_bags: list[FeatureBag]) -> FoldResult:
    if not test_bags:
        raise DataError("empty test set")
    ordered = sorted(test_bags, key=lambda b: b.slide_id)
    probs = np.array([adapter.predict_probs(b) for b in ordered])
    labels = np.array([b.label for b in ordered])
    per_class, macro = metrics_mod.macro_ovr_auc(probs, labels)
    preds = np.argmax(probs, axis=1)
    conf = metrics_mod.confidence_summary(probs, labels, preds)
    return FoldResult(
        slide_ids=[b.slide_id for b in ordered],
        labels=labels,
        probs=probs,
        per_class_auc=per_class,
        macro_auc=macro,
        confidence=conf,
    )
