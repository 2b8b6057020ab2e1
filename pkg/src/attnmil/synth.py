"""Synthetic bag generator: a few class-specific evidence instances hidden
among shared background instances, with the evidence indices recorded as
ground truth for attention-localization tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bags import FeatureBag
from .errors import ConfigError
from .linalg import make_rng

# Background instances sit this many noise standard deviations away from the
# class-mean subspace, along an axis no class uses.  Evidence is individually
# distinguishable from background (the analogue of tumor vs normal tissue);
# ``separation`` then only controls how hard the classes are to tell apart.
BACKGROUND_OFFSET_SIGMAS = 3.0


@dataclass
class SynthSpec:
    n_classes: int = 2
    feat_dim: int = 64
    k_min: int = 50
    k_max: int = 150
    evidence_fraction: float = 0.1
    separation: float = 2.0
    noise_std: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if not 0.0 < self.evidence_fraction <= 1.0:
            raise ConfigError("evidence_fraction must be in (0, 1]")
        if self.k_min < 1 or self.k_max < self.k_min:
            raise ConfigError("invalid instance-count range")
        if self.evidence_fraction * self.k_min < 1.0:
            raise ConfigError("evidence_fraction * k_min must be >= 1")
        if self.feat_dim <= self.n_classes:
            raise ConfigError("feat_dim must be > n_classes")
        if self.noise_std <= 0:
            raise ConfigError("noise_std must be > 0")


def class_mean(spec: SynthSpec, cls: int) -> np.ndarray:
    """Evidence mean for a class: separation along its own axis."""
    mu = np.zeros(spec.feat_dim)
    mu[cls] = spec.separation
    return mu


def background_mean(spec: SynthSpec) -> np.ndarray:
    """Shared background mean, offset along the last axis (unused by any
    class) so background and evidence instances are distributionally
    distinct regardless of the class separation."""
    mu = np.zeros(spec.feat_dim)
    mu[-1] = BACKGROUND_OFFSET_SIGMAS * spec.noise_std
    return mu


def generate_bag(spec: SynthSpec, label: int, index: int) -> FeatureBag:
    """One bag; its RNG stream is keyed by ``seed ^ index`` so bags can be
    generated independently and in parallel."""
    rng = make_rng(spec.seed ^ (index + 1))
    k = int(rng.integers(spec.k_min, spec.k_max + 1))
    n_ev = math.ceil(spec.evidence_fraction * k)
    features = rng.normal(0.0, spec.noise_std, size=(k, spec.feat_dim))
    features += background_mean(spec)
    evidence_idx = np.sort(rng.choice(k, size=n_ev, replace=False))
    features[evidence_idx] += class_mean(spec, label) - background_mean(spec)
    cols = max(1, int(math.isqrt(k)))
    coords = np.array(
        [((i % cols) * 256, (i // cols) * 256) for i in range(k)], dtype=np.int32
    )
    return FeatureBag(
        slide_id=f"synth-{index:05d}",
        label=label,
        features=features.astype(np.float32),
        coords=coords,
        patch_size=256,
        step=256,
        evidence_idx=evidence_idx,
    )


def generate_bags(spec: SynthSpec, count: int, offset: int = 0) -> list[FeatureBag]:
    """``count`` bags with labels cycling through the classes. ``offset``
    shifts the per-bag seed keys so separate calls never overlap."""
    return [
        generate_bag(spec, label=(offset + i) % spec.n_classes, index=offset + i)
        for i in range(count)
    ]
