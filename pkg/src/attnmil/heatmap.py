"""Attention heatmaps: percentile normalization, overlap-averaged spatial
accumulation, diverging-colormap rendering, and alpha blending."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError
from .kernels import accumulate_footprints

# 3-stop diverging colormap, linear per channel
COLOR_LOW = np.array([59.0, 76.0, 192.0])  # value 0.0, blue
COLOR_MID = np.array([221.0, 221.0, 221.0])  # value 0.5, white
COLOR_HIGH = np.array([180.0, 4.0, 38.0])  # value 1.0, red


def percentile_normalize(raw: np.ndarray, reference: np.ndarray | None = None) -> np.ndarray:
    """Map each score to its percentile rank within ``reference`` (defaults
    to ``raw`` itself), scaled to [0, 1].

    Ties take the mean rank of the tied block; values absent from the
    reference interpolate between neighboring ranks. A single-element
    reference maps everything to 0.5.
    """
    raw = np.asarray(raw, dtype=np.float64)
    ref = raw if reference is None else np.asarray(reference, dtype=np.float64)
    if ref.size == 0:
        raise DimensionError("empty reference")
    if ref.size == 1:
        return np.full(raw.shape, 0.5)
    ref_sorted = np.sort(ref)
    less = np.searchsorted(ref_sorted, raw, side="left").astype(np.float64)
    upto = np.searchsorted(ref_sorted, raw, side="right").astype(np.float64)
    equal = upto - less
    rank = np.where(equal > 0, less + (equal - 1.0) / 2.0, less - 0.5)
    rank = np.clip(rank, 0.0, ref.size - 1.0)
    return rank / (ref.size - 1.0)


@dataclass
class HeatmapGrid:
    width: int
    height: int
    score_sum: np.ndarray = field(default=None)
    hit_count: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.score_sum is None:
            self.score_sum = np.zeros((self.height, self.width))
        if self.hit_count is None:
            self.hit_count = np.zeros((self.height, self.width), dtype=np.int64)

    def values(self) -> np.ndarray:
        """Mean score where covered; NaN where nothing accumulated."""
        covered = self.hit_count > 0
        out = np.full((self.height, self.width), np.nan)
        out[covered] = self.score_sum[covered] / self.hit_count[covered]
        return out


def accumulate(
    grid: HeatmapGrid,
    coords: np.ndarray,
    patch_size: int,
    scores: np.ndarray,
):
    """Add each normalized score over its patch footprint (grid pixel space);
    footprints are clipped at the borders."""
    coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
    scores = np.atleast_1d(np.asarray(scores, dtype=np.float64))
    if coords.shape[0] != scores.shape[0]:
        raise DimensionError(f"{coords.shape[0]} coords vs {scores.shape[0]} scores")
    accumulate_footprints(
        grid.score_sum,
        grid.hit_count,
        coords[:, 0],
        coords[:, 1],
        patch_size,
        patch_size,
        scores,
    )


def colormap(values: np.ndarray) -> np.ndarray:
    """Diverging blue-white-red map on values in [0, 1]; rounds half-up."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)[..., None]
    low = COLOR_LOW + (COLOR_MID - COLOR_LOW) * (v / 0.5)
    high = COLOR_MID + (COLOR_HIGH - COLOR_MID) * ((v - 0.5) / 0.5)
    rgb = np.where(v <= 0.5, low, high)
    return np.floor(rgb + 0.5).astype(np.uint8)


def render(
    grid: HeatmapGrid, base: np.ndarray | None = None, alpha: float = 0.5
) -> np.ndarray:
    """Colormapped heatmap, optionally alpha-blended onto ``base``.

    Uncovered pixels show the base unchanged (white without a base).
    Blending rounds half-up per channel.
    """
    values = grid.values()
    covered = ~np.isnan(values)
    heat = colormap(np.nan_to_num(values, nan=0.0)).astype(np.float64)
    if base is None:
        out = np.full((grid.height, grid.width, 3), 255, dtype=np.uint8)
        out[covered] = np.floor(heat + 0.5).astype(np.uint8)[covered]
        return out
    base = np.asarray(base)
    if base.shape != (grid.height, grid.width, 3):
        raise DimensionError(
            f"base {base.shape} does not match grid ({grid.height}, {grid.width}, 3)"
        )
    blended = np.floor(alpha * heat + (1.0 - alpha) * base.astype(np.float64) + 0.5)
    out = base.copy()
    out[covered] = blended.astype(np.uint8)[covered]
    return out


def score_csv(coords: np.ndarray, raw: np.ndarray, normalized: np.ndarray) -> str:
    lines = ["coord_x,coord_y,raw,normalized"]
    for (x, y), r, n in zip(coords, raw, normalized):
        lines.append(f"{int(x)},{int(y)},{float(r)!r},{float(n)!r}")
    return "\n".join(lines) + "\n"
