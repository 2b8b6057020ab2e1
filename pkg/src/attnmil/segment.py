"""Tissue segmentation, exhaustive patch-grid extraction, and the
deterministic stub feature extractor.

Segmentation runs on a downsampled RGB raster: HSV conversion, median blur
of the saturation channel, binary threshold, morphological closing, then
contour extraction with an area filter. Patch coordinates are produced at
full resolution; a patch is kept when its center falls inside a retained
contour (tested on the rasterized foreground mask).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import cv2
import numpy as np

from .errors import ConfigError, DimensionError
from .linalg import make_rng

PATCH_SIZE = 256


@dataclass
class SegParams:
    downsample: int = 32
    sat_thresh: int = 8
    median_kernel: int = 7
    close_kernel: int = 4
    min_area: int = 512

    def __post_init__(self):
        if self.median_kernel % 2 == 0 or self.median_kernel < 1:
            raise ConfigError("median_kernel must be odd and positive")
        if self.downsample < 1 or self.close_kernel < 1 or self.min_area < 0:
            raise ConfigError("invalid segmentation parameter")


@dataclass
class SegmentationMask:
    mask: np.ndarray  # (H, W) uint8, 0/255, filled from retained contours
    contours: list  # list of (N, 2) int arrays in mask coordinates
    areas: list  # contour areas in mask pixels

    @property
    def empty(self) -> bool:
        return len(self.contours) == 0


def segment_tissue(image: np.ndarray, params: SegParams | None = None) -> SegmentationMask:
    """Saturation-threshold tissue mask on an already-downsampled image.

    An all-background image yields an empty mask, not an error.
    """
    params = params or SegParams()
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.shape[0] < 1:
        raise DimensionError(f"expected (H, W, 3) image, got {image.shape}")
    hsv = cv2.cvtColor(image.astype(np.uint8), cv2.COLOR_RGB2HSV)
    sat = cv2.medianBlur(hsv[:, :, 1], params.median_kernel)
    _, binary = cv2.threshold(sat, params.sat_thresh, 255, cv2.THRESH_BINARY)
    kernel = np.ones((params.close_kernel, params.close_kernel), dtype=np.uint8)
    closed = cv2.morphologyEx(binary, cv2.MORPH_CLOSE, kernel)
    found, _ = cv2.findContours(closed, cv2.RETR_EXTERNAL, cv2.CHAIN_APPROX_SIMPLE)
    contours, areas = [], []
    for c in found:
        area = cv2.contourArea(c)
        if area >= params.min_area:
            contours.append(c.reshape(-1, 2))
            areas.append(float(area))
    mask = np.zeros(image.shape[:2], dtype=np.uint8)
    if contours:
        cv2.drawContours(
            mask, [c.reshape(-1, 1, 2) for c in contours], -1, 255, thickness=-1
        )
    return SegmentationMask(mask=mask, contours=contours, areas=areas)


@dataclass
class PatchGrid:
    patch_size: int
    step: int
    coords: np.ndarray  # (M, 2) int32 full-resolution patch origins (x, y)
    downsample: int = 1


def extract_patch_grid(
    seg: SegmentationMask,
    patch_size: int = PATCH_SIZE,
    overlap_fraction: float = 0.0,
    downsample: int = 1,
) -> PatchGrid:
    """Exhaustive row-major grid over the full-resolution extent; a grid
    point is emitted when the patch center lands on foreground."""
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigError(f"overlap_fraction must be in [0, 1), got {overlap_fraction}")
    step = max(1, int(patch_size * (1.0 - overlap_fraction)))
    mask = seg.mask
    full_h = mask.shape[0] * downsample
    full_w = mask.shape[1] * downsample
    coords = []
    for y in range(0, full_h - patch_size + 1, step):
        for x in range(0, full_w - patch_size + 1, step):
            cx = (x + patch_size // 2) // downsample
            cy = (y + patch_size // 2) // downsample
            if mask[cy, cx] > 0:
                coords.append((x, y))
    arr = np.array(coords, dtype=np.int32).reshape(-1, 2)
    return PatchGrid(patch_size=patch_size, step=step, coords=arr, downsample=downsample)


def stub_features(patch: np.ndarray, feat_dim: int = 1024, seed: int = 0) -> np.ndarray:
    """Deterministic stand-in for a pretrained feature extractor.

    Computes 8x8 block color means (192 values) plus per-block luminance
    variances (64 values) and projects them to ``feat_dim`` with a
    seed-fixed Gaussian matrix. Identical patch and seed give identical
    output bit for bit.
    """
    patch = np.asarray(patch)
    if patch.shape != (PATCH_SIZE, PATCH_SIZE, 3):
        raise DimensionError(f"expected (256, 256, 3) patch, got {patch.shape}")
    blocks = patch.reshape(8, 32, 8, 32, 3).astype(np.float64)
    means = blocks.mean(axis=(1, 3)) / 255.0  # (8, 8, 3)
    lum = (
        0.299 * blocks[..., 0] + 0.587 * blocks[..., 1] + 0.114 * blocks[..., 2]
    ) / 255.0
    variances = lum.var(axis=(1, 3))  # (8, 8)
    raw = np.concatenate([means.ravel(), variances.ravel()])  # 256 stats
    proj = make_rng(seed).normal(size=(feat_dim, raw.size)) / np.sqrt(raw.size)
    return proj @ raw


# -- per-slide parameter file -----------------------------------------------


def format_seg_param_file(entries: dict[str, SegParams]) -> str:
    """One slide per line: ``slide_id,key=value,...`` with editable fields."""
    lines = []
    for slide_id in sorted(entries):
        fields = ",".join(f"{k}={v}" for k, v in asdict(entries[slide_id]).items())
        lines.append(f"{slide_id},{fields}")
    return "\n".join(lines) + "\n"


def parse_seg_param_file(text: str) -> dict[str, SegParams]:
    entries = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        slide_id = parts[0]
        kwargs = {}
        for part in parts[1:]:
            if "=" not in part:
                raise ConfigError(f"line {lineno}: expected key=value, got {part!r}")
            key, value = part.split("=", 1)
            kwargs[key.strip()] = int(value)
        entries[slide_id] = SegParams(**kwargs)
    return entries
