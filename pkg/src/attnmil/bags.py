"""Bag container: one slide's instance features, coordinates, and label.

Serialized layout (little-endian):

  magic       8 bytes b"CLAMBAG1"
  version     u32 (currently 1)
  K           u32   instances
  D           u32   feature dimension
  label       i32   class index (-1 when unknown)
  id_len      u32   slide id byte length
  slide_id    id_len UTF-8 bytes
  patch_size  u32
  step        u32
  features    K*D float32, row-major
  coords      K*2 int32 (x, y) full-resolution patch origins

Round-trips are bit-exact. Features are float32 on disk and promoted to
float64 in memory for the numerics.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError
from .util import atomic_write_bytes

MAGIC = b"CLAMBAG1"
VERSION = 1
_MAX_ELEMENTS = 1 << 31  # refuse absurd K*D before allocating


@dataclass
class FeatureBag:
    slide_id: str
    label: int
    features: np.ndarray  # (K, D) float32
    coords: np.ndarray  # (K, 2) int32
    patch_size: int = 256
    step: int = 256
    # hidden ground truth for synthetic bags; not serialized
    evidence_idx: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.features.shape[1]

    def features64(self) -> np.ndarray:
        return np.asarray(self.features, dtype=np.float64)


def write_bag(bag: FeatureBag) -> bytes:
    feats = np.ascontiguousarray(bag.features, dtype="<f4")
    coords = np.ascontiguousarray(bag.coords, dtype="<i4")
    k, d = feats.shape
    if coords.shape != (k, 2):
        raise FormatError(f"coords shape {coords.shape} does not match K={k}")
    sid = bag.slide_id.encode("utf-8")
    header = MAGIC + struct.pack(
        "<IIIiI", VERSION, k, d, int(bag.label), len(sid)
    )
    header += sid + struct.pack("<II", bag.patch_size, bag.step)
    return header + feats.tobytes() + coords.tobytes()


def read_bag(data: bytes) -> FeatureBag:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated while reading {what}", offset=pos)
        out = data[pos : pos + n]
        pos += n
        return out

    magic = take(8, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    version, k, d, label, id_len = struct.unpack("<IIIiI", take(20, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=8)
    if k * d > _MAX_ELEMENTS:
        raise FormatError(f"implausible K*D = {k}*{d}", offset=12)
    slide_id = take(id_len, "slide id").decode("utf-8")
    patch_size, step = struct.unpack("<II", take(8, "patch geometry"))
    feats = np.frombuffer(take(k * d * 4, "features"), dtype="<f4").reshape(k, d)
    coords = np.frombuffer(take(k * 2 * 4, "coords"), dtype="<i4").reshape(k, 2)
    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes", offset=pos)
    return FeatureBag(
        slide_id=slide_id,
        label=label,
        features=feats.astype(np.float32),
        coords=coords.astype(np.int32),
        patch_size=patch_size,
        step=step,
    )


def save_bag(bag: FeatureBag, path):
    atomic_write_bytes(path, write_bag(bag))


def load_bag(path) -> FeatureBag:
    with open(path, "rb") as fh:
        return read_bag(fh.read())


def load_bag_dir(directory) -> list[FeatureBag]:
    """All *.bag files in a directory, sorted by filename."""
    bags = []
    for name in sorted(os.listdir(directory)):
        if name.endswith(".bag"):
            bags.append(load_bag(os.path.join(directory, name)))
    return bags
