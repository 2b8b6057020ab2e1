"""Flat binary checkpoints for model weights.

Layout (all integers little-endian u32 unless noted):

  magic     8 bytes: b"CLAMCKPT" (attention model) or b"MILCKPT\\0" (baseline)
  version   u32 (currently 1)
  n_classes u32
  D         u32 (instance feature dimension)
  matrices  for each parameter block, in the order given by ``blocks()``:
            rows u32, cols u32, rows*cols float64 little-endian, row-major.
            1-D biases are stored with rows=1.

Round-trips are bit-exact.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError
from .model import ClamParams

CLAM_MAGIC = b"CLAMCKPT"
MIL_MAGIC = b"MILCKPT\x00"
VERSION = 1


def _block_shapes(arr: np.ndarray):
    """Serialize any block as a list of 2-D matrices."""
    if arr.ndim == 1:
        return [arr.reshape(1, -1)]
    if arr.ndim == 2:
        return [arr]
    return [arr[i] for i in range(arr.shape[0])]  # stacked heads


def params_to_bytes(params, magic: bytes = CLAM_MAGIC) -> bytes:
    chunks = [magic, struct.pack("<III", VERSION, params.n_classes, params.feat_dim)]
    for _, arr in params.blocks():
        for mat in _block_shapes(arr):
            rows, cols = mat.shape
            chunks.append(struct.pack("<II", rows, cols))
            chunks.append(np.ascontiguousarray(mat, dtype="<f8").tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def matrix(self, expected_shape, what: str) -> np.ndarray:
        at = self.pos
        rows = self.u32(f"{what} rows")
        cols = self.u32(f"{what} cols")
        if (rows, cols) != expected_shape:
            raise FormatError(
                f"{what}: expected shape {expected_shape}, found ({rows}, {cols})",
                offset=at,
            )
        raw = self.take(rows * cols * 8, f"{what} payload")
        return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(rows, cols)


def params_from_bytes(data: bytes, magic: bytes = CLAM_MAGIC, factory=None):
    """Parse a checkpoint. ``factory(n_classes, feat_dim)`` must return a
    zero-initialized parameter object whose ``blocks()`` defines the layout;
    defaults to the attention model."""
    r = _Reader(data)
    got = r.take(8, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=8)
    n_classes = r.u32("n_classes")
    feat_dim = r.u32("feat_dim")
    if factory is None:
        factory = _zero_clam
    params = factory(n_classes, feat_dim)
    for name, arr in params.blocks():
        for i, mat in enumerate(_block_shapes(arr)):
            mat[:] = r.matrix(mat.shape, f"{name}[{i}]")
    if r.pos != len(data):
        raise FormatError(
            f"{len(data) - r.pos} trailing bytes after checkpoint", offset=r.pos
        )
    params.validate()
    return params


def _zero_clam(n_classes: int, feat_dim: int) -> ClamParams:
    from .model import ATTN_DIM, EMBED_DIM

    return ClamParams(
        n_classes=n_classes,
        feat_dim=feat_dim,
        w1=np.zeros((EMBED_DIM, feat_dim)),
        b1=np.zeros(EMBED_DIM),
        va=np.zeros((ATTN_DIM, EMBED_DIM)),
        bva=np.zeros(ATTN_DIM),
        ua=np.zeros((ATTN_DIM, EMBED_DIM)),
        bua=np.zeros(ATTN_DIM),
        wa=np.zeros((n_classes, ATTN_DIM)),
        ba=np.zeros(n_classes),
        wc=np.zeros((n_classes, EMBED_DIM)),
        bc=np.zeros(n_classes),
        winst=np.zeros((n_classes, 2, EMBED_DIM)),
        binst=np.zeros((n_classes, 2)),
    )


def save_checkpoint(params, path, magic: bytes = CLAM_MAGIC):
    from .util import atomic_write_bytes

    atomic_write_bytes(path, params_to_bytes(params, magic=magic))


def load_checkpoint(path, magic: bytes = CLAM_MAGIC, factory=None):
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read(), magic=magic, factory=factory)
