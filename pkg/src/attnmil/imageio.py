"""Binary PPM (P6, maxval 255) reading and writing.

PPM keeps the image round-trips bit-exact without any imaging dependency;
images are (H, W, 3) uint8 arrays in RGB order.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError
from .util import atomic_write_bytes


def write_ppm(image: np.ndarray) -> bytes:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3 or image.dtype != np.uint8:
        raise FormatError(f"expected (H, W, 3) uint8, got {image.shape} {image.dtype}")
    h, w = image.shape[:2]
    header = f"P6\n{w} {h}\n255\n".encode("ascii")
    return header + np.ascontiguousarray(image).tobytes()


def read_ppm(data: bytes) -> np.ndarray:
    if not data.startswith(b"P6"):
        raise FormatError("not a binary PPM (P6)", offset=0)
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed
    pos = 2
    tokens = []
    while len(tokens) < 3:
        if pos >= len(data):
            raise FormatError("truncated PPM header", offset=pos)
        c = data[pos : pos + 1]
        if c == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
        elif c.isspace():
            pos += 1
        else:
            start = pos
            while pos < len(data) and not data[pos : pos + 1].isspace():
                pos += 1
            tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError:
        raise FormatError("non-numeric PPM header fields", offset=2)
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    need = w * h * 3
    if len(data) - pos < need:
        raise FormatError("truncated PPM payload", offset=pos)
    return (
        np.frombuffer(data[pos : pos + need], dtype=np.uint8)
        .reshape(h, w, 3)
        .copy()
    )


def save_ppm(image: np.ndarray, path):
    atomic_write_bytes(path, write_ppm(image))


def load_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return read_ppm(fh.read())
