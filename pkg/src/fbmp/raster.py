"""Lossless float raster container and PNG import/export.

Container layout, all little-endian::

    magic    4s   b"FBMP"
    version  u16  1
    height   u32
    width    u32
    bands    u16
    dtype    u16  1 = float32
    payload  float32[bands][height][width]
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError
from .ops import as_bands

MAGIC = b"FBMP"
VERSION = 1
DTYPE_F32 = 1
_HEADER = struct.Struct("<4sHIIHH")
HEADER_SIZE = _HEADER.size


def encode_raster(img) -> bytes:
    a = as_bands(img)
    H, W, N = a.shape
    if N > 0xFFFF:
        raise FormatError(f"too many bands ({N})")
    head = _HEADER.pack(MAGIC, VERSION, H, W, N, DTYPE_F32)
    payload = np.ascontiguousarray(a.transpose(2, 0, 1), dtype="<f4").tobytes()
    return head + payload


def decode_raster(data: bytes) -> np.ndarray:
    """Parse a container; returns an ``(H, W, N)`` float32 array."""
    if len(data) < HEADER_SIZE:
        raise FormatError(f"header truncated: {len(data)} of {HEADER_SIZE} bytes")
    magic, version, H, W, N, dtype = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if dtype != DTYPE_F32:
        raise FormatError(f"unsupported dtype code {dtype}")
    need = H * W * N * 4
    have = len(data) - HEADER_SIZE
    if have != need:
        raise FormatError(f"payload length {have} bytes, expected {need} for {H}x{W}x{N}")
    a = np.frombuffer(data, dtype="<f4", offset=HEADER_SIZE).reshape(N, H, W)
    return a.transpose(1, 2, 0).astype(np.float32)


def save_raster(img, path) -> None:
    Path(path).write_bytes(encode_raster(img))


def load_raster(path) -> np.ndarray:
    return decode_raster(Path(path).read_bytes())


def import_png(path, scale: float | None = None) -> np.ndarray:
    """Read an 8/16-bit grayscale or RGB image as floats in ``[0, 1]``.

    ``scale`` overrides the divisor (default 255 or 65535 by bit depth).
    """
    with Image.open(path) as im:
        mode = im.mode
        if mode in ("L", "RGB"):
            a = np.asarray(im, dtype=np.float64)
            full = 255.0
        elif mode in ("I;16", "I;16B", "I;16L", "I"):
            a = np.asarray(im, dtype=np.float64)
            full = 65535.0
            if mode == "I" and a.max(initial=0) > 65535:
                raise FormatError("32-bit integer images are not supported")
        else:
            raise FormatError(f"unsupported PNG mode {mode!r}")
    return as_bands(a / (scale if scale is not None else full))


def to_uint8(plane: np.ndarray, residual: bool = False) -> np.ndarray:
    """Map ``[0, 1]`` floats to 8-bit. Residual mode shows ``2*r + 128`` (r in 8-bit units)."""
    v = np.asarray(plane, dtype=np.float64) * 255.0
    if residual:
        v = 2.0 * v + 128.0
    return np.clip(np.rint(v), 0, 255).astype(np.uint8)


def export_png(img, path, bands=None, residual: bool = False) -> None:
    """Write one band as grayscale or three bands as RGB."""
    a = as_bands(img)
    N = a.shape[2]
    if bands is None:
        bands = (0,) if N < 3 else (0, 1, 2)
    bands = tuple(int(b) for b in bands)
    if len(bands) not in (1, 3):
        raise FormatError(f"select 1 or 3 bands, got {len(bands)}")
    if any(b < 0 or b >= N for b in bands):
        raise FormatError(f"band selection {bands} out of range for {N} bands")
    q = to_uint8(a[:, :, list(bands)], residual=residual)
    if len(bands) == 1:
        Image.fromarray(np.ascontiguousarray(q[:, :, 0])).save(path, format="PNG")
    else:
        Image.fromarray(np.ascontiguousarray(q)).save(path, format="PNG")
