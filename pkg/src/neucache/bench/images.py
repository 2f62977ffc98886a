"""8-bit PNG and binary PPM writers (byte-stable for equal inputs)."""
from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np


def to_uint8(img) -> np.ndarray:
    """C x H x W (or H x W) floats in [0, 1] -> H x W x 3 uint8."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = np.stack([a] * 3)
    if a.ndim != 3 or a.shape[0] not in (1, 3):
        raise ValueError(f"expected a 1- or 3-channel C x H x W image, got {a.shape}")
    if a.shape[0] == 1:
        a = np.repeat(a, 3, axis=0)
    return np.round(np.clip(a, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)


def _chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)


def encode_png(img) -> bytes:
    px = to_uint8(img)
    h, w, _ = px.shape
    raw = b"".join(b"\x00" + px[y].tobytes() for y in range(h))
    return (b"\x89PNG\r\n\x1a\n" + _chunk(b"IHDR", struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0))
            + _chunk(b"IDAT", zlib.compress(raw, 9)) + _chunk(b"IEND", b""))


def encode_ppm(img) -> bytes:
    px = to_uint8(img)
    h, w, _ = px.shape
    return f"P6\n{w} {h}\n255\n".encode() + px.tobytes()


def write_png(path, img) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_png(img))
    return path


def write_ppm(path, img) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_ppm(img))
    return path
