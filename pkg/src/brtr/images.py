"""Binary PPM (P6) and PGM (P5) images with maxval 255, as float tensors."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .tensor import FormatError


def _tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    # whitespace separated header fields, '#' comments run to end of line
    out = []
    pos = 0
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos : pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos : pos + 1] == b"#":
            while pos < n and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise FormatError("truncated image header")
        out.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not buf[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after image header")
    return out, pos + 1


def decode_image(buf: bytes) -> np.ndarray:
    """Decode a P6/P5 image into an (H, W, 3) or (H, W) float64 tensor."""
    magic = buf[:2]
    if magic not in (b"P6", b"P5"):
        raise FormatError(f"unsupported image type {magic!r}; need binary P6 or P5")
    fields, start = _tokens(buf[2:], 3)
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise FormatError("non-numeric image header") from exc
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}; only 255 is supported")
    if width < 1 or height < 1:
        raise FormatError("image dimensions must be positive")
    channels = 3 if magic == b"P6" else 1
    count = width * height * channels
    raster = buf[2 + start :]
    if len(raster) != count:
        raise FormatError(f"expected {count} raster bytes, found {len(raster)}")
    pix = np.frombuffer(raster, dtype=np.uint8).astype(np.float64)
    if channels == 3:
        return pix.reshape(height, width, 3)
    return pix.reshape(height, width)


def to_bytes_255(t: np.ndarray) -> np.ndarray:
    """Round half away from zero, then clamp to [0, 255]."""
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise ValueError("image tensor contains non-finite values")
    rounded = np.sign(t) * np.floor(np.abs(t) + 0.5)
    return np.clip(rounded, 0, 255).astype(np.uint8)


def encode_image(t: np.ndarray) -> bytes:
    """Encode an (H, W, 3) tensor as P6 or an (H, W) tensor as P5."""
    t = np.asarray(t)
    if t.ndim == 3 and t.shape[2] == 3:
        magic = b"P6"
    elif t.ndim == 2:
        magic = b"P5"
    else:
        raise ValueError(f"image tensors must be HxWx3 or HxW, got shape {t.shape}")
    height, width = t.shape[:2]
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    return header + to_bytes_255(t).tobytes()


def read_image(path) -> np.ndarray:
    return decode_image(Path(path).read_bytes())


def write_image(path, t: np.ndarray) -> None:
    Path(path).write_bytes(encode_image(t))
