"""Dense N-way tensors and the multilinear primitives used throughout.

Tensors are plain ``numpy.ndarray`` objects of dtype float64.  Whenever a
tensor is flattened (``vectorize``, file payloads, merged indices) the order
is first-index-fastest, i.e. Fortran order.  Masks are boolean arrays of the
same shape.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

TENSOR_MAGIC = b"BRT1"
MASK_MAGIC = b"BRM1"


class FormatError(ValueError):
    """Raised when a tensor or mask file cannot be decoded."""


def as_tensor(data, shape=None) -> np.ndarray:
    """Return ``data`` as a float64 array; a flat ``data`` is folded into ``shape``."""
    arr = np.asarray(data, dtype=np.float64)
    if shape is not None:
        arr = unvectorize(arr.ravel(order="F"), shape)
    check_shape(arr.shape)
    return arr


def check_shape(shape) -> tuple[int, ...]:
    shape = tuple(int(d) for d in shape)
    if len(shape) < 1:
        raise ValueError("a tensor needs at least one mode")
    if any(d < 1 for d in shape):
        raise ValueError(f"all dimensions must be >= 1, got {shape}")
    return shape


def vectorize(t: np.ndarray) -> np.ndarray:
    """Flatten ``t`` first-index-fastest."""
    return np.asarray(t).reshape(-1, order="F")


def unvectorize(v: np.ndarray, shape) -> np.ndarray:
    """Inverse of :func:`vectorize`."""
    shape = check_shape(shape)
    v = np.asarray(v)
    if v.size != int(np.prod(shape)):
        raise ValueError(f"cannot fold {v.size} values into shape {shape}")
    return v.reshape(shape, order="F")


def reshape(t: np.ndarray, shape) -> np.ndarray:
    """Refold ``t`` into ``shape`` keeping the first-index-fastest linearization."""
    return unvectorize(vectorize(t), shape)


def hadamard(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a * b


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Block matrix with block (i, j) equal to ``a[i, j] * b``.

    Satisfies ``vec(B X A^T) = kron(A, B) vec(X)`` for column-major ``vec``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("kronecker expects two matrices")
    p, q = a.shape
    r, s = b.shape
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(p * r, q * s)


def inner(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.sum(hadamard(a, b)))


def frobenius_norm(t: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(t, dtype=np.float64))))


def trace(m: np.ndarray) -> float:
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"trace needs a square matrix, got shape {m.shape}")
    return float(np.trace(m))


def circular_permute(t: np.ndarray, n: int) -> np.ndarray:
    """Rotate the modes left by ``n``: result[i_{n+1}..i_N, i_1..i_n] = t[i_1..i_N]."""
    t = np.asarray(t)
    order = t.ndim
    if not 0 <= n <= order:
        raise ValueError(f"shift {n} outside [0, {order}]")
    axes = [(k + n) % order for k in range(order)]
    return np.transpose(t, axes)


def _encode_header(magic: bytes, shape) -> bytes:
    shape = check_shape(shape)
    return magic + struct.pack("<I", len(shape)) + struct.pack(f"<{len(shape)}Q", *shape)


def _decode_header(buf: bytes, magic: bytes) -> tuple[tuple[int, ...], int]:
    if len(buf) < 8 or buf[:4] != magic:
        raise FormatError(f"bad magic, expected {magic!r}")
    (order,) = struct.unpack_from("<I", buf, 4)
    end = 8 + 8 * order
    if order < 1 or len(buf) < end:
        raise FormatError("truncated header")
    shape = struct.unpack_from(f"<{order}Q", buf, 8)
    return check_shape(shape), end


def tensor_to_bytes(t: np.ndarray) -> bytes:
    t = np.asarray(t, dtype=np.float64)
    payload = vectorize(t).astype("<f8").tobytes()
    return _encode_header(TENSOR_MAGIC, t.shape) + payload


def tensor_from_bytes(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one tensor starting at ``offset``; returns it with the end offset."""
    shape, hdr = _decode_header(buf[offset:], TENSOR_MAGIC)
    count = int(np.prod(shape))
    start = offset + hdr
    end = start + 8 * count
    if len(buf) < end:
        raise FormatError("truncated tensor payload")
    flat = np.frombuffer(buf, dtype="<f8", count=count, offset=start)
    return unvectorize(flat.astype(np.float64), shape), end


def mask_to_bytes(mask: np.ndarray) -> bytes:
    mask = np.asarray(mask, dtype=bool)
    payload = vectorize(mask).astype(np.uint8).tobytes()
    return _encode_header(MASK_MAGIC, mask.shape) + payload


def mask_from_bytes(buf: bytes) -> np.ndarray:
    shape, hdr = _decode_header(buf, MASK_MAGIC)
    count = int(np.prod(shape))
    if len(buf) != hdr + count:
        raise FormatError("mask payload length does not match header")
    flat = np.frombuffer(buf, dtype=np.uint8, count=count, offset=hdr)
    if np.any(flat > 1):
        raise FormatError("mask bytes must be 0 or 1")
    return unvectorize(flat.astype(bool), shape)


def save_tensor(path, t: np.ndarray) -> None:
    Path(path).write_bytes(tensor_to_bytes(t))


def load_tensor(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    t, end = tensor_from_bytes(buf)
    if end != len(buf):
        raise FormatError(f"{path}: trailing bytes after tensor payload")
    return t


def save_mask(path, mask: np.ndarray) -> None:
    Path(path).write_bytes(mask_to_bytes(mask))


def load_mask(path) -> np.ndarray:
    return mask_from_bytes(Path(path).read_bytes())
