"""Tensor-ring algebra.

A ring of N cores represents a tensor whose entry at ``(i_1, .., i_N)`` is
``Tr(Z_1(i_1) Z_2(i_2) ... Z_N(i_N))``, where ``Z_n(i_n) = cores[n-1][:, i_n, :]``.
Core ``n`` has shape ``(R_{n-1}, I_n, R_n)`` with ``R_0 = R_N``.

Mode numbers ``n`` and multi-indices passed to the entrywise functions are
1-based, matching the usual mathematical notation; everything stored is
0-based numpy.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .tensor import FormatError, tensor_from_bytes, tensor_to_bytes, unvectorize

CORES_MAGIC = b"BRTC"


def ranks_of(cores) -> tuple[int, ...]:
    """Return the rank vector ``(R_0, R_1, .., R_N)``."""
    check_cores(cores)
    return (cores[0].shape[0],) + tuple(c.shape[2] for c in cores)


def dims_of(cores) -> tuple[int, ...]:
    return tuple(c.shape[1] for c in cores)


def check_ranks(ranks) -> tuple[int, ...]:
    ranks = tuple(int(r) for r in ranks)
    if len(ranks) < 2:
        raise ValueError("a TR rank needs at least (R_0, R_1)")
    if ranks[0] != ranks[-1]:
        raise ValueError(f"TR rank must be ring-closed (R_0 == R_N), got {ranks}")
    if any(r < 1 for r in ranks):
        raise ValueError(f"TR ranks must be positive, got {ranks}")
    return ranks


def check_cores(cores, closed: bool = True) -> None:
    if len(cores) == 0:
        raise ValueError("need at least one core")
    for k, c in enumerate(cores):
        if c.ndim != 3:
            raise ValueError(f"core {k + 1} is not order-3 (shape {c.shape})")
    for k in range(len(cores) - 1):
        if cores[k].shape[2] != cores[k + 1].shape[0]:
            raise ValueError(
                f"rank mismatch between core {k + 1} {cores[k].shape} "
                f"and core {k + 2} {cores[k + 1].shape}"
            )
    if closed and cores[-1].shape[2] != cores[0].shape[0]:
        raise ValueError("last core does not close the ring")


def _check_index(idx, dims) -> tuple[int, ...]:
    idx = tuple(int(i) for i in idx)
    if len(idx) != len(dims):
        raise IndexError(f"index {idx} has wrong length for shape {dims}")
    for i, d in zip(idx, dims):
        if not 1 <= i <= d:
            raise IndexError(f"index {idx} out of range for shape {dims}")
    return tuple(i - 1 for i in idx)


def random_cores(dims, ranks, rng: np.random.Generator, scale: float = 1.0) -> list[np.ndarray]:
    ranks = check_ranks(ranks)
    if len(ranks) != len(dims) + 1:
        raise ValueError("rank vector must have length N + 1")
    return [
        scale * rng.standard_normal((ranks[k], d, ranks[k + 1]))
        for k, d in enumerate(dims)
    ]


def tr_entry(cores, idx) -> float:
    check_cores(cores)
    zidx = _check_index(idx, dims_of(cores))
    prod = cores[0][:, zidx[0], :]
    for core, i in zip(cores[1:], zidx[1:]):
        prod = prod @ core[:, i, :]
    return float(np.trace(prod))


def _merge(acc: np.ndarray, core: np.ndarray) -> np.ndarray:
    # acc (a, J, b), core (b, I, c) -> (a, J*I, c) with the old index fastest
    a, j, _ = acc.shape
    _, i, c = core.shape
    out = np.tensordot(acc, core, axes=([2], [0]))  # (a, J, I, c)
    return out.transpose(0, 2, 1, 3).reshape(a, i * j, c)


def tcp(cores) -> np.ndarray:
    """Tensor connection product of a chain of order-3 cores.

    The merged middle index runs first-index-fastest over the cores' modes.
    """
    check_cores(cores, closed=False)
    acc = np.asarray(cores[0], dtype=np.float64)
    for core in cores[1:]:
        acc = _merge(acc, core)
    return acc


def _close(acc: np.ndarray, core: np.ndarray) -> np.ndarray:
    # Tr(acc[:, j, :] @ core[:, i, :]) for all (j, i); result indexed [j, i]
    return np.einsum("pjq,qip->ji", acc, core)


def tr_full(cores) -> np.ndarray:
    """Reconstruct the full tensor from ring cores by accumulating the chain."""
    check_cores(cores)
    dims = dims_of(cores)
    if len(cores) == 1:
        return np.einsum("aia->i", cores[0]).copy()
    acc = tcp(cores[:-1])
    out = _close(acc, cores[-1])
    return unvectorize(out.reshape(-1, order="F"), dims)


def rotate(cores, n: int) -> list:
    """Cores rotated left by ``n``: (Z_{n+1}, .., Z_N, Z_1, .., Z_n)."""
    return list(cores[n:]) + list(cores[:n])


def complement_order(order: int, n: int) -> list[int]:
    """0-based core positions after core ``n`` (1-based) around the ring."""
    return [(n + k) % order for k in range(order - 1)]


def subchain_except(cores, n: int) -> np.ndarray:
    """TCP of every core except the n-th, taken in ring order starting at n+1.

    Shape ``(R_n, I_{n+1} .. I_N I_1 .. I_{n-1}, R_{n-1})``.
    """
    check_cores(cores)
    order = len(cores)
    if order < 2:
        raise ValueError("subchain needs at least two cores")
    if not 1 <= n <= order:
        raise ValueError(f"mode {n} outside [1, {order}]")
    return tcp([cores[k] for k in complement_order(order, n)])


def design_row(cores, n: int, idx) -> np.ndarray:
    """Row of the design matrix for core ``n`` at entry ``idx``.

    Returns ``vec(Q^T)`` (column-major) with ``Q`` the ordered product of the
    other cores' slices, so the entry equals ``design_row . vec(Z_n(i_n))``.
    """
    check_cores(cores)
    order = len(cores)
    if not 1 <= n <= order:
        raise ValueError(f"mode {n} outside [1, {order}]")
    zidx = _check_index(idx, dims_of(cores))
    rest = complement_order(order, n)
    if not rest:
        q = np.eye(cores[0].shape[0])
    else:
        q = cores[rest[0]][:, zidx[rest[0]], :]
        for k in rest[1:]:
            q = q @ cores[k][:, zidx[k], :]
    return q.T.reshape(-1, order="F")


def slice_vec(core: np.ndarray, i: int) -> np.ndarray:
    """Column-major ``vec`` of lateral slice ``i`` (0-based)."""
    return core[:, i, :].reshape(-1, order="F")


def tr_svd(t: np.ndarray, max_rank, rtol: float = 1e-10) -> list[np.ndarray]:
    """Sequential-SVD tensor-ring approximation of a dense tensor.

    The first unfolding's rank is split between R_0 and R_1 as evenly as
    possible; each later rank is the numerical rank of the next unfolding,
    truncated to ``max_rank``.  The split of the first bond is in an arbitrary
    basis, so later unfoldings can need more than the true ranks; the result
    is exact only when the caps leave that headroom.
    """
    t = np.asarray(t, dtype=np.float64)
    dims = t.shape
    order = len(dims)
    max_rank = check_ranks(max_rank)
    if len(max_rank) != order + 1:
        raise ValueError("max_rank must have length N + 1")
    if order == 1:
        return [t.reshape(1, dims[0], 1).copy()]

    def _svd(mat, cap):
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        keep = int(np.sum(s > rtol * s[0])) if s[0] > 0 else 1
        keep = max(1, min(keep, cap))
        return u[:, :keep], s[:keep, None] * vt[:keep]

    cap01 = max_rank[0] * max_rank[1]
    u, w = _svd(t.reshape(dims[0], -1), cap01)
    r = u.shape[1]
    r0 = max(1, min(max_rank[0], int(np.floor(np.sqrt(r)))))
    r1 = max(1, min(max_rank[1], -(-r // r0)))
    keep = min(r, r0 * r1)
    # zero columns fill the r0 x r1 grid when r is not a product
    u = np.hstack([u[:, :keep], np.zeros((dims[0], r0 * r1 - keep))])
    w = np.vstack([w[:keep], np.zeros((r0 * r1 - keep, w.shape[1]))])
    cores = [u.reshape(dims[0], r0, r1).transpose(1, 0, 2).copy()]
    rest = np.moveaxis(w.reshape((r0, r1) + dims[1:]), 0, -1)
    prev = r1
    for k in range(1, order - 1):
        mat = rest.reshape(prev * dims[k], -1)
        u, w = _svd(mat, max_rank[k + 1])
        nxt = u.shape[1]
        cores.append(u.reshape(prev, dims[k], nxt))
        rest = w.reshape((nxt,) + dims[k + 1 :] + (r0,))
        prev = nxt
    cores.append(rest.reshape(prev, dims[-1], r0).copy())
    return cores


def cores_to_bytes(cores) -> bytes:
    check_cores(cores)
    parts = [CORES_MAGIC, struct.pack("<I", len(cores))]
    parts.extend(tensor_to_bytes(c) for c in cores)
    return b"".join(parts)


def cores_from_bytes(buf: bytes) -> list[np.ndarray]:
    if len(buf) < 8 or buf[:4] != CORES_MAGIC:
        raise FormatError("bad magic, expected b'BRTC'")
    (order,) = struct.unpack_from("<I", buf, 4)
    offset = 8
    cores = []
    for _ in range(order):
        core, offset = tensor_from_bytes(buf, offset)
        if core.ndim != 3:
            raise FormatError("core payload is not order-3")
        cores.append(core)
    if offset != len(buf):
        raise FormatError("trailing bytes after core payloads")
    check_cores(cores)
    return cores


def save_cores(path, cores) -> None:
    Path(path).write_bytes(cores_to_bytes(cores))


def load_cores(path) -> list[np.ndarray]:
    return cores_from_bytes(Path(path).read_bytes())
