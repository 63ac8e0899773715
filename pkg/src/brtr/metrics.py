"""Recovery and rank-estimation metrics."""

from __future__ import annotations

import math

import numpy as np


def _pair(est, truth):
    est = np.asarray(est, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    return est, truth


def rse(est, truth) -> float:
    """Relative error ``||est - truth||_F / ||truth||_F``."""
    est, truth = _pair(est, truth)
    denom = np.linalg.norm(truth.ravel())
    if denom == 0:
        raise ValueError("relative error undefined for an all-zero reference")
    return float(np.linalg.norm((est - truth).ravel()) / denom)


def psnr(est, truth) -> float:
    """Peak signal-to-noise ratio in dB; ``inf`` for a perfect match."""
    est, truth = _pair(est, truth)
    mse = float(np.mean((est - truth) ** 2))
    peak = float(np.max(np.abs(truth)))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak**2 / mse)


def ree(est_rank, true_rank) -> float:
    """Mean absolute rank error over ``R_1 .. R_N``.

    Both arguments are full ring vectors ``(R_0, .., R_N)``; ``R_0`` is
    skipped since it equals ``R_N``.
    """
    est = list(est_rank)
    true = list(true_rank)
    if len(est) != len(true):
        raise ValueError(f"rank vectors differ in length: {len(est)} vs {len(true)}")
    if len(est) < 2:
        raise ValueError("rank vectors need at least two entries")
    return sum(abs(a - b) for a, b in zip(est[1:], true[1:])) / (len(est) - 1)


def mr_of(mask) -> float:
    """Fraction of missing entries."""
    mask = np.asarray(mask, dtype=bool)
    return float(mask.size - mask.sum()) / mask.size


def sr_of(sparse_support_count: int, mask) -> float:
    """Fraction of observed entries that carry an outlier."""
    n_obs = int(np.asarray(mask, dtype=bool).sum())
    if n_obs == 0:
        raise ValueError("no observed entries")
    return sparse_support_count / n_obs


def format_metric(value: float):
    """JSON-friendly metric value: infinities become the string ``"inf"``."""
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return float(value)
