"""Synthetic robust-completion problems with a tensor-ring ground truth."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import ring
from .tensor import check_shape, load_mask, load_tensor, save_mask, save_tensor


@dataclass(frozen=True)
class SynthSpec:
    dims: tuple
    true_rank: tuple
    mr: float = 0.0
    sr: float = 0.0
    snr_db: float | None = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", check_shape(self.dims))
        object.__setattr__(self, "true_rank", ring.check_ranks(self.true_rank))
        if len(self.true_rank) != len(self.dims) + 1:
            raise ValueError("true_rank must have length N + 1")
        if not 0.0 <= self.mr < 1.0:
            raise ValueError(f"mr must lie in [0, 1), got {self.mr}")
        if not 0.0 <= self.sr <= 1.0:
            raise ValueError(f"sr must lie in [0, 1], got {self.sr}")
        if int(self.seed) < 0:
            raise ValueError("seed must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        d["true_rank"] = list(self.true_rank)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(
            dims=tuple(d["dims"]),
            true_rank=tuple(d["true_rank"]),
            mr=float(d.get("mr", 0.0)),
            sr=float(d.get("sr", 0.0)),
            snr_db=None if d.get("snr_db") is None else float(d["snr_db"]),
            seed=int(d.get("seed", 0)),
        )


@dataclass
class SynthProblem:
    y: np.ndarray
    mask: np.ndarray
    truth_low: np.ndarray
    truth_sparse: np.ndarray
    truth_rank: tuple
    spec: SynthSpec | None = None


def _corrupt(rng, positions, rate, bound, out):
    count = int(round(rate * len(positions)))
    if count == 0:
        return
    chosen = rng.choice(positions, size=count, replace=False)
    out[chosen] = rng.uniform(-bound, bound, size=count)


def gen_problem(spec: SynthSpec) -> SynthProblem:
    """Draw ``y = L + S + M`` on a random observation mask.

    Cores are i.i.d. standard normal.  A fraction ``sr`` of the observed
    entries (and the same fraction of the missing ones) receive outliers
    drawn from U(-H, H), with H the largest magnitude in L.  Gaussian noise
    has variance ``var(L) / 10**(snr_db / 10)``.
    """
    rng = np.random.Generator(np.random.Philox(int(spec.seed)))
    cores = ring.random_cores(spec.dims, spec.true_rank, rng)
    low = ring.tr_full(cores)
    total = low.size
    flat_low = low.reshape(-1, order="F")

    mask = np.ones(total, dtype=bool)
    n_missing = int(round(spec.mr * total))
    mask[rng.permutation(total)[:n_missing]] = False

    sparse = np.zeros(total)
    bound = float(np.max(np.abs(flat_low)))
    _corrupt(rng, np.flatnonzero(mask), spec.sr, bound, sparse)
    # missing entries are corrupted too; they are never seen by the fit
    _corrupt(rng, np.flatnonzero(~mask), spec.sr, bound, sparse)

    noise = np.zeros(total)
    if spec.snr_db is not None:
        noise_var = float(np.var(flat_low)) / 10.0 ** (spec.snr_db / 10.0)
        noise = np.sqrt(noise_var) * rng.standard_normal(total)

    y = np.where(mask, flat_low + sparse + noise, 0.0)
    fold = lambda v: v.reshape(spec.dims, order="F")  # noqa: E731
    return SynthProblem(
        y=fold(y),
        mask=fold(mask),
        truth_low=low,
        truth_sparse=fold(sparse),
        truth_rank=spec.true_rank,
        spec=spec,
    )


def save_problem(directory, problem: SynthProblem) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / "y.brt", problem.y)
    save_mask(d / "mask.brm", problem.mask)
    save_tensor(d / "truth_low.brt", problem.truth_low)
    save_tensor(d / "truth_sparse.brt", problem.truth_sparse)
    meta = problem.spec.to_dict() if problem.spec is not None else {}
    meta["truth_rank"] = list(problem.truth_rank)
    (d / "spec.json").write_text(spec_json(meta))


def spec_json(meta: dict) -> str:
    return json.dumps(meta, indent=2, sort_keys=True) + "\n"


def load_problem(directory) -> SynthProblem:
    d = Path(directory)
    meta = json.loads((d / "spec.json").read_text())
    spec = SynthSpec.from_dict(meta) if "dims" in meta else None
    return SynthProblem(
        y=load_tensor(d / "y.brt"),
        mask=load_mask(d / "mask.brm"),
        truth_low=load_tensor(d / "truth_low.brt"),
        truth_sparse=load_tensor(d / "truth_sparse.brt"),
        truth_rank=tuple(meta["truth_rank"]),
        spec=spec,
    )
