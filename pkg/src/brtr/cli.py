"""Command-line front end.

    brtr synth --dims 10,10,10,10 --rank 3,3,3,3,3 --sr 0.1 --seed 7 --out prob/
    brtr complete --input prob/ --max-rank 10,10,10,10,10 --out fit/
    brtr metrics fit/low_rank.brt prob/truth_low.brt
    brtr img2ten photo.ppm photo.brt
    brtr ten2img fit/low_rank.brt restored.ppm

Exit codes: 0 success, 1 numerical failure, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import images, metrics
from .inference import InferenceConfig, NumericalError, fit, predict
from .synthetic import SynthSpec, gen_problem, load_problem, save_problem
from .tensor import FormatError, load_mask, load_tensor, reshape, save_tensor


CONFIG_VERSION = 1
# config keys forwarded to InferenceConfig
FIT_KEYS = (
    "max_rank",
    "max_iters",
    "elbo_rel_tol",
    "prune_threshold",
    "moment_mode",
    "seed",
    "init_mode",
    "restarts",
)


class UsageError(Exception):
    pass


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_tensor(path) -> np.ndarray:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return load_tensor(p)


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    try:
        spec = SynthSpec(
            dims=args.dims,
            true_rank=_ring_rank(args.rank, len(args.dims)),
            mr=args.mr,
            sr=args.sr,
            snr_db=args.snr,
            seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc))
    problem = gen_problem(spec)
    save_problem(args.out, problem)
    sys.stdout.write((Path(args.out) / "spec.json").read_text())
    return 0


def _ring_rank(rank, order: int) -> tuple[int, ...]:
    # accept either (R_1..R_N) or the full ring vector (R_0..R_N)
    rank = tuple(rank)
    if len(rank) == order:
        return (rank[-1],) + rank
    return rank


# ---------------------------------------------------------------------------
# complete


def load_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    try:
        cfg = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{p}: invalid JSON ({exc})")
    if not isinstance(cfg, dict):
        raise UsageError(f"{p}: config must be a JSON object")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise UsageError(f"{p}: unsupported config version {version}")
    return cfg


def merge_config(args) -> dict:
    """Config file values overridden by any flag given on the command line."""
    cfg = load_config(args.config) if args.config else {}
    flags = {
        "input": args.input,
        "mask": args.mask,
        "max_rank": args.max_rank,
        "max_iters": args.max_iters,
        "elbo_rel_tol": args.tol,
        "prune_threshold": args.prune_threshold,
        "moment_mode": args.moment_mode,
        "init_mode": args.init_mode,
        "restarts": args.restarts,
        "reshape": args.reshape,
        "seed": args.seed,
        "out": args.out,
    }
    for key, value in flags.items():
        if value is not None:
            cfg[key] = list(value) if isinstance(value, tuple) else value
    if ("input" in cfg) == ("synth" in cfg):
        raise UsageError("give exactly one of an input tensor or an inline synth spec")
    if "out" not in cfg:
        raise UsageError("an output directory is required (--out)")
    return cfg


def _load_inputs(cfg: dict):
    """Return (y, mask, truth) where truth is a SynthProblem or None."""
    if "synth" in cfg:
        try:
            problem = gen_problem(SynthSpec.from_dict(cfg["synth"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad synth spec: {exc}")
        return problem.y, problem.mask, problem
    src = Path(cfg["input"])
    if src.is_dir():
        if not (src / "spec.json").is_file():
            raise UsageError(f"{src} is not a problem directory (no spec.json)")
        problem = load_problem(src)
        mask = problem.mask
        if cfg.get("mask"):
            mask = _load_mask(cfg["mask"])
        return problem.y, mask, problem
    y = _read_tensor(src)
    mask = _load_mask(cfg["mask"]) if cfg.get("mask") else np.isfinite(y)
    return np.where(mask, y, 0.0), mask, None


def _load_mask(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {p}")
    return load_mask(p)


def _report_metrics(low, sparse, problem, final_ranks, shape) -> dict:
    out = {"rse_low": None, "rse_sparse": None, "psnr": None, "ree": None}
    if problem is None:
        return out
    out["rse_low"] = metrics.format_metric(metrics.rse(low, problem.truth_low))
    out["psnr"] = metrics.format_metric(metrics.psnr(low, problem.truth_low))
    if np.any(problem.truth_sparse):
        out["rse_sparse"] = metrics.format_metric(metrics.rse(sparse, problem.truth_sparse))
    if len(shape) == problem.y.ndim and len(final_ranks) == len(problem.truth_rank):
        out["ree"] = metrics.format_metric(metrics.ree(final_ranks, problem.truth_rank))
    return out


def cmd_complete(args) -> int:
    cfg = merge_config(args)
    y, mask, problem = _load_inputs(cfg)
    if y.shape != mask.shape:
        raise UsageError(f"tensor shape {y.shape} does not match mask shape {mask.shape}")
    shape = y.shape
    work_y, work_mask = y, mask
    if cfg.get("reshape"):
        target = tuple(int(d) for d in cfg["reshape"])
        if int(np.prod(target)) != y.size:
            raise UsageError(f"cannot reshape {shape} ({y.size} entries) into {target}")
        work_y, work_mask = reshape(y, target), reshape(mask, target)

    try:
        icfg = InferenceConfig(**{k: cfg[k] for k in FIT_KEYS if k in cfg})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad inference config: {exc}")
    try:
        state, report = fit(work_y, work_mask, icfg)
    except ValueError as exc:
        raise UsageError(str(exc))
    low, sparse = predict(state)
    low, sparse = reshape(low, shape), reshape(sparse, shape)

    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_tensor(out / "low_rank.brt", low)
    save_tensor(out / "sparse.brt", sparse)
    doc = report.to_dict()
    if args.no_timing:
        doc["wall_seconds"] = 0.0
    doc["schema_version"] = 1
    doc["config"] = {k: v for k, v in cfg.items() if k != "out"}
    doc["metrics"] = _report_metrics(low, sparse, problem, report.final_ranks, work_y.shape)
    (out / "report.json").write_text(_dump(doc))
    summary = {"final_ranks": doc["final_ranks"], "iterations": doc["iterations"]}
    summary.update({k: v for k, v in doc["metrics"].items() if v is not None})
    sys.stdout.write(_dump(summary))
    return 0


# ---------------------------------------------------------------------------
# metrics and images


def cmd_metrics(args) -> int:
    est = _read_tensor(args.est)
    truth = _read_tensor(args.truth)
    if est.shape != truth.shape:
        raise UsageError(f"shape mismatch: {est.shape} vs {truth.shape}")
    out = {
        "rse": metrics.format_metric(metrics.rse(est, truth)),
        "psnr": metrics.format_metric(metrics.psnr(est, truth)),
    }
    if args.est_rank is not None and args.true_rank is not None:
        try:
            out["ree"] = metrics.ree(args.est_rank, args.true_rank)
        except ValueError as exc:
            raise UsageError(str(exc))
    sys.stdout.write(_dump(out))
    return 0


def cmd_img2ten(args) -> int:
    src = Path(args.src)
    if not src.is_file():
        raise UsageError(f"no such file: {src}")
    save_tensor(args.dst, images.read_image(src))
    return 0


def cmd_ten2img(args) -> int:
    t = _read_tensor(args.src)
    try:
        images.write_image(args.dst, t)
    except ValueError as exc:
        raise UsageError(str(exc))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brtr", description="Bayesian robust tensor-ring completion")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every sweep")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic problem directory")
    p.add_argument("--dims", type=_int_list, required=True)
    p.add_argument("--rank", type=_int_list, required=True, help="R_1..R_N or R_0..R_N")
    p.add_argument("--mr", type=float, default=0.0, help="missing ratio")
    p.add_argument("--sr", type=float, default=0.0, help="outlier ratio among observations")
    p.add_argument("--snr", type=float, default=None, help="dB; omit for noise-free")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("complete", help="fit a tensor and write the recovered parts")
    p.add_argument("config", nargs="?", help="JSON config; flags override its values")
    p.add_argument("--input", help=".brt tensor or a problem directory from `synth`")
    p.add_argument("--mask", help=".brm observation mask")
    p.add_argument("--max-rank", type=_int_list)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--tol", type=float, help="relative ELBO tolerance")
    p.add_argument("--prune-threshold", type=float)
    p.add_argument("--moment-mode", choices=("exact", "plugin"))
    p.add_argument("--init-mode", choices=("random", "tr-approx"))
    p.add_argument("--restarts", type=int)
    p.add_argument("--reshape", type=_int_list)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--no-timing", action="store_true", help="write wall_seconds as 0")
    p.set_defaults(func=cmd_complete)

    p = sub.add_parser("metrics", help="compare an estimate with a reference tensor")
    p.add_argument("est")
    p.add_argument("truth")
    p.add_argument("--est-rank", type=_int_list)
    p.add_argument("--true-rank", type=_int_list)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("img2ten", help="PPM/PGM image to .brt tensor")
    p.add_argument("src")
    p.add_argument("dst")
    p.set_defaults(func=cmd_img2ten)

    p = sub.add_parser("ten2img", help=".brt tensor to PPM/PGM image")
    p.add_argument("src")
    p.add_argument("dst")
    p.set_defaults(func=cmd_ten2img)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"brtr: numerical failure: {exc}", file=sys.stderr)
        return 1
    except (UsageError, FormatError, OSError) as exc:
        print(f"brtr: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
