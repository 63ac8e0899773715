"""Acceptance criteria.

Each test appends one PASS/FAIL line to the summary printed at the end of
the pytest run, then asserts.  Criteria 1 to 4 fit full synthetic problems
and take several minutes in total.
"""

import itertools
import subprocess
import sys

import numpy as np
import pytest

from brtr import inference as inf
from brtr import metrics, ring
from brtr.synthetic import SynthSpec, gen_problem
from brtr.tensor import circular_permute

pytestmark = pytest.mark.acceptance

SEEDS = range(10)


def record(log, number, ok, detail):
    log.append(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}")


def solve(dims, rank, mr=0.0, sr=0.1, snr_db=None, seed=0, max_rank=10):
    p = gen_problem(SynthSpec(dims=dims, true_rank=rank, mr=mr, sr=sr, snr_db=snr_db, seed=seed))
    cfg = inf.InferenceConfig(max_rank=(max_rank,) * (len(dims) + 1), seed=seed)
    state, report = inf.fit(p.y, p.mask, cfg)
    low, sparse = inf.predict(state)
    return {
        "rse": metrics.rse(low, p.truth_low),
        "sparse": metrics.rse(sparse, p.truth_sparse) if p.truth_sparse.any() else 0.0,
        "ree": metrics.ree(report.final_ranks, p.truth_rank),
        "ranks": report.final_ranks,
    }


# ---------------------------------------------------------------------------
# recovery on synthetic data


def test_c1_clean_case(acceptance_log):
    runs = [solve((10, 10, 10, 10), (3, 3, 3, 3, 3), seed=s) for s in SEEDS]
    good = sum(r["rse"] <= 1e-4 and r["ree"] == 0 for r in runs)
    worst = max(r["rse"] for r in runs)
    ok = good >= 8
    record(acceptance_log, 1, ok, f"{good}/10 seeds with rse <= 1e-4 and REE 0 (max rse {worst:.2e})")
    assert ok


def test_c2_missing_case(acceptance_log):
    runs = [solve((10, 10, 10, 10), (3, 3, 3, 3, 3), mr=0.2, seed=s) for s in SEEDS]
    rse = float(np.median([r["rse"] for r in runs]))
    sparse = float(np.median([r["sparse"] for r in runs]))
    ok = rse <= 1e-4 and abs(sparse - 0.45) <= 0.05
    record(acceptance_log, 2, ok, f"median rse {rse:.2e}, median sparse error {sparse:.3f} over 10 seeds")
    assert ok


def test_c3_unbalanced_rank(acceptance_log):
    runs = [solve((10, 10, 10, 10), (2, 3, 2, 3, 2), seed=s) for s in SEEDS]
    good = sum(r["ree"] <= 0.25 for r in runs)
    ok = good >= 7
    record(acceptance_log, 3, ok, f"{good}/10 seeds with REE <= 0.25")
    assert ok


def test_c4_snr_monotone(acceptance_log):
    medians = []
    for snr in (5, 10, 20, 30):
        runs = [solve((10, 10, 10, 10), (3, 3, 3, 3, 3), snr_db=snr, seed=s) for s in range(5)]
        medians.append(float(np.median([r["rse"] for r in runs])))
    ok = all(b <= a for a, b in zip(medians, medians[1:]))
    shown = ", ".join(f"{m:.3e}" for m in medians)
    record(acceptance_log, 4, ok, f"median rse at 5/10/20/30 dB: {shown}")
    assert ok


# ---------------------------------------------------------------------------
# coordinate ascent


def test_c5_elbo_never_decreases(acceptance_log):
    r = np.random.default_rng(2024)
    worst = 0.0
    for case in range(20):
        order = int(r.integers(3, 5))
        dims = tuple(int(d) for d in r.integers(2, 9, order))
        ranks = tuple(int(v) for v in r.integers(1, 4, order))
        truth = ring.random_cores(dims, (ranks[-1],) + ranks, r)
        y = ring.tr_full(truth) + 0.1 * r.standard_normal(dims)
        mask = r.random(dims) < r.uniform(0.5, 1.0)
        mask.flat[0] = True
        cfg = inf.InferenceConfig(max_rank=(ranks[-1],) + ranks, prune=False,
                                  moment_mode="exact", seed=case)
        st = inf.initialize(np.where(mask, y, 0.0), mask, cfg)
        steps = [lambda s, n=n: inf.update_core(s, n) for n in range(1, order + 1)]
        steps += [lambda s, n=n: inf.update_ard(s, n) for n in range(1, order + 1)]
        steps += [inf.update_sparse, inf.update_eta, inf.update_tau]
        prev = inf.elbo(st)
        for _ in range(6):
            for step in steps:
                step(st)
                value = inf.elbo(st)
                worst = max(worst, (prev - value) / abs(prev))
                prev = value
    ok = worst <= 1e-8
    record(acceptance_log, 5, ok, f"largest relative ELBO drop over 20 problems {max(worst, 0.0):.1e}")
    assert ok


# ---------------------------------------------------------------------------
# oracles


def brute_entry(cores, idx):
    prod = np.eye(cores[0].shape[0])
    for c, i in zip(cores, idx):
        m = c[:, i, :]
        prod = np.array([[sum(prod[a, k] * m[k, b] for k in range(m.shape[0]))
                          for b in range(m.shape[1])] for a in range(prod.shape[0])])
    return sum(prod[a, a] for a in range(prod.shape[0]))


def test_c6_oracle_equivalence(acceptance_log):
    r = np.random.default_rng(6)
    dims = (2, 3, 2, 2)
    cores = ring.random_cores(dims, (2, 3, 2, 3, 2), r)
    full = ring.tr_full(cores)
    err = 0.0
    for idx in itertools.product(*(range(d) for d in dims)):
        one = tuple(i + 1 for i in idx)
        ref = brute_entry(cores, idx)
        err = max(err, abs(ring.tr_entry(cores, one) - ref), abs(full[idx] - ref))
        for n in range(1, 5):
            row = ring.design_row(cores, n, one)
            err = max(err, abs(row @ ring.slice_vec(cores[n - 1], idx[n - 1]) - ref))
    for n in range(1, 5):
        err = max(err, np.max(np.abs(ring.tr_full(ring.rotate(cores, n)) - circular_permute(full, n))))
    a, b, c = (r.standard_normal(s) for s in ((2, 2, 3), (3, 3, 2), (2, 2, 4)))
    abc = ring.tcp([a, b, c])
    err = max(err, np.max(np.abs(abc - ring.tcp([ring.tcp([a, b]), c]))))
    err = max(err, np.max(np.abs(abc - ring.tcp([a, ring.tcp([b, c])]))))
    ok = err <= 1e-12
    record(acceptance_log, 6, ok, f"max deviation from brute-force oracles {err:.1e}")
    assert ok


def test_c7_monte_carlo_moments(acceptance_log):
    r = np.random.default_rng(7)
    dims = (3, 4, 3)
    y = r.standard_normal(dims)
    st = inf.initialize(y, np.ones(dims, bool), inf.InferenceConfig(max_rank=(2, 2, 2, 2), seed=7))
    for k, c in enumerate(st.covs):
        a = r.standard_normal(c.shape)
        st.covs[k] = 0.2 * np.einsum("ide,ife->idf", a, a) + 0.1 * np.eye(c.shape[1])
    idx, n = (2, 3, 1), 2
    row, second = inf.expected_design_moments(st, n, idx)

    samples = 200_000
    others = ring.complement_order(3, n)
    prod = None
    for m in others:
        mean = st.means[m][:, idx[m] - 1, :]
        chol = np.linalg.cholesky(st.covs[m][idx[m] - 1])
        draws = mean.reshape(-1, order="F") + r.standard_normal((samples, mean.size)) @ chol.T
        draws = draws.reshape(samples, *mean.shape[::-1]).transpose(0, 2, 1)
        prod = draws if prod is None else prod @ draws
    # column-major vec of Q^T is the row-major flattening of Q
    rows = prod.reshape(samples, -1)
    outer = np.einsum("si,sj->sij", rows, rows)
    z_mean = np.abs(rows.mean(0) - row) / (rows.std(0, ddof=1) / np.sqrt(samples))
    z_second = np.abs(outer.mean(0) - second) / (outer.std(0, ddof=1) / np.sqrt(samples))
    worst = float(max(z_mean.max(), z_second.max()))
    ok = worst <= 3.0
    record(acceptance_log, 7, ok, f"largest deviation {worst:.2f} standard errors")
    assert ok


def test_c8_metric_units(acceptance_log):
    t = np.random.default_rng(8).standard_normal((4, 5))
    truth = np.array([1.0, -0.5, 0.25, 0.0])
    checks = [
        metrics.rse(t, t) == 0.0,
        metrics.rse(np.zeros_like(t), t) == 1.0,
        abs(metrics.rse(1.1 * t, t) - 0.1) <= 1e-12,
        metrics.psnr(t, t) == float("inf"),
        abs(metrics.psnr(truth + 0.1, truth) - 20.0) <= 1e-12,
        metrics.ree((3, 3, 3, 3, 3), (3, 3, 3, 3, 3)) == 0.0,
        metrics.ree((3, 3, 4, 3, 3), (3, 3, 3, 3, 3)) == 0.25,
        metrics.ree((2, 3, 2, 3, 2), (3, 3, 3, 3, 3)) == 0.5,
    ]
    ok = all(checks)
    record(acceptance_log, 8, ok, f"{sum(checks)}/{len(checks)} metric examples reproduced")
    assert ok


def test_c9_cli_determinism(acceptance_log, tmp_path):
    def cli(cwd, *args):
        cmd = [sys.executable, "-m", "brtr.cli", *args]
        return subprocess.run(cmd, cwd=cwd, capture_output=True, check=True).stdout

    outputs = []
    for run in ("a", "b"):
        # relative paths, since report.json records the input location
        d = tmp_path / run
        d.mkdir()
        out = cli(d, "synth", "--dims", "8,8,8", "--rank", "2,2,2", "--sr", "0.1", "--seed", "5",
                  "--out", "prob")
        out += cli(d, "complete", "--input", "prob", "--max-rank", "4,4,4,4", "--seed", "5",
                   "--no-timing", "--out", "fit")
        files = sorted(p for p in d.rglob("*") if p.is_file())
        outputs.append((out, [(p.relative_to(d), p.read_bytes()) for p in files]))
    ok = outputs[0] == outputs[1] and len(outputs[0][1]) == 8
    record(acceptance_log, 9, ok, f"{len(outputs[0][1])} files and stdout byte-identical across two runs")
    assert ok
