"""Variational Bayes for the robust tensor-ring model.

The observed tensor is modelled as ``Y = L + S + noise`` on the observed
support, with ``L`` in tensor-ring format.  Every factor of the mean-field
posterior is updated in closed form; rank components are shared between the
third mode of core ``n`` and the first mode of core ``n+1`` and carry a Gamma
precision ``u^(n)`` so that unused components shrink and get pruned.

Internally the ring position ``k`` (0-based) owns ``ard[k]``, the precision
vector of length ``R_{k+1}`` tying ``means[k][:, :, r]`` to
``means[k+1][r, :, :]``.  Slice covariances are indexed by the column-major
``vec`` of a lateral slice, i.e. entry ``(a, b)`` of an ``R_{k} x R_{k+1}``
slice sits at ``a + R_k * b``.
"""

from __future__ import annotations

import copy
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln

from . import ring
from .tensor import circular_permute

log = logging.getLogger(__name__)

LN2PI = math.log(2.0 * math.pi)


class NumericalError(RuntimeError):
    """Raised when the evidence lower bound stops being finite."""


@dataclass
class Hyperpriors:
    c0: float = 1e-6
    d0: float = 1e-6
    a0_eta: float = 1e-6
    b0_eta: float = 1e-6
    a0_tau: float = 1e-6
    b0_tau: float = 1e-6

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"hyperprior {name} must be positive, got {value}")


@dataclass
class InferenceConfig:
    max_rank: tuple | None = None
    max_iters: int = 100
    elbo_rel_tol: float = 1e-6
    prune_threshold: float = 1e-4
    moment_mode: str = "exact"
    seed: int = 0
    init_mode: str = "random"
    prune: bool = True
    prune_after: int = 2
    rotate_bonds: bool = True
    restarts: int = 4
    restart_tol: float = 1e-4
    hyper: Hyperpriors = field(default_factory=Hyperpriors)

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.restarts < 0:
            raise ValueError("restarts must be >= 0")
        if not (self.elbo_rel_tol > 0 and self.prune_threshold > 0 and self.restart_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.moment_mode not in ("exact", "plugin"):
            raise ValueError(f"unknown moment mode {self.moment_mode!r}")
        if self.init_mode not in ("tr-approx", "random"):
            raise ValueError(f"unknown init mode {self.init_mode!r}")
        if self.max_rank is not None:
            self.max_rank = ring.check_ranks(self.max_rank)
        if self.seed < 0:
            raise ValueError("seed must be non-negative")

    def ranks_for(self, order: int) -> tuple[int, ...]:
        if self.max_rank is None:
            return (30,) * (order + 1)
        if len(self.max_rank) != order + 1:
            raise ValueError(
                f"max_rank has {len(self.max_rank)} entries, tensor needs {order + 1}"
            )
        return self.max_rank


@dataclass
class PosteriorState:
    """All variational factors plus the data they were fitted to."""

    y: np.ndarray
    mask: np.ndarray
    means: list
    covs: list
    ard_c: list
    ard_d: list
    sparse_mean: np.ndarray
    sparse_var: np.ndarray
    eta_a: np.ndarray
    eta_b: np.ndarray
    tau_a: float
    tau_b: float
    hyper: Hyperpriors
    moment_mode: str = "exact"
    jitter_events: int = 0

    @property
    def order(self) -> int:
        return len(self.means)

    @property
    def ranks(self) -> tuple[int, ...]:
        return ring.ranks_of(self.means)

    @property
    def n_obs(self) -> int:
        return int(self.mask.sum())

    @property
    def e_tau(self) -> float:
        return self.tau_a / self.tau_b

    def e_u(self, k: int) -> np.ndarray:
        k %= self.order
        return self.ard_c[k] / self.ard_d[k]

    def e_eta(self) -> np.ndarray:
        return self.eta_a / self.eta_b

    def check(self) -> None:
        """Structural consistency of shapes after updates and pruning."""
        ring.check_cores(self.means)
        ranks = self.ranks
        for k, (m, c) in enumerate(zip(self.means, self.covs)):
            d = m.shape[0] * m.shape[2]
            if c.shape != (m.shape[1], d, d):
                raise AssertionError(f"covariance {k} has shape {c.shape}")
            if self.ard_c[k].shape != (ranks[k + 1],) or self.ard_d[k].shape != (ranks[k + 1],):
                raise AssertionError(f"ARD factor {k} does not match rank {ranks[k + 1]}")


@dataclass
class RunReport:
    elbo_trace: list = field(default_factory=list)
    rank_trace: list = field(default_factory=list)
    final_ranks: list = field(default_factory=list)
    iterations: int = 0
    pruned_per_iteration: list = field(default_factory=list)
    wall_seconds: float = 0.0
    jitter_events: int = 0
    converged: bool = False
    restart_iterations: list = field(default_factory=list)
    final_elbo: float = math.nan

    def to_dict(self) -> dict:
        return {
            "elbo_trace": [float(v) for v in self.elbo_trace],
            "rank_trace": [list(map(int, r)) for r in self.rank_trace],
            "final_ranks": [int(r) for r in self.final_ranks],
            "iterations": int(self.iterations),
            "pruned_per_iteration": [int(p) for p in self.pruned_per_iteration],
            "wall_seconds": float(self.wall_seconds),
            "jitter_events": int(self.jitter_events),
            "converged": bool(self.converged),
            "restart_iterations": [int(i) for i in self.restart_iterations],
            "final_elbo": float(self.final_elbo),
        }


# ---------------------------------------------------------------------------
# moment cores


def _vec_diag(cov: np.ndarray, ra: int, rb: int) -> np.ndarray:
    # (I, D) diagonal -> (ra, I, rb) laid out like the core
    diag = np.diagonal(cov, axis1=1, axis2=2)
    return diag.reshape(-1, rb, ra).transpose(2, 0, 1)


def slice_second_moments(mean: np.ndarray, cov: np.ndarray | None, part: str = "full") -> np.ndarray:
    """Second-moment core ``E[Z_k(i) kron Z_k(i)]`` of shape (Ra^2, I, Rb^2).

    ``part`` selects ``"full"`` (means and covariance), ``"mean"`` (outer
    product of means only) or ``"cov"`` (covariance only).
    """
    ra, n, rb = mean.shape
    out = np.zeros((ra, ra, n, rb, rb))
    if part in ("full", "mean"):
        out += np.einsum("aib,cid->acibd", mean, mean)
    if part in ("full", "cov") and cov is not None:
        c5 = cov.reshape(n, rb, ra, rb, ra)
        out += c5.transpose(2, 4, 0, 1, 3)
    return out.reshape(ra * ra, n, rb * rb)


def kron_to_vec_moment(p: np.ndarray, rb: int, ra: int) -> np.ndarray:
    """Reorder ``E[Q kron Q]`` (rows (b, b'), cols (a, a')) into ``E[vec(Q^T) vec(Q^T)^T]``."""
    lead = p.shape[:-2]
    p6 = p.reshape(lead + (rb, rb, ra, ra))
    nd = len(lead)
    axes = tuple(range(nd)) + (nd, nd + 2, nd + 1, nd + 3)
    return p6.transpose(axes).reshape(lead + (rb * ra, rb * ra))


def _weighted_chain(chain: list, w: np.ndarray) -> np.ndarray:
    """Sum of chain slice products weighted per leading index.

    ``chain`` holds order-3 cores (P, I_m, Q) in subchain order and ``w`` has
    shape ``(I_n, I_c1, .., I_cK)``.  Returns ``out[i] = sum_j w[i, j] *
    prod_m chain_m[:, j_m, :]``.  The last core is applied after the weighted
    reduction so the full subchain is never materialized.
    """
    n_lead = w.shape[0]
    if len(chain) == 1:
        last = chain[0]
        wl = w.reshape(n_lead, last.shape[1])
        return np.einsum("il,qls->iqs", wl, last)
    prefix = ring.tcp(chain[:-1])
    last = chain[-1]
    p, jp, q = prefix.shape
    _, nl, s = last.shape
    wm = w.reshape((n_lead, jp, nl), order="F")
    t = np.tensordot(wm, prefix, axes=([1], [1]))  # (I, L, P, Q)
    t = t.transpose(0, 2, 1, 3).reshape(n_lead * p, nl * q)
    out = t @ last.transpose(1, 0, 2).reshape(nl * q, s)
    return out.reshape(n_lead, p, s)


def _mode_weights(t: np.ndarray, k: int) -> np.ndarray:
    """Move mode k to the front with the remaining modes in ring order after k."""
    rotated = circular_permute(t, k + 1)
    return np.moveaxis(rotated, -1, 0)


def design_sums(state: PosteriorState, k: int, weights: np.ndarray, parts: list[str]) -> np.ndarray:
    """``sum_j weights[i, j] * E[Q(j) kron Q(j)]`` for core ``k`` (0-based).

    ``parts[m]`` chooses the moment part of the m-th subchain core.
    Returns (I_k, D, D) in the slice ``vec`` ordering.
    """
    order = state.order
    rest = ring.complement_order(order, k + 1)
    chain = [
        slice_second_moments(state.means[m], state.covs[m], part)
        for m, part in zip(rest, parts)
    ]
    out = _weighted_chain(chain, _mode_weights(weights, k))
    ra, _, rb = state.means[k].shape
    return kron_to_vec_moment(out, rb, ra)


def design_mean_sums(state: PosteriorState, k: int, weights: np.ndarray) -> np.ndarray:
    """``sum_j weights[i, j] * vec(Q(j)^T)`` using posterior means; shape (I_k, D)."""
    rest = ring.complement_order(state.order, k + 1)
    chain = [state.means[m] for m in rest]
    out = _weighted_chain(chain, _mode_weights(weights, k))
    return out.reshape(out.shape[0], -1)


def expected_design_moments(state: PosteriorState, n: int, idx) -> tuple[np.ndarray, np.ndarray]:
    """Mean design row and its second moment for core ``n`` at entry ``idx`` (1-based)."""
    order = state.order
    if not 1 <= n <= order:
        raise ValueError(f"mode {n} outside [1, {order}]")
    row = ring.design_row(state.means, n, idx)
    if state.moment_mode == "plugin":
        return row, np.outer(row, row)
    zidx = [int(i) - 1 for i in idx]
    rest = ring.complement_order(order, n)
    prod = None
    for m in rest:
        mom = slice_second_moments(state.means[m], state.covs[m])[:, zidx[m], :]
        prod = mom if prod is None else prod @ mom
    ra, _, rb = state.means[n - 1].shape
    return row, kron_to_vec_moment(prod, rb, ra)


# ---------------------------------------------------------------------------
# initialization


def _balance(cores: list) -> list:
    """Rescale cores to equal RMS without changing the represented tensor."""
    rms = np.array([np.sqrt(np.mean(c**2)) for c in cores])
    if np.any(rms == 0):
        return cores
    target = np.exp(np.mean(np.log(rms)))
    return [c * (target / r) for c, r in zip(cores, rms)]


def _pad_cores(cores: list, ranks, rng: np.random.Generator) -> list:
    """Grow cores to ``ranks``.

    New third-mode components start at zero so the reconstruction is
    unchanged; new first-mode components are small random values so those
    components can be picked up by the first sweep.
    """
    order = len(cores)
    out = []
    for k, c in enumerate(cores):
        ra, n, rb = c.shape
        ta, tb = ranks[k], ranks[k + 1]
        scale = np.sqrt(np.mean(c**2)) if c.size else 1.0
        z = np.zeros((ta, n, tb))
        z[ra:, :, :rb] = 1e-3 * scale * rng.standard_normal((ta - ra, n, rb))
        z[:ra, :, :rb] = c
        out.append(z)
    assert len(out) == order
    return out


def initialize(y: np.ndarray, mask: np.ndarray, cfg: InferenceConfig) -> PosteriorState:
    y = np.asarray(y, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if y.shape != mask.shape:
        raise ValueError(f"tensor shape {y.shape} does not match mask {mask.shape}")
    if y.ndim < 2:
        raise ValueError("inference needs a tensor of order >= 2")
    if not mask.any():
        raise ValueError("no observed entries")
    if not np.all(np.isfinite(y[mask])):
        raise ValueError("observed entries must be finite")
    order = y.ndim
    ranks = cfg.ranks_for(order)
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    yz = np.where(mask, y, 0.0)

    if cfg.init_mode == "tr-approx":
        cores = _balance(ring.tr_svd(yz, ranks))
        cores = _pad_cores(cores, ranks, rng)
    else:
        cores = ring.random_cores(y.shape, ranks, rng)

    covs = []
    for c in cores:
        d = c.shape[0] * c.shape[2]
        covs.append(np.broadcast_to(np.eye(d), (c.shape[1], d, d)).copy())

    h = cfg.hyper
    ard_c = [np.full(ranks[k + 1], h.c0) for k in range(order)]
    ard_d = [np.full(ranks[k + 1], h.c0) for k in range(order)]
    sparse_mean = np.where(mask, rng.standard_normal(y.shape), 0.0)
    sparse_var = np.where(mask, 1.0, 0.0)
    eta_a = np.full(y.shape, h.a0_eta)
    eta_b = np.full(y.shape, h.a0_eta)
    return PosteriorState(
        y=yz,
        mask=mask,
        means=cores,
        covs=covs,
        ard_c=ard_c,
        ard_d=ard_d,
        sparse_mean=sparse_mean,
        sparse_var=sparse_var,
        eta_a=eta_a,
        eta_b=eta_b,
        tau_a=h.a0_tau,
        tau_b=h.a0_tau,
        hyper=h,
        moment_mode=cfg.moment_mode,
    )


# ---------------------------------------------------------------------------
# updates


def _spd_inverse(prec: np.ndarray, state: PosteriorState) -> np.ndarray:
    """Batched inverse of symmetric positive-definite matrices via Cholesky."""
    prec = 0.5 * (prec + np.swapaxes(prec, 1, 2))
    try:
        chol = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        chol = np.empty_like(prec)
        for i, p in enumerate(prec):
            try:
                chol[i] = np.linalg.cholesky(p)
            except np.linalg.LinAlgError:
                jitter = 1e-10 * float(np.mean(np.diag(p)))
                state.jitter_events += 1
                log.warning("precision matrix not positive definite; adding jitter %.3g", jitter)
                try:
                    chol[i] = np.linalg.cholesky(p + jitter * np.eye(p.shape[0]))
                except np.linalg.LinAlgError as exc:
                    raise NumericalError("slice precision is not positive definite") from exc
    linv = np.linalg.inv(chol)
    cov = np.swapaxes(linv, 1, 2) @ linv
    return 0.5 * (cov + np.swapaxes(cov, 1, 2))


def _prior_precision(state: PosteriorState, k: int) -> np.ndarray:
    # diag(E[U^(n)] kron E[U^(n-1)]) for core k, in slice vec order a + Ra*b
    return np.kron(state.e_u(k), state.e_u(k - 1))


def update_core(state: PosteriorState, n: int) -> PosteriorState:
    order = state.order
    if not 1 <= n <= order:
        raise ValueError(f"mode {n} outside [1, {order}]")
    k = n - 1
    w = state.mask.astype(np.float64)
    target = np.where(state.mask, state.y - state.sparse_mean, 0.0)
    parts = ["full" if state.moment_mode == "exact" else "mean"] * (order - 1)
    gram = design_sums(state, k, w, parts)
    rhs = design_mean_sums(state, k, target)
    tau = state.e_tau
    prec = tau * gram
    diag = _prior_precision(state, k)
    idx = np.arange(diag.size)
    prec[:, idx, idx] += diag
    cov = _spd_inverse(prec, state)
    mvec = tau * np.einsum("ide,ie->id", cov, rhs)
    ra, n_i, rb = state.means[k].shape
    state.means[k] = mvec.reshape(n_i, rb, ra).transpose(2, 0, 1).copy()
    state.covs[k] = cov
    return state


def core_sq_moments(state: PosteriorState, k: int) -> np.ndarray:
    """Elementwise ``E[Z_k^2]`` laid out like the core."""
    m = state.means[k]
    return m**2 + _vec_diag(state.covs[k], m.shape[0], m.shape[2])


def update_ard(state: PosteriorState, n: int) -> PosteriorState:
    order = state.order
    if not 1 <= n <= order:
        raise ValueError(f"mode {n} outside [1, {order}]")
    k = n - 1
    nxt = (k + 1) % order
    h = state.hyper
    left = core_sq_moments(state, k)  # (R_{k}, I_k, R_{k+1})
    right = core_sq_moments(state, nxt)  # (R_{k+1}, I_{k+1}, R_{k+2})
    c = h.c0 + 0.5 * (left.shape[0] * left.shape[1] + right.shape[1] * right.shape[2])
    d = (
        h.d0
        + 0.5 * np.einsum("a,air->r", state.e_u(k - 1), left)
        + 0.5 * np.einsum("b,rib->r", state.e_u(nxt), right)
    )
    state.ard_c[k] = np.full(left.shape[2], c)
    state.ard_d[k] = d
    return state


def expected_reconstruction(state: PosteriorState) -> np.ndarray:
    return ring.tr_full(state.means)


def update_sparse(state: PosteriorState) -> PosteriorState:
    tau = state.e_tau
    var = 1.0 / (state.e_eta() + tau)
    resid = state.y - expected_reconstruction(state)
    state.sparse_var = np.where(state.mask, var, 0.0)
    state.sparse_mean = np.where(state.mask, var * tau * resid, 0.0)
    return state


def update_eta(state: PosteriorState) -> PosteriorState:
    h = state.hyper
    state.eta_a = np.where(state.mask, h.a0_eta + 0.5, h.a0_eta)
    state.eta_b = np.where(
        state.mask, h.b0_eta + 0.5 * (state.sparse_mean**2 + state.sparse_var), h.b0_eta
    )
    return state


def reconstruction_variance_sum(state: PosteriorState) -> float:
    """Sum over observed entries of ``Var[Tr(Z_1(i_1) ... Z_N(i_N))]``.

    Uses the decomposition ``Var = tr(V G) + zbar^T Cov(q) zbar`` for the
    last core, with ``Cov(q)`` summed by telescoping over the other cores so
    no difference of large numbers is ever formed.
    """
    if state.moment_mode == "plugin":
        return 0.0
    order = state.order
    k = order - 1
    w = state.mask.astype(np.float64)
    gram = design_sums(state, k, w, ["full"] * (order - 1))
    total = float(np.einsum("ide,ied->", gram, state.covs[k]))
    zbar = state.means[k].transpose(1, 2, 0).reshape(state.means[k].shape[1], -1)
    for pos in range(order - 1):
        parts = ["full"] * pos + ["cov"] + ["mean"] * (order - 2 - pos)
        cq = design_sums(state, k, w, parts)
        total += float(np.einsum("id,ide,ie->", zbar, cq, zbar))
    return total


def expected_sq_residual(state: PosteriorState) -> float:
    """``E||O * (Y - L - S)||_F^2`` under the current posterior."""
    recon = expected_reconstruction(state)
    resid = np.where(state.mask, state.y - recon - state.sparse_mean, 0.0)
    return (
        float(np.sum(resid**2))
        + reconstruction_variance_sum(state)
        + float(np.sum(state.sparse_var[state.mask]))
    )


def update_tau(state: PosteriorState) -> PosteriorState:
    h = state.hyper
    state.tau_a = h.a0_tau + 0.5 * state.n_obs
    state.tau_b = h.b0_tau + 0.5 * expected_sq_residual(state)
    return state


# ---------------------------------------------------------------------------
# evidence lower bound


def _gamma_log_prior(a0, b0, e_x, e_lnx):
    return a0 * np.log(b0) - gammaln(a0) + (a0 - 1.0) * e_lnx - b0 * e_x


def _gamma_entropy(a, b):
    return a - np.log(b) + gammaln(a) + (1.0 - a) * digamma(a)


def elbo_terms(state: PosteriorState) -> dict:
    """The ELBO split by factor family; values sum to :func:`elbo`."""
    h = state.hyper
    order = state.order
    mask = state.mask
    n_obs = state.n_obs

    e_tau = state.e_tau
    e_ln_tau = digamma(state.tau_a) - math.log(state.tau_b)
    lik = 0.5 * n_obs * (e_ln_tau - LN2PI) - 0.5 * e_tau * expected_sq_residual(state)

    e_u = [state.e_u(k) for k in range(order)]
    e_ln_u = [digamma(state.ard_c[k]) - np.log(state.ard_d[k]) for k in range(order)]
    core_prior = 0.0
    core_entropy = 0.0
    for k in range(order):
        ra, n_i, rb = state.means[k].shape
        ez2 = core_sq_moments(state, k)
        core_prior += 0.5 * n_i * (rb * np.sum(e_ln_u[k - 1]) + ra * np.sum(e_ln_u[k]))
        core_prior -= 0.5 * ra * n_i * rb * LN2PI
        core_prior -= 0.5 * np.einsum("a,aib,b->", e_u[k - 1], ez2, e_u[k])
        _, logdet = np.linalg.slogdet(state.covs[k])
        core_entropy += 0.5 * float(np.sum(logdet)) + 0.5 * n_i * ra * rb * (1.0 + LN2PI)

    ard_prior = sum(
        float(np.sum(_gamma_log_prior(h.c0, h.d0, e_u[k], e_ln_u[k]))) for k in range(order)
    )
    ard_entropy = sum(
        float(np.sum(_gamma_entropy(state.ard_c[k], state.ard_d[k]))) for k in range(order)
    )

    ea = state.eta_a[mask]
    eb = state.eta_b[mask]
    e_eta = ea / eb
    e_ln_eta = digamma(ea) - np.log(eb)
    s2 = state.sparse_mean[mask] ** 2 + state.sparse_var[mask]
    sparse_prior = float(np.sum(0.5 * e_ln_eta - 0.5 * LN2PI - 0.5 * e_eta * s2))
    sparse_entropy = float(np.sum(0.5 * (1.0 + LN2PI + np.log(state.sparse_var[mask]))))
    eta_prior = float(np.sum(_gamma_log_prior(h.a0_eta, h.b0_eta, e_eta, e_ln_eta)))
    eta_entropy = float(np.sum(_gamma_entropy(ea, eb)))

    tau_prior = float(_gamma_log_prior(h.a0_tau, h.b0_tau, e_tau, e_ln_tau))
    tau_entropy = float(_gamma_entropy(state.tau_a, state.tau_b))

    return {
        "likelihood": float(lik),
        "core_prior": float(core_prior),
        "core_entropy": float(core_entropy),
        "ard_prior": ard_prior,
        "ard_entropy": ard_entropy,
        "sparse_prior": sparse_prior,
        "sparse_entropy": sparse_entropy,
        "eta_prior": eta_prior,
        "eta_entropy": eta_entropy,
        "tau_prior": tau_prior,
        "tau_entropy": tau_entropy,
    }


def elbo(state: PosteriorState, y: np.ndarray | None = None, mask: np.ndarray | None = None) -> float:
    """Evidence lower bound of the current posterior.

    ``y`` and ``mask`` default to the data stored on the state.
    """
    if y is not None or mask is not None:
        if y is not None and np.asarray(y).shape != state.y.shape:
            raise ValueError("data shape does not match the state")
        saved = state.y, state.mask
        if mask is not None:
            state.mask = np.asarray(mask, dtype=bool)
        if y is not None:
            state.y = np.where(state.mask, np.asarray(y, dtype=np.float64), 0.0)
        try:
            return elbo(state)
        finally:
            state.y, state.mask = saved
    return float(sum(elbo_terms(state).values()))


# ---------------------------------------------------------------------------
# model reduction


def _keep_rows(cov: np.ndarray, idx: np.ndarray) -> np.ndarray:
    return cov[:, idx][:, :, idx].copy()


def rotate_bonds(state: PosteriorState) -> PosteriorState:
    """Rotate every bond onto the singular basis of the left core's unfolding.

    The orthogonal change of basis leaves the mean reconstruction unchanged
    and is applied exactly to the slice covariances; the ARD factor of the
    bond is refreshed afterwards.  Components that the left core does not
    use end up as near-zero columns, which lets ARD and pruning remove them.
    """
    order = state.order
    for k in range(order):
        nxt = (k + 1) % order
        left = state.means[k]
        ra, n_i, rb = left.shape
        _, _, vt = np.linalg.svd(left.reshape(ra * n_i, rb), full_matrices=True)
        rot = vt.T
        state.means[k] = np.tensordot(left, rot, axes=([2], [0]))
        t_left = np.kron(rot.T, np.eye(ra))
        state.covs[k] = t_left @ state.covs[k] @ t_left.T
        right = state.means[nxt]
        rc = right.shape[2]
        state.means[nxt] = np.tensordot(rot.T, right, axes=([1], [0]))
        t_right = np.kron(np.eye(rc), rot.T)
        state.covs[nxt] = t_right @ state.covs[nxt] @ t_right.T
        update_ard(state, k + 1)
    return state


def prune(state: PosteriorState, threshold: float = 1e-4) -> tuple[PosteriorState, int]:
    """Drop rank components whose adjacent slices carry negligible power."""
    order = state.order
    removed = 0
    for k in range(order):
        nxt = (k + 1) % order
        left = state.means[k]
        right = state.means[nxt]
        rank = left.shape[2]
        if rank <= 1:
            continue
        size = left.shape[0] * left.shape[1] + right.shape[1] * right.shape[2]
        power = (np.sum(left**2, axis=(0, 1)) + np.sum(right**2, axis=(1, 2))) / size
        drop = power < threshold * np.mean(power)
        if not drop.any():
            continue
        if drop.all():
            drop[int(np.argmax(power))] = False
        keep = np.flatnonzero(~drop)
        removed += int(drop.sum())

        ra = left.shape[0]
        idx_left = (keep[:, None] * ra + np.arange(ra)[None, :]).ravel()
        state.means[k] = left[:, :, keep].copy()
        state.covs[k] = _keep_rows(state.covs[k], idx_left)

        right = state.means[nxt]
        rb = right.shape[2]
        idx_right = (np.arange(rb)[:, None] * rank + keep[None, :]).ravel()
        state.means[nxt] = right[keep, :, :].copy()
        state.covs[nxt] = _keep_rows(state.covs[nxt], idx_right)

        state.ard_c[k] = state.ard_c[k][keep]
        state.ard_d[k] = state.ard_d[k][keep]
    state.check()
    return state, removed


# ---------------------------------------------------------------------------
# driver


def sweep(state: PosteriorState) -> PosteriorState:
    """One pass of every closed-form update in the fixed order."""
    for n in range(1, state.order + 1):
        update_core(state, n)
    for n in range(1, state.order + 1):
        update_ard(state, n)
    update_sparse(state)
    update_eta(state)
    update_tau(state)
    return state


def reset_noise(state: PosteriorState, rng: np.random.Generator) -> PosteriorState:
    """Put the sparse, eta and tau factors back to their initial values.

    Core and ARD posteriors are kept.  Used between restart rounds: entries
    that an earlier round wrongly absorbed into the sparse part get a fresh
    chance to inform the cores.
    """
    h = state.hyper
    mask = state.mask
    state.sparse_mean = np.where(mask, rng.standard_normal(mask.shape), 0.0)
    state.sparse_var = np.where(mask, 1.0, 0.0)
    state.eta_a = np.full(mask.shape, h.a0_eta)
    state.eta_b = np.full(mask.shape, h.a0_eta)
    state.tau_a = h.a0_tau
    state.tau_b = h.a0_tau
    return state


def _run_round(state, cfg, report, callback, first_iter):
    prev = None
    pruned_recently = False
    value = -math.inf
    for local in range(1, cfg.max_iters + 1):
        it = first_iter + local - 1
        sweep(state)
        value = elbo(state)
        if not math.isfinite(value):
            raise NumericalError(f"ELBO became non-finite at iteration {it}")
        removed = 0
        if cfg.prune and local > cfg.prune_after:
            if cfg.rotate_bonds:
                rotate_bonds(state)
            state, removed = prune(state, cfg.prune_threshold)
        report.elbo_trace.append(value)
        report.pruned_per_iteration.append(removed)
        report.rank_trace.append(list(state.ranks))
        report.iterations = it
        log.debug("iter %d elbo %.10g ranks %s", it, value, state.ranks)
        if callback is not None:
            callback(it, state, value)
        if prev is not None and not pruned_recently and removed == 0:
            if abs(value - prev) <= cfg.elbo_rel_tol * abs(prev):
                return state, value, True
        pruned_recently = removed > 0
        prev = value
    return state, value, False


def fit(y: np.ndarray, mask: np.ndarray, cfg: InferenceConfig | None = None, callback=None):
    """Run variational inference to convergence.

    A round is the plain update loop, run until the relative ELBO change
    falls below ``elbo_rel_tol`` or ``max_iters`` sweeps.  After the first
    round up to ``cfg.restarts`` further rounds start from the current cores
    with the sparse/noise factors reset; the state with the best ELBO is
    returned, and restarts stop once a round no longer improves it by
    ``restart_tol`` (relative).

    Returns the final :class:`PosteriorState` and a :class:`RunReport`.
    ``callback(iteration, state, elbo_value)`` is invoked after each sweep.
    """
    cfg = cfg or InferenceConfig()
    start = time.perf_counter()
    state = initialize(y, mask, cfg)
    # restart draws use their own stream so round 0 matches a plain run
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([cfg.seed, 1])))
    report = RunReport()
    best = best_value = None
    for rnd in range(cfg.restarts + 1):
        if rnd > 0:
            reset_noise(state, rng)
            report.restart_iterations.append(report.iterations + 1)
        state, value, converged = _run_round(
            state, cfg, report, callback, report.iterations + 1
        )
        improved = best_value is None or value > best_value + cfg.restart_tol * abs(best_value)
        if best_value is None or value > best_value:
            best, best_value = copy.deepcopy(state), value
            report.converged = converged
        if not improved:
            break
    report.final_ranks = list(best.ranks)
    report.final_elbo = best_value
    report.jitter_events = state.jitter_events
    report.wall_seconds = time.perf_counter() - start
    return best, report


def predict(state: PosteriorState) -> tuple[np.ndarray, np.ndarray]:
    """Point estimates of the low-rank and sparse components."""
    low = ring.tr_full(state.means)
    sparse = np.where(state.mask, state.sparse_mean, 0.0)
    return low, sparse
