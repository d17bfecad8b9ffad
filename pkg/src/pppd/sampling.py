"""Draw basic-variable samples conditional on a performance state.

Everything runs in an independent standard-normal space ``u``; physical
inputs are ``x = spec.to_physical(u)``. Frequent states use plain rejection
sampling, rare ones use subset simulation with a Hamiltonian Monte Carlo
move that is rejected whenever it leaves the current intermediate state.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import InputError, LimitState, PairedDataset, StochasticModel, evaluate_many

log = logging.getLogger(__name__)


class SamplingError(RuntimeError):
    """Sampler cannot make progress (stagnation, collapse, infeasible state)."""


@dataclass(frozen=True)
class HmcConfig:
    """Leapfrog settings with identity mass.

    For a standard-normal potential the trajectory is (almost) a rotation in
    phase space by ``step_size * n_leapfrog`` radians, so that product sets
    how far a proposal moves.
    """

    step_size: float = 0.1
    n_leapfrog: int = 5

    def __post_init__(self):
        if not self.step_size > 0:
            raise InputError("step_size must be > 0")
        if self.n_leapfrog < 1:
            raise InputError("n_leapfrog must be >= 1")
        if self.step_size * self.n_leapfrog > 2 * math.pi:
            raise InputError("step_size * n_leapfrog must not exceed 2*pi")


@dataclass(frozen=True)
class SmcConfig:
    p0: float = 0.1
    n0: int = 1000
    n_target: int | None = None
    seed: int = 0
    hmc: HmcConfig = field(default_factory=HmcConfig)
    max_levels: int = 40
    min_acceptance: float = 0.05
    batch_size: int = 4096

    def __post_init__(self):
        if not 0 < self.p0 < 1:
            raise InputError("p0 must lie in (0, 1)")
        if round(self.n0 * self.p0) < 1:
            raise InputError("round(n0 * p0) must be at least 1")
        n = self.n_target if self.n_target is not None else round(self.n0 * self.p0)
        if n < 1:
            raise InputError("n_target must be >= 1")
        if not 0.5 <= (self.n0 * self.p0) / n <= 2.0:
            warnings.warn(f"n0*p0 = {self.n0 * self.p0:g} is far from n_target = {n}", stacklevel=2)

    @property
    def n_final(self):
        return self.n_target if self.n_target is not None else int(round(self.n0 * self.p0))

    @property
    def n_seeds(self):
        return int(math.ceil(self.p0 * self.n0 - 1e-9))


@dataclass
class SmcResult:
    dataset: PairedDataset
    p_estimate: float
    levels: list
    n_model_evals: int

    def to_json(self):
        return {"p_estimate": self.p_estimate, "n_model_evals": self.n_model_evals,
                "levels": self.levels}


def transform_to_physical(spec, u):
    u = np.asarray(u, dtype=float)
    if u.shape[-1] != spec.dims:
        raise InputError(f"expected {spec.dims} standard-normal coordinates, got {u.shape[-1]}")
    return spec.to_physical(u)


class _StateEvaluator:
    """Maps standard-normal points to (x, y, G) and counts model calls."""

    def __init__(self, model: StochasticModel, ls: LimitState, batch_size=4096):
        self.model, self.ls, self.batch_size = model, ls, batch_size
        self.n_evals = 0

    def __call__(self, U):
        U = np.atleast_2d(U)
        X = transform_to_physical(self.model.input_spec, U)
        Y = evaluate_many(self.model, X, self.batch_size)
        self.n_evals += len(U)
        return X, Y, self.ls.raw(Y)


# ---------------------------------------------------------------------------
# direct Monte Carlo
# ---------------------------------------------------------------------------

def direct_mc(model, ls, n, seed=0, batch_size=2000, probe_size=None, min_acceptance=1e-3):
    """``n`` in-state pairs by rejection sampling from the unconditional input law.

    The state probability is estimated as ``n / draws`` where ``draws`` counts
    samples up to and including the ``n``-th accepted one.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    ev = _StateEvaluator(model, ls, batch_size)
    dims = model.input_spec.dims
    keep_u, keep_x, keep_y, keep_g = [], [], [], []
    n_acc = draws = 0
    probe = probe_size or max(1000, min(n, 5000))
    while n_acc < n:
        size = batch_size if draws else max(batch_size, probe) if not ls.is_full_space else n
        if ls.is_full_space:
            size = min(size, n - n_acc)
        U = rng.standard_normal((size, dims))
        X, Y, G = ev(U)
        inside = G - ls.shift <= 0
        if draws == 0 and not ls.is_full_space and inside.mean() < min_acceptance:
            raise SamplingError(
                f"only {inside.sum()} of {size} probe samples fall in the state "
                f"(acceptance {inside.mean():.2e} < {min_acceptance:g}); use SMC instead")
        idx = np.flatnonzero(inside)
        need = n - n_acc
        if len(idx) >= need:
            idx = idx[:need]
            draws += int(idx[-1]) + 1
        else:
            draws += size
        keep_u.append(U[idx]); keep_x.append(X[idx]); keep_y.append(Y[idx]); keep_g.append(G[idx])
        n_acc += len(idx)
    p_hat = n / draws
    meta = {"sampler": "direct", "seed": int(seed), "model_id": model.model_id,
            "model_params": model.params(), "limit_state": ls.spec, "n_drawn": draws,
            "p_estimate": p_hat, "n_model_evals": ev.n_evals, "levels": []}
    return PairedDataset(np.vstack(keep_x), np.vstack(keep_y), np.concatenate(keep_g), meta,
                         np.vstack(keep_u))


# ---------------------------------------------------------------------------
# HMC
# ---------------------------------------------------------------------------

def leapfrog(u, p, cfg: HmcConfig):
    """Leapfrog integration for the potential ``|u|^2 / 2`` (gradient ``u``)."""
    eps = cfg.step_size
    u = np.array(u, dtype=float)
    p = p - 0.5 * eps * u
    for i in range(cfg.n_leapfrog):
        u = u + eps * p
        if i + 1 < cfg.n_leapfrog:
            p = p - eps * u
    p = p - 0.5 * eps * u
    return u, p


def hmc_propose(U, cfg: HmcConfig, rng):
    """One batch of HMC proposals; returns proposals, Metropolis mask and dH."""
    P = rng.standard_normal(U.shape)
    U1, P1 = leapfrog(U, P, cfg)
    h0 = 0.5 * (np.sum(U * U, axis=-1) + np.sum(P * P, axis=-1))
    h1 = 0.5 * (np.sum(U1 * U1, axis=-1) + np.sum(P1 * P1, axis=-1))
    dh = h1 - h0
    finite = np.all(np.isfinite(U1), axis=-1) & np.isfinite(dh)
    log_r = rng.random(len(U))
    with np.errstate(invalid="ignore"):
        ok = finite & (np.log(log_r) < -np.where(finite, dh, np.inf))
    return U1, ok, dh


def hmc_transition(current, in_state, cfg: HmcConfig, seed):
    """Single HMC move for a standard normal truncated to ``in_state``.

    ``in_state`` takes a batch of standard-normal points and returns booleans.
    Proposals leaving the state are rejected and the chain stays put.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = np.atleast_2d(np.asarray(current, dtype=float))
    U1, ok, _ = hmc_propose(u, cfg, rng)
    if ok[0] and bool(np.asarray(in_state(U1))[0]):
        return U1[0]
    return u[0].copy()


def hmc_chain(u0, in_state, cfg: HmcConfig, n_steps, seed):
    """Run independent chains from the rows of ``u0``; returns (n_steps, C, d)
    states and the fraction of accepted moves."""
    rng = np.random.default_rng(seed)
    U = np.atleast_2d(np.array(u0, dtype=float))
    out = np.empty((n_steps,) + U.shape)
    accepted = 0
    for s in range(n_steps):
        U1, ok, _ = hmc_propose(U, cfg, rng)
        if ok.any():
            inside = np.zeros(len(U), bool)
            inside[ok] = np.asarray(in_state(U1[ok]), dtype=bool)
            U[inside] = U1[inside]
            accepted += int(inside.sum())
        out[s] = U
    return out, accepted / (n_steps * len(U))


def _mcmc_fill(U, X, Y, G, threshold, n_new, ev, cfg, rng):
    """Advance chains started at the seed rows round-robin until ``n_new``
    states are recorded. Returns the new states and the acceptance rate."""
    C = len(U)
    if n_new <= 0:
        return (U[:0], X[:0], Y[:0], G[:0]), 1.0
    U, X, Y, G = U.copy(), X.copy(), Y.copy(), G.copy()
    new_u, new_x, new_y, new_g = [], [], [], []
    got = proposals = accepted = 0
    while got < n_new:
        take = min(C, n_new - got)
        U1, ok, _ = hmc_propose(U[:take], cfg, rng)
        proposals += take
        idx = np.flatnonzero(ok)
        if len(idx):
            X1, Y1, G1 = ev(U1[idx])
            inside = G1 <= threshold
            sel = idx[inside]
            U[sel], X[sel], Y[sel], G[sel] = U1[sel], X1[inside], Y1[inside], G1[inside]
            accepted += len(sel)
        new_u.append(U[:take].copy()); new_x.append(X[:take].copy())
        new_y.append(Y[:take].copy()); new_g.append(G[:take].copy())
        got += take
    rate = accepted / max(proposals, 1)
    return (np.vstack(new_u), np.vstack(new_x), np.vstack(new_y), np.concatenate(new_g)), rate


# ---------------------------------------------------------------------------
# subset simulation
# ---------------------------------------------------------------------------

def _level_rng(seed, level):
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(level)]))


def smc_sample(model, ls, cfg: SmcConfig = SmcConfig()):
    """Adaptive subset simulation with HMC refills.

    Level ``j`` keeps the ``ceil(p0 * n0)`` samples with the smallest limit-state
    values as chain seeds; their largest value is the next threshold. Once the
    threshold would drop to zero or below, the remaining in-state samples seed a
    final expansion to ``cfg.n_final`` samples.
    """
    ev = _StateEvaluator(model, ls, cfg.batch_size)
    dims = model.input_spec.dims
    n0, ns = cfg.n0, cfg.n_seeds
    shift = ls.shift

    rng = _level_rng(cfg.seed, 0)
    U = rng.standard_normal((n0, dims))
    X, Y, G = ev(U)
    G = G - shift
    levels = []
    prev_threshold = np.inf
    acc_rate = 1.0
    m = 0
    while True:
        m += 1
        order = np.argsort(G, kind="stable")
        U, X, Y, G = U[order], X[order], Y[order], G[order]
        g_next = G[ns - 1]
        if g_next <= 0:
            p_last = float(np.mean(G <= 0))
            levels.append({"threshold": 0.0, "acceptance_rate": acc_rate,
                           "conditional_probability": p_last, "n_in_state": int(np.sum(G <= 0))})
            break
        if g_next >= prev_threshold:
            raise SamplingError(
                f"level {m}: threshold stagnated at {g_next:.6g} (previous {prev_threshold:.6g})")
        if m >= cfg.max_levels:
            raise SamplingError(
                f"state not reached after {cfg.max_levels} levels (current threshold {g_next:.6g}, "
                f"probability below {cfg.p0 ** cfg.max_levels:.1e})")
        levels.append({"threshold": float(g_next), "acceptance_rate": acc_rate,
                       "conditional_probability": cfg.p0, "n_in_state": ns})
        log.info("level %d threshold %.6g", m, g_next)
        keep = G <= g_next
        seeds = (U[keep], X[keep], Y[keep], G[keep])
        (nu, nx, ny, ng), acc_rate = _mcmc_fill(*seeds, g_next, n0 - len(seeds[0]), ev, cfg.hmc,
                                                _level_rng(cfg.seed, m))
        if acc_rate < cfg.min_acceptance:
            raise SamplingError(
                f"level {m}: HMC acceptance {acc_rate:.3f} below {cfg.min_acceptance}; "
                "reduce hmc.step_size or n_leapfrog")
        U, X, Y, G = (np.vstack([seeds[0], nu]), np.vstack([seeds[1], nx]),
                      np.vstack([seeds[2], ny]), np.concatenate([seeds[3], ng]))
        prev_threshold = g_next

    p_est = cfg.p0 ** (m - 1) * p_last
    inside = G <= 0
    U, X, Y, G = U[inside], X[inside], Y[inside], G[inside]
    n_final = cfg.n_final
    if len(U) >= n_final:
        U, X, Y, G = U[:n_final], X[:n_final], Y[:n_final], G[:n_final]
        final_rate = None
    else:
        (nu, nx, ny, ng), final_rate = _mcmc_fill(U, X, Y, G, 0.0, n_final - len(U), ev, cfg.hmc,
                                                  _level_rng(cfg.seed, m + 1000))
        U, X, Y, G = np.vstack([U, nu]), np.vstack([X, nx]), np.vstack([Y, ny]), np.concatenate([G, ng])
    levels[-1]["final_acceptance_rate"] = final_rate

    meta = {"sampler": "smc", "seed": int(cfg.seed), "model_id": model.model_id,
            "model_params": model.params(), "limit_state": ls.spec, "p0": cfg.p0, "n0": cfg.n0,
            "hmc": {"step_size": cfg.hmc.step_size, "n_leapfrog": cfg.hmc.n_leapfrog},
            "levels": levels, "p_estimate": p_est, "n_model_evals": ev.n_evals}
    ds = PairedDataset(X, Y, G + shift, meta, U)
    return SmcResult(ds, float(p_est), levels, ev.n_evals)
