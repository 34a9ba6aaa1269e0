"""Branching-process and extreme-order statistics of recall counts.

A lifetime's branching tree is a Galton-Watson process in which every member
splits into ``n_split`` with probability ``sigma`` per step.  Each member of
each generation carries one trigger; a trigger at generation ``t`` with
recall length ``L`` recalls ``R = (t/T) L`` records.  The quantities of
interest are the spacing ``D`` between the two largest ``R`` on the tree and
the excess ``log2 E = D - log2 Y`` over the total progeny ``Y``.

Every Monte Carlo trial draws from its own substream, derived from
``(seed, trial index)``, so results do not depend on how trials are spread
over worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParameterError
from .evolution import branch_recall_count, evolve
from .topology import OrbitTopology, recalls_per_section, sample_pareto

__all__ = [
    "GWParams",
    "GWRun",
    "ExtremeReport",
    "ExcessResult",
    "trial_rng",
    "simulate_gw",
    "simulate_gw_many",
    "generation_pmf",
    "generation_of_trigger",
    "compute_R0",
    "sample_R",
    "top_two",
    "spacing_report",
    "excess_distribution",
    "tree_vs_theory",
    "ks_ccdf_distance",
]


@dataclass(frozen=True)
class GWParams:
    sigma: float
    T: int
    trials: int = 10_000
    seed: int = 0
    n_split: int = 2

    @property
    def mu(self) -> float:
        """Mean offspring per member."""
        return 1.0 + (self.n_split - 1) * self.sigma

    def validate(self) -> "GWParams":
        if not 0.0 <= self.sigma < 1.0:
            raise ParameterError(f"sigma={self.sigma} outside [0, 1)", "sigma")
        if self.T < 1:
            raise ParameterError(f"T={self.T} must be positive", "T")
        if self.trials < 1:
            raise ParameterError(f"trials={self.trials} must be positive", "trials")
        if self.n_split < 2:
            raise ParameterError(f"n_split={self.n_split} must be at least 2", "n_split")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be a 64-bit unsigned integer", "seed")
        return self


@dataclass
class GWRun:
    Z: np.ndarray
    Y: int
    W_hat: float


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(trial,)))


def simulate_gw(params: GWParams, rng: np.random.Generator) -> GWRun:
    """One lifetime: ``Z_0 = 1``; each member has ``n_split`` offspring w.p. sigma, else 1."""
    Z = np.empty(params.T + 1, dtype=np.int64)
    z = 1
    Z[0] = 1
    for t in range(1, params.T + 1):
        z += (params.n_split - 1) * int(rng.binomial(z, params.sigma))
        Z[t] = z
    return GWRun(Z=Z, Y=int(Z[1:].sum()), W_hat=z / params.mu**params.T)


def _map_trials(fn, trials: int, threads: int):
    if threads <= 1:
        return [fn(i) for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(trials), chunksize=max(1, trials // (8 * threads))))


def simulate_gw_many(params: GWParams, threads: int = 1) -> tuple:
    """``(Z_T, Y_T)`` arrays over ``params.trials`` independent lifetimes."""
    params.validate()

    def one(i):
        run = simulate_gw(params, trial_rng(params.seed, i))
        return run.Z[-1], run.Y

    out = np.array(_map_trials(one, params.trials, threads), dtype=np.int64)
    return out[:, 0], out[:, 1]


def generation_pmf(sigma: float, T: int, n_split: int = 2) -> np.ndarray:
    """``P_j`` for ``j = 0..T``: geometric in the distance from the last generation.

    The law ``(1 - 1/mu) mu**-j`` is truncated at ``j = T`` and renormalized.
    """
    mu = 1.0 + (n_split - 1) * sigma
    if mu <= 1.0:
        raise DomainError("generation law needs sigma > 0")
    j = np.arange(T + 1)
    weights = (1.0 - 1.0 / mu) * mu ** (-j.astype(float))
    return weights / weights.sum()


def generation_of_trigger(params: GWParams, rng, size=None):
    """Generation ``t = T - j`` at which a uniformly chosen tree member sits."""
    j = rng.choice(params.T + 1, size=size, p=generation_pmf(params.sigma, params.T, params.n_split))
    return params.T - j


def compute_R0(alpha: float, L0: float, params: GWParams) -> float:
    """Scale of the recall-count tail: ``R0**a = L0**a * sum_t P_{T-t} (t/T)**a``."""
    pmf = generation_pmf(params.sigma, params.T, params.n_split)
    t = params.T - np.arange(params.T + 1)
    return float(L0 * np.sum(pmf * (t / params.T) ** alpha) ** (1.0 / alpha))


def sample_R(Y: int, alpha: float, L0: float, params: GWParams, rng, cap: float = math.inf) -> np.ndarray:
    """Recall counts of ``Y`` independent triggers."""
    if Y < 1:
        raise DomainError(f"Y={Y} must be positive")
    t = generation_of_trigger(params, rng, size=Y)
    L = sample_pareto(alpha, L0, cap, rng, size=Y)
    return t / params.T * L


def top_two(values) -> tuple:
    """Largest and second-largest entries, by linear-time selection."""
    values = np.asarray(values)
    if values.size < 2:
        raise DomainError("need at least two values")
    pair = np.partition(values, values.size - 2)[-2:]
    return float(pair[1]), float(pair[0])


@dataclass
class ExtremeReport:
    R1: float
    R2: float
    D: float
    log2E: float
    Y: int
    R_list: np.ndarray = field(default=None, repr=False)


def spacing_report(R_list, keep: bool = False) -> ExtremeReport:
    R1, R2 = top_two(R_list)
    Y = len(R_list)
    D = R1 - R2
    return ExtremeReport(R1=R1, R2=R2, D=D, log2E=D - math.log2(Y), Y=Y, R_list=np.asarray(R_list) if keep else None)


@dataclass
class ExcessResult:
    """Per-trial extreme-order quantities plus the constants used to rescale them."""

    params: GWParams
    alpha: float
    L0: float
    R0: float
    C_T: float
    Y: np.ndarray
    Z_T: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    D: np.ndarray
    log2E: np.ndarray
    log2E_Z: np.ndarray

    @property
    def rescaled(self) -> np.ndarray:
        """``(sigma / C_T)**(1/alpha) * log2E / R0``: the argument of the limiting CDF."""
        return (self.params.sigma / self.C_T) ** (1.0 / self.alpha) * self.log2E / self.R0

    @property
    def normalized_spacing(self) -> np.ndarray:
        return self.D / (self.R0 * self.Y ** (1.0 / self.alpha))

    def summary(self) -> dict:
        q = [0.05, 0.25, 0.5, 0.75, 0.95]

        def quant(x):
            return {f"q{int(100 * p):02d}": float(v) for p, v in zip(q, np.quantile(x, q))}

        return {
            "sigma": self.params.sigma,
            "T": self.params.T,
            "alpha": self.alpha,
            "L0": self.L0,
            "trials": self.params.trials,
            "seed": self.params.seed,
            "n_split": self.params.n_split,
            "mu": self.params.mu,
            "C_T": self.C_T,
            "R0": self.R0,
            "mean_Y": float(self.Y.mean()),
            "mean_Z_T": float(self.Z_T.mean()),
            "log2E": quant(self.log2E),
            "log2E_Z": quant(self.log2E_Z),
            "rescaled": quant(self.rescaled),
            "fraction_log2E_positive": float(np.mean(self.log2E > 0)),
        }

    def rows(self):
        for i in range(self.Y.size):
            yield {
                "Y": int(self.Y[i]),
                "R1": float(self.R1[i]),
                "R2": float(self.R2[i]),
                "D": float(self.D[i]),
                "log2E": float(self.log2E[i]),
            }


def excess_distribution(params: GWParams, alpha: float, L0: float, threads: int = 1) -> ExcessResult:
    """Monte Carlo of the excess factor over ``params.trials`` lifetimes."""
    params.validate()
    R0 = compute_R0(alpha, L0, params)

    def one(i):
        rng = trial_rng(params.seed, i)
        run = simulate_gw(params, rng)
        rep = spacing_report(sample_R(run.Y, alpha, L0, params, rng))
        return run.Y, run.Z[-1], rep.R1, rep.R2

    out = _map_trials(one, params.trials, threads)
    Y = np.array([o[0] for o in out], dtype=np.int64)
    Z_T = np.array([o[1] for o in out], dtype=np.int64)
    R1 = np.array([o[2] for o in out])
    R2 = np.array([o[3] for o in out])
    D = R1 - R2
    return ExcessResult(
        params=params,
        alpha=alpha,
        L0=L0,
        R0=R0,
        C_T=params.mu**params.T,
        Y=Y,
        Z_T=Z_T,
        R1=R1,
        R2=R2,
        D=D,
        log2E=D - np.log2(Y),
        log2E_Z=D - np.log2(Z_T),
    )


def ks_ccdf_distance(sample, ccdf, lower: float = -math.inf) -> float:
    """``sup_{x >= lower} |empirical CCDF(x) - ccdf(x)|`` for a continuous model."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    keep = np.flatnonzero(x >= lower)
    model = ccdf(x[keep])
    after = (n - keep - 1) / n
    before = (n - keep) / n
    gap = np.max(np.maximum(np.abs(after - model), np.abs(before - model)), initial=0.0)
    if math.isfinite(lower):
        gap = max(gap, abs(np.mean(x > lower) - float(ccdf(np.array([lower]))[0])))
    return float(gap)


def tree_vs_theory(topology: OrbitTopology, T: int | None = None) -> dict:
    """Compare one evolved tree with the branching-process bookkeeping.

    Trigger occurrences are counted as distinct tree nodes, a node being the
    ``(trigger, path prefix)`` at the time of writing; with one trigger per
    non-branching index they number ``sum_{t<T} Z_t`` minus the branching
    events.

    ``R_pred`` is ``(t/T) L(m)`` for a trigger written at time ``t``.  The
    section holding the trigger itself contributes a further ``l(m)`` recalled
    records on every branch, which ``R_own`` holds; it is negligible only when
    a lifetime spans many sections.
    """
    params = topology.params
    T = params.T if T is None else T
    sup = evolve(topology, T)
    Z = np.array(sup.counts)
    n = params.n_split
    mu = 1.0 + (n - 1) * params.sigma

    def prefix_at(path, time):
        # branching addresses reached no later than ``time``
        Q = topology.Q
        t_n, out = 0, [path[0]]
        for b_next in path[1:]:
            q = min(x for x in Q if x >= out[-1])
            t_n += q - out[-1] + 1
            if t_n > time:
                break
            out.append(b_next)
        return tuple(out)

    events = set()
    R_obs, R_pred, R_own = [], [], []
    for b in sup.branches:
        rc = branch_recall_count(b, topology)
        for m, R in rc.R.items():
            visit = T - b.ages[m]
            events.add((m, prefix_at(b.path, visit)))
            R_obs.append(R)
            R_pred.append(visit / params.T * topology.L[m])
            R_own.append(recalls_per_section(topology.L[m], params))
    branch_events = (int(Z[-1]) - 1) // (n - 1)
    R_obs, R_pred, R_own = np.array(R_obs, dtype=float), np.array(R_pred), np.array(R_own, dtype=float)
    return {
        "T": T,
        "Z": Z.tolist(),
        "Z_T": int(Z[-1]),
        "gw_mean_Z_T": mu**T,
        "Y_T": int(Z[1:].sum()),
        "node_count": int(Z[:-1].sum()),
        "trigger_events": len(events),
        "branch_events": branch_events,
        "mean_R": float(R_obs.mean()) if R_obs.size else 0.0,
        "mean_R_pred": float(R_pred.mean()) if R_pred.size else 0.0,
        "mean_R_pred_own": float((R_pred + R_own).mean()) if R_pred.size else 0.0,
        "R_obs": R_obs,
        "R_pred": R_pred,
        "R_own": R_own,
    }
