"""Random construction of the time-step operator's frozen structure.

Every random draw that defines the evolution operator happens here, once:
section layout on the orbit, the labelled pools that keep branches apart,
jump addresses, record address sets, trigger records and recall sets.  The
result is an immutable :class:`OrbitTopology` that the evolution, oracle and
statistics modules only ever read.

Orbital indices run over ``1..K`` and record indices over ``1..I``.
"""

from __future__ import annotations

import dataclasses
import heapq
import json
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np

from .errors import DomainError, ParameterError, TopologyError

__all__ = [
    "ModelParams",
    "OrbitTopology",
    "build_topology",
    "backward_tree",
    "build_recall_sets",
    "sample_pareto",
    "pareto_ccdf",
    "recalls_per_section",
    "load_params",
]

_INT_FIELDS = ("K", "Q_size", "N", "I", "T", "d_min", "n_reg", "n_split", "seed", "w_red")
_FLOAT_FIELDS = ("alpha", "L0")


@dataclass(frozen=True)
class ModelParams:
    """Scalar knobs of the model.

    ``w_red`` is the number of record indices written at each orbital index,
    so the record count must equal ``K * w_red``.
    """

    K: int
    Q_size: int
    N: int
    I: int
    T: int
    alpha: float
    L0: float
    d_min: int
    n_reg: int = 4
    n_split: int = 2
    seed: int = 0
    w_red: int = 8

    @property
    def sigma(self) -> float:
        return self.Q_size / self.K

    @property
    def n_labels(self) -> int:
        return self.n_split**self.n_reg

    @property
    def max_section(self) -> int:
        return (2 * self.K) // self.Q_size - self.d_min

    def validate(self) -> "ModelParams":
        for name in _INT_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise ParameterError(f"{name} must be an integer, got {value!r}", name)
        for name in _FLOAT_FIELDS:
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, float, np.floating)):
                raise ParameterError(f"{name} must be a number, got {value!r}", name)

        def need(cond, name, message):
            if not cond:
                raise ParameterError(f"{name}: {message}", name)

        need(self.K >= 2, "K", "need at least two orbital indices")
        need(1 <= self.Q_size <= self.K, "Q_size", "must lie in [1, K]")
        need(self.T >= 1, "T", "lifetime must be at least one step")
        need(self.T < self.N, "T", f"T={self.T} must be below N={self.N}; ages only run to N-1")
        need(1.0 < self.alpha < 2.0, "alpha", "Pareto exponent must lie in (1, 2)")
        need(self.L0 >= 1.0, "L0", "Pareto scale must be at least 1")
        need(self.n_split >= 2, "n_split", "branch arity must be at least 2")
        need(self.n_reg >= 1, "n_reg", "register length must be at least 1")
        need(
            self.Q_size >= self.n_labels,
            "Q_size",
            f"Q_size={self.Q_size} < n_split**n_reg={self.n_labels}; register partition impossible",
        )
        need(self.d_min >= 1, "d_min", "minimal section length must be positive")
        hi = self.max_section
        need(
            hi >= self.d_min and self.Q_size * self.d_min <= self.K <= self.Q_size * hi,
            "d_min",
            f"sections in [{self.d_min}, {hi}] cannot tile K={self.K} with {self.Q_size} sections",
        )
        need(self.w_red >= 1, "w_red", "each orbital index needs at least one record")
        need(
            self.I == self.K * self.w_red,
            "I",
            f"I={self.I} but the record layout needs K*w_red={self.K * self.w_red}",
        )
        need(self.I > self.L0, "I", "the Pareto cap I must exceed L0")
        need(0 <= self.seed < 2**64, "seed", "must be a 64-bit unsigned integer")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ModelParams":
        names = [f.name for f in dataclasses.fields(cls)]
        unknown = sorted(set(data) - set(names))
        if unknown:
            raise ParameterError(f"unknown parameter {unknown[0]!r}", unknown[0])
        for f in dataclasses.fields(cls):
            if f.default is dataclasses.MISSING and f.name not in data:
                raise ParameterError(f"missing required parameter {f.name!r}", f.name)
        values = {}
        for name, value in data.items():
            if name in _FLOAT_FIELDS and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            values[name] = value
        return cls(**values).validate()


def load_params(path) -> ModelParams:
    """Read a flat key/value parameter file (TOML, or JSON by suffix)."""
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".json":
        data = json.loads(raw)
    else:
        try:
            import tomllib
        except ModuleNotFoundError:  # Python < 3.11
            import tomli as tomllib
        try:
            data = tomllib.loads(raw.decode())
        except tomllib.TOMLDecodeError as exc:
            raise ParameterError(f"{path}: {exc}") from exc
    if "params" in data and isinstance(data["params"], dict):
        data = data["params"]
    return ModelParams.from_mapping(data)


def _freeze(mapping):
    return MappingProxyType({k: tuple(v) for k, v in sorted(mapping.items())})


@dataclass(frozen=True)
class OrbitTopology:
    """Frozen structure of the time-step operator.

    ``sections`` lists ``(start, end)`` pairs in orbital order; every section
    ends at an element of ``Q``.  ``J[label]`` holds the branching indices of
    one register pool, and ``jump[q]`` the ``n_split`` section starts reached
    from ``q`` (position ``c`` is branch label ``c``).
    """

    params: ModelParams
    Q: tuple
    sections: tuple
    J: tuple
    A_W: Mapping
    M: tuple
    jump: Mapping
    B: Mapping
    k_in: int
    A_R: Mapping = field(default_factory=dict)
    L: Mapping = field(default_factory=dict)
    clamps: int = 0

    def __post_init__(self):
        object.__setattr__(self, "A_W", _freeze(self.A_W))
        object.__setattr__(self, "jump", _freeze(self.jump))
        object.__setattr__(self, "B", _freeze(self.B))
        object.__setattr__(self, "A_R", _freeze(self.A_R))
        object.__setattr__(self, "L", MappingProxyType(dict(sorted(self.L.items()))))

    @cached_property
    def Q_set(self) -> frozenset:
        return frozenset(self.Q)

    @cached_property
    def M_set(self) -> frozenset:
        return frozenset(self.M)

    @cached_property
    def starts(self) -> tuple:
        return tuple(s for s, _ in self.sections)

    @cached_property
    def record_owner(self) -> Mapping:
        """Map record index -> orbital index that writes it."""
        return MappingProxyType({i: k for k, recs in self.A_W.items() for i in recs})

    @cached_property
    def trigger_of(self) -> Mapping:
        """Map orbital index k not in Q -> its unique trigger record."""
        owner = self.record_owner
        return MappingProxyType({owner[m]: m for m in self.M})

    @cached_property
    def predecessors(self) -> tuple:
        """For each section id, the ids of sections whose end jumps to its start."""
        sec_of_start = {s: i for i, s in enumerate(self.starts)}
        preds = [set() for _ in self.sections]
        for sid, (_, q) in enumerate(self.sections):
            for target in self.jump[q]:
                preds[sec_of_start[target]].add(sid)
        return tuple(tuple(sorted(p)) for p in preds)

    def section_of(self, k: int) -> int:
        """Id of the section containing orbital index ``k``."""
        return bisect_left(self.Q, k)

    def is_branch(self, k: int) -> bool:
        return k in self.Q_set

    def successors(self, k: int) -> tuple:
        return self.jump[k] if k in self.Q_set else (k + 1,)

    # serialization -------------------------------------------------------

    def to_dict(self) -> dict:
        def keyed(mapping):
            return {str(k): sorted(v) for k, v in mapping.items()}

        return {
            "params": self.params.to_dict(),
            "Q": list(self.Q),
            "sections": [list(s) for s in self.sections],
            "J": [list(pool) for pool in self.J],
            "k_in": self.k_in,
            "A_W": keyed(self.A_W),
            "M": sorted(self.M),
            # jump keeps label order, which is not ascending
            "jump": {str(k): list(v) for k, v in self.jump.items()},
            "B": keyed(self.B),
            "A_R": keyed(self.A_R),
            "L": {str(k): float(v) for k, v in self.L.items()},
            "clamps": self.clamps,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":")) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, data: Mapping) -> "OrbitTopology":
        def ints(mapping):
            return {int(k): tuple(int(x) for x in v) for k, v in mapping.items()}

        return cls(
            params=ModelParams.from_mapping(data["params"]),
            Q=tuple(data["Q"]),
            sections=tuple(tuple(s) for s in data["sections"]),
            J=tuple(tuple(pool) for pool in data["J"]),
            A_W=ints(data["A_W"]),
            M=tuple(data["M"]),
            jump=ints(data["jump"]),
            B=ints(data["B"]),
            k_in=int(data["k_in"]),
            A_R=ints(data["A_R"]),
            L={int(k): float(v) for k, v in data["L"].items()},
            clamps=int(data.get("clamps", 0)),
        )

    @classmethod
    def loads(cls, text: str) -> "OrbitTopology":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path) -> "OrbitTopology":
        return cls.loads(Path(path).read_text())


# ---------------------------------------------------------------------------
# Pareto law of recall-set lengths


def _check_pareto(alpha, L0, cap):
    if not 1.0 < alpha < 2.0:
        raise DomainError(f"alpha={alpha} outside (1, 2)")
    if L0 < 1.0:
        raise DomainError(f"L0={L0} below 1")
    if not cap > L0:
        raise DomainError(f"cap={cap} must exceed L0={L0}")


def sample_pareto(alpha: float, L0: float, cap: float, rng: np.random.Generator, size=None):
    """Draw lengths from the capped Pareto law by inverse CDF.

    The survival function is ``(L0/L)**alpha`` on ``[L0, cap)``; the remaining
    mass ``(L0/cap)**alpha`` sits on ``cap`` itself, so no draw exceeds it.
    """
    _check_pareto(alpha, L0, cap)
    u = rng.random(size)
    draw = L0 * (1.0 - u) ** (-1.0 / alpha)
    return np.minimum(draw, cap) if size is not None else float(min(draw, cap))


def pareto_ccdf(x, alpha: float, L0: float, cap: float = math.inf):
    """Fraction of capped-Pareto draws strictly greater than ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.where(x < L0, 1.0, (L0 / np.maximum(x, L0)) ** alpha)
    return np.where(x >= cap, 0.0, out)


def recalls_per_section(L: float, params: ModelParams) -> int:
    """Records drawn per backward section: ``ceil(K * L / (T * Q_size))``."""
    return math.ceil(params.K * L / (params.T * params.Q_size))


# ---------------------------------------------------------------------------
# construction


def _section_lengths(params: ModelParams, rng) -> np.ndarray:
    lo, hi = params.d_min, params.max_section
    lengths = rng.integers(lo, hi + 1, size=params.Q_size)
    excess = int(lengths.sum()) - params.K
    while excess:
        step = -1 if excess > 0 else 1
        movable = np.flatnonzero((lengths > lo) if step < 0 else (lengths < hi))
        lengths[movable[rng.integers(movable.size)]] += step
        excess += step
    return lengths


def _find_violation(lengths, succ, horizon, first=0):
    """First walk defect reachable within ``horizon`` steps from any section start.

    Sections are scanned as walk origins from ``first`` on.  Returns
    ``("loop", cycle, origin)`` when a walk re-enters a section (a walk enters
    every section at its start, so this is exactly an orbital revisit), or
    ``("blank", (earlier, later), origin)`` when a walk branches at the ends of two
    sections whose jump targets overlap, which would leave a required-blank
    record written.  Returns None for a clean layout.

    Both defects are decided by shortest walks: a section starting a defective
    walk has a short enough cycle back to itself, or a short enough path to a
    target-sharing section, so one bounded Dijkstra search per section suffices.
    """
    preds = {}
    for i, out in enumerate(succ):
        for t in out:
            preds.setdefault(t, set()).add(i)
    share = [set().union(*(preds[t] for t in out)) - {i} for i, out in enumerate(succ)]
    for s0 in range(first, len(lengths)):
        dist, prev, done = {s0: 0}, {}, set()
        heap = [(0, s0)]
        while heap:
            t, s = heapq.heappop(heap)
            if s in done:
                continue
            done.add(s)
            t_next = t + lengths[s]
            if t_next > horizon:
                continue
            if s in share[s0]:
                return "blank", (s0, s), s0
            for s2 in succ[s]:
                if s2 == s0:
                    path = [s]
                    while path[-1] != s0:
                        path.append(prev[path[-1]])
                    return "loop", tuple(reversed(path)) + (s0,), s0
                if t_next < dist.get(s2, horizon + 1):
                    dist[s2], prev[s2] = t_next, s
                    heapq.heappush(heap, (t_next, s2))
    return None


def _draw_orbit(params: ModelParams, rng):
    lengths = _section_lengths(params, rng)
    Q = tuple(int(q) for q in np.cumsum(lengths))
    starts = (1,) + tuple(q + 1 for q in Q[:-1])
    n_labels = params.n_labels

    order = rng.permutation(params.Q_size)
    pools = [[] for _ in range(n_labels)]
    for rank, idx in enumerate(order):
        pools[rank % n_labels].append(Q[idx])
    pools = tuple(tuple(sorted(p)) for p in pools)
    return lengths, Q, starts, pools


def _target_pool(q, c, label_of, pools, n_split):
    return pools[(label_of[q] * n_split + c) % len(pools)]


def _draw_jump(q, c, label_of, pools, start_of_end, n_split, rng):
    pool = _target_pool(q, c, label_of, pools, n_split)
    return start_of_end[pool[rng.integers(len(pool))]]


def _layout(params: ModelParams, rng, repairs: int):
    """One layout attempt; returns (Q, starts, pools, jump, violation)."""
    lengths, Q, starts, pools = _draw_orbit(params, rng)
    label_of = {q: lab for lab, pool in enumerate(pools) for q in pool}
    start_of_end = dict(zip(Q, starts))
    sec_of_start = {s: i for i, s in enumerate(starts)}
    jump = {
        q: [_draw_jump(q, c, label_of, pools, start_of_end, params.n_split, rng) for c in range(params.n_split)]
        for q in Q
    }
    succ = [[sec_of_start[t] for t in jump[q]] for q in Q]
    sec_of_end = {q: i for i, q in enumerate(Q)}
    first, done = 0, 0
    while True:
        violation = _find_violation(lengths, succ, params.T, first)
        if violation is None:
            if first == 0:
                break
            # an edge redrawn after an earlier origin was scanned may affect it
            first = 0
            continue
        if done == repairs:
            break
        kind, secs, first = violation
        done += 1
        if kind == "loop":
            # redraw one edge of the offending cycle, keeping its register pool
            i = int(rng.integers(len(secs) - 1))
            q = Q[secs[i]]
            c = jump[q].index(starts[secs[i + 1]])
        else:
            q = Q[secs[int(rng.integers(2))]]
            other = Q[secs[0]] if q == Q[secs[1]] else Q[secs[1]]
            shared = [c for c, t in enumerate(jump[q]) if t in jump[other]]
            c = shared[int(rng.integers(len(shared)))]
        jump[q][c] = _draw_jump(q, c, label_of, pools, start_of_end, params.n_split, rng)
        succ[sec_of_end[q]][c] = sec_of_start[jump[q][c]]
    return Q, starts, pools, {q: tuple(v) for q, v in jump.items()}, violation


def build_topology(params: ModelParams, rng=None, max_attempts: int = 50) -> OrbitTopology:
    """Draw a complete topology, recall sets included.

    Within ``params.T`` steps no walk may revisit an orbital index, nor branch
    at two points sharing a jump target (their blank requirements would then
    fail).  Both are verified directly; an offending jump edge is redrawn
    from the same register pool, and after
    ``20 * Q_size`` repairs the whole layout is redrawn, up to
    ``max_attempts`` times.
    """
    params.validate()
    if rng is None:
        rng = np.random.default_rng(params.seed)

    for _ in range(max_attempts):
        Q, starts, pools, jump, violation = _layout(params, rng, 20 * params.Q_size)
        if violation is None:
            break
    else:
        kind, secs, _ = violation
        where = [starts[s] for s in secs]
        what = "cycle" if kind == "loop" else "target-sharing branch points after"
        raise TopologyError(
            f"no valid layout within T={params.T} after {max_attempts} layouts; "
            f"last {what} section starts {where}",
            cycle=where,
        )

    perm = rng.permutation(params.I) + 1
    w = params.w_red
    A_W = {k: tuple(sorted(int(i) for i in perm[(k - 1) * w : k * w])) for k in range(1, params.K + 1)}
    Q_set = set(Q)
    M = []
    for k in range(1, params.K + 1):
        if k not in Q_set:
            M.append(A_W[k][rng.integers(w)])
    k_in = int(starts[rng.integers(len(starts))])

    B = {}
    for q in Q:
        targets = set(jump[q])
        recs = set()
        for l in Q:
            if targets.intersection(jump[l]):
                recs.update(A_W[l])
        B[q] = tuple(sorted(recs))

    topo = OrbitTopology(
        params=params,
        Q=Q,
        sections=tuple(zip(starts, Q)),
        J=pools,
        A_W=A_W,
        M=tuple(sorted(M)),
        jump=jump,
        B=B,
        k_in=k_in,
    )
    return build_recall_sets(topo, params, rng)


def max_backward_depth(params: ModelParams) -> int:
    return math.ceil(params.T * params.Q_size / params.K)


def backward_tree(topology: OrbitTopology, m: int) -> set:
    """Sections that may have led to the writing of trigger ``m``.

    Returns ``(section_id, depth)`` pairs.  Depth 0 is the section holding the
    index that writes ``m``; depth ``n+1`` holds every section whose end jumps
    to the start of a depth-``n`` section.
    """
    if m not in topology.M_set:
        raise DomainError(f"record {m} is not a trigger record")
    s0 = topology.section_of(topology.record_owner[m])
    pairs = {(s0, 0)}
    frontier = {s0}
    for depth in range(1, max_backward_depth(topology.params) + 1):
        frontier = {p for s in frontier for p in topology.predecessors[s]}
        if not frontier:
            break
        pairs.update((s, depth) for s in frontier)
    return pairs


def _section_records(topology, first, last):
    return [i for k in range(first, last + 1) for i in topology.A_W[k]]


def build_recall_sets(topology: OrbitTopology, params: ModelParams, rng) -> OrbitTopology:
    """Draw ``L(m)`` for every trigger and fill its recall set ``A_R(m)``.

    Each backward-tree section contributes ``recalls_per_section(L(m))``
    records other than ``m``; a section with fewer candidates gives all of
    them and bumps ``clamps``.
    """
    per_index = [np.array(_section_records(topology, start, end), dtype=np.int64) for start, end in topology.sections]
    A_R, L = {}, {}
    clamps = 0
    for m in topology.M:
        L[m] = sample_pareto(params.alpha, params.L0, params.I, rng)
        per_section = recalls_per_section(L[m], params)
        c0 = topology.record_owner[m]
        chosen = []
        for sid, depth in sorted(backward_tree(topology, m), key=lambda p: (p[1], p[0])):
            records = per_index[sid]
            if depth == 0:
                start = topology.sections[sid][0]
                records = np.array(_section_records(topology, start, c0), dtype=np.int64)
            pool = records[records != m]
            if per_section >= pool.size:
                clamps += per_section > pool.size
                chosen.append(pool)
            else:
                chosen.append(pool[rng.permutation(pool.size)[:per_section]])
        A_R[m] = tuple(int(i) for i in np.unique(np.concatenate(chosen)))
    return dataclasses.replace(topology, A_R=A_R, L=L, clamps=clamps)
