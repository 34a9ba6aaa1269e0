"""Symbolic evolution of the initial product state.

The superposition is kept as a list of product branches.  Each branch knows
its orbital index, the age of every written record, how often each record's
read-out factor has been rotated, and the branching addresses it took.  The
amplitude of a branch is ``n_split ** (-p / 2)`` and is never stored.

Two independent routes build the time-``t`` superposition: :func:`evolve`
applies the three step factors one step at a time, while :func:`closed_form`
assembles every branch directly from the branching-address recursion.
"""

from __future__ import annotations

import dataclasses
from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .errors import DomainError, ModelConsistencyError, ResourceLimitError
from .topology import OrbitTopology

__all__ = [
    "BranchState",
    "Superposition",
    "RecallCount",
    "initial_state",
    "step_age",
    "step_orbital",
    "step_conscious",
    "evolve",
    "closed_form",
    "branch_recall_count",
    "count_branches",
    "same_branches",
    "superposition_rows",
    "DEFAULT_BRANCH_LIMIT",
]

DEFAULT_BRANCH_LIMIT = 2**20


@dataclass
class BranchState:
    """One product-state branch.

    ``ages`` holds written records only; a missing record is blank.
    ``path`` is the sequence of branching addresses starting with ``k_in``.
    """

    k: int
    ages: dict = field(default_factory=dict)
    rotated: dict = field(default_factory=dict)
    p: int = 0
    path: tuple = ()
    wraps: int = 0

    def amplitude(self, n_split: int) -> float:
        return n_split ** (-self.p / 2)

    @property
    def written(self) -> frozenset:
        return frozenset(self.ages)

    def key(self):
        """Comparable structural identity (amplitude follows from ``p``)."""
        return (self.path, self.k, self.p, tuple(sorted(self.ages.items())), tuple(sorted(self.rotated.items())))


@dataclass
class Superposition:
    t: int
    branches: list
    n_split: int = 2
    counts: tuple = (1,)

    def norm(self) -> Fraction:
        """Exact squared norm, ``sum_b n_split ** -p``."""
        return sum((Fraction(1, self.n_split**b.p) for b in self.branches), Fraction(0))

    def __len__(self):
        return len(self.branches)

    def indistinguishable_pairs(self) -> list:
        """Branch pairs whose written/blank record pattern is identical.

        Siblings created in the last step legitimately appear here: they have
        written the same records and differ only in orbital index until their
        next step writes distinct address sets.
        """
        written = [b.written for b in self.branches]
        pairs = []
        for i in range(len(written)):
            for j in range(i + 1, len(written)):
                if written[i] == written[j]:
                    pairs.append((i, j))
        return pairs

    def distinguishable(self) -> bool:
        for i, j in self.indistinguishable_pairs():
            a, b = self.branches[i], self.branches[j]
            fresh = all(x.p >= 1 and x.k == x.path[-1] for x in (a, b))
            if a.k == b.k or not fresh:
                return False
        return True


@dataclass(frozen=True)
class RecallCount:
    R: dict
    log2_dC: int


def initial_state(topology: OrbitTopology) -> Superposition:
    k_in = topology.k_in
    return Superposition(t=0, branches=[BranchState(k=k_in, path=(k_in,))], n_split=topology.params.n_split)


def step_age(branch: BranchState, N: int) -> BranchState:
    """Advance every written record's age; blank records stay blank."""
    ages = {}
    wraps = branch.wraps
    for rec, age in branch.ages.items():
        if age == N - 1:
            ages[rec] = 1
            wraps += 1
        else:
            ages[rec] = age + 1
    return dataclasses.replace(branch, ages=ages, rotated=dict(branch.rotated), wraps=wraps)


def step_orbital(branch: BranchState, topology: OrbitTopology) -> list:
    """Quasiclassical move or equal-amplitude split, writing ``A_W(k)``."""
    k = branch.k
    in_q = topology.is_branch(k)
    required = topology.B[k] if in_q else topology.A_W[k]
    for rec in required:
        if rec in branch.ages:
            raise ModelConsistencyError(
                f"record {rec} must be blank before the orbital step at k={k}", k=k, record=rec
            )
    ages = dict(branch.ages)
    for rec in topology.A_W[k]:
        ages[rec] = 1
    if not in_q:
        return [dataclasses.replace(branch, k=k + 1, ages=ages, rotated=dict(branch.rotated))]
    return [
        dataclasses.replace(
            branch,
            k=target,
            ages=dict(ages),
            rotated=dict(branch.rotated),
            p=branch.p + 1,
            path=branch.path + (target,),
        )
        for target in topology.jump[k]
    ]


def step_conscious(branch: BranchState, topology: OrbitTopology) -> BranchState:
    """Rotate read-out factors of written recall records for each written trigger."""
    rotated = dict(branch.rotated)
    ages = branch.ages
    for m in sorted(r for r in ages if r in topology.M_set):
        for rec in topology.A_R[m]:
            if rec in ages:
                rotated[rec] = rotated.get(rec, 0) + 1
    return dataclasses.replace(branch, rotated=rotated)


def count_branches(topology: OrbitTopology, T: int) -> int:
    """Exact leaf count after ``T`` steps, from orbital walks alone."""
    counts = Counter({topology.k_in: 1})
    for _ in range(T):
        nxt = Counter()
        for k, c in counts.items():
            for s in topology.successors(k):
                nxt[s] += c
        counts = nxt
    return sum(counts.values())


def _check_horizon(topology, T):
    if T < 0:
        raise DomainError(f"T={T} is negative")
    if T >= topology.params.N:
        raise DomainError(f"T={T} must be below N={topology.params.N}")


def _check_norm(branches, n_split):
    top = max(b.p for b in branches)
    total = sum(n_split ** (top - b.p) for b in branches)
    if total != n_split**top:
        raise ModelConsistencyError(f"norm {Fraction(total, n_split**top)} != 1")


def evolve(topology: OrbitTopology, T: int, branch_limit: int = DEFAULT_BRANCH_LIMIT) -> Superposition:
    """Apply ``T`` full steps (age, orbital, conscious) to the initial state."""
    _check_horizon(topology, T)
    leaves = count_branches(topology, T)
    if leaves > branch_limit:
        raise ResourceLimitError(
            f"evolution to T={T} needs {leaves} branches, limit is {branch_limit}",
            required=leaves,
            limit=branch_limit,
        )
    N, n_split = topology.params.N, topology.params.n_split
    sup = initial_state(topology)
    branches = sup.branches
    counts = [1]
    for _ in range(T):
        nxt = []
        for b in branches:
            for child in step_orbital(step_age(b, N), topology):
                nxt.append(step_conscious(child, topology))
        nxt.sort(key=lambda b: b.path)
        _check_norm(nxt, n_split)
        branches = nxt
        counts.append(len(branches))
    return Superposition(t=T, branches=branches, n_split=n_split, counts=tuple(counts))


def _first_branch_point(Q, b):
    # a section start b is itself in Q when the section has length one
    return Q[bisect_left(Q, b)]


def _assemble(topology, path, times, T):
    Q, A_W = topology.Q, topology.A_W
    p = len(path) - 1
    write_step = {}
    for b, tn in zip(path, times):
        d = _first_branch_point(Q, b) - b + 1
        for l in range(d):
            if T - tn - l <= 0:
                break
            for rec in A_W[b + l]:
                write_step[rec] = tn + l + 1
    ages = {rec: T - w + 1 for rec, w in write_step.items()}
    rotated = Counter()
    for m in sorted(write_step.keys() & topology.M_set):
        for rec in topology.A_R[m]:
            if rec in write_step:
                rotated[rec] += T - max(write_step[m], write_step[rec]) + 1
    return BranchState(k=path[p] + T - times[p], ages=ages, rotated=dict(rotated), p=p, path=tuple(path))


def closed_form(topology: OrbitTopology, T: int) -> Superposition:
    """Build the time-``T`` superposition straight from the address recursion.

    Record ages follow from the write time of each index along the branch, and
    rotation counts from the number of steps in which both a trigger and a
    recall record were already written.
    """
    _check_horizon(topology, T)
    Q = topology.Q
    out = []
    stack = [((topology.k_in,), (0,))]
    while stack:
        path, times = stack.pop()
        b, tn = path[-1], times[-1]
        t_next = tn + _first_branch_point(Q, b) - b + 1
        if t_next > T:
            out.append(_assemble(topology, path, times, T))
            continue
        q = _first_branch_point(Q, b)
        for target in topology.jump[q]:
            stack.append((path + (target,), times + (t_next,)))
    out.sort(key=lambda b: b.path)
    return Superposition(t=T, branches=out, n_split=topology.params.n_split)


def branch_recall_count(branch: BranchState, topology: OrbitTopology) -> RecallCount:
    """Records currently recalled by each written trigger of a branch."""
    ages = branch.ages
    R = {}
    for m in sorted(r for r in ages if r in topology.M_set):
        R[m] = sum(1 for rec in topology.A_R[m] if rec in ages)
    return RecallCount(R=R, log2_dC=max(R.values(), default=0))


def same_branches(a: Iterable[BranchState], b: Iterable[BranchState]) -> bool:
    return [x.key() for x in a] == [y.key() for y in b]


def superposition_rows(sup: Superposition, topology: OrbitTopology, verbose: bool = False) -> list:
    """Rows of the branch dump: ``path,p,k,t,n_written,R_max,log2_dC``."""
    rows = []
    for b in sup.branches:
        rc = branch_recall_count(b, topology)
        row = {
            "path": "-".join(str(x) for x in b.path),
            "p": b.p,
            "k": b.k,
            "t": sup.t,
            "n_written": len(b.ages),
            "R_max": rc.log2_dC,
            "log2_dC": rc.log2_dC,
        }
        if verbose:
            row["ages"] = [[r, a] for r, a in sorted(b.ages.items())]
            row["rotated"] = [[r, c] for r, c in sorted(b.rotated.items())]
        rows.append(row)
    return rows
