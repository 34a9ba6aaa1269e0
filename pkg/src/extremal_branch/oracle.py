"""Exact state-vector evolution at micro scale.

The Hilbert space is the orbital factor (dimension ``K``) tensored with one
``N x 2`` factor per modelled record: an age register and a two-level
read-out ("spin").  Basis vectors are addressed by a mixed-radix integer and
states are stored sparsely as sorted ``(index, amplitude)`` arrays.  The
three step factors act as generalized permutations with fan-out at most
``max(n_split, 2)``, so they are applied entry-wise and never materialized.

Only records that the evolution from the initial state can write are
modelled: every other record stays blank for the whole run, is left alone by
all three factors, and factors out of the state exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DomainError, ResourceLimitError
from .evolution import Superposition, evolve
from .topology import OrbitTopology

__all__ = [
    "BasisCodec",
    "StateVector",
    "Oracle",
    "compare_to_symbolic",
    "DEFAULT_DIM_CAP",
    "DEFAULT_ANGLE",
]

DEFAULT_DIM_CAP = 10**5
DEFAULT_ANGLE = 2 * math.pi / 5


class BasisCodec:
    """Bijection between ``(k, ages, spins)`` and ``[0, K * (2N)**n)``.

    The orbital index is the most significant digit; record ``i`` contributes
    the base-``2N`` digit ``2 * age + spin``.
    """

    def __init__(self, K: int, N: int, n_records: int):
        self.K, self.N, self.n = K, N, n_records
        self.radix = 2 * N
        self.weights = self.radix ** np.arange(n_records - 1, -1, -1, dtype=np.int64)
        self.block = self.radix**n_records
        self.dim = K * self.block

    def encode(self, k, ages, spins):
        k = np.asarray(k, dtype=np.int64)
        digits = 2 * np.asarray(ages, dtype=np.int64) + np.asarray(spins, dtype=np.int64)
        return (k - 1) * self.block + digits @ self.weights

    def decode(self, index):
        index = np.asarray(index, dtype=np.int64)
        k = index // self.block + 1
        rest = index % self.block
        digits = (rest[..., None] // self.weights) % self.radix
        return k, digits // 2, digits % 2


@dataclass
class StateVector:
    """Sparse state: strictly increasing ``index`` with matching ``amp``."""

    index: np.ndarray
    amp: np.ndarray
    dim: int

    @classmethod
    def from_entries(cls, index, amp, dim) -> "StateVector":
        index = np.asarray(index, dtype=np.int64)
        amp = np.asarray(amp, dtype=np.complex128)
        if index.size and (index.min() < 0 or index.max() >= dim):
            raise DomainError("basis index out of range")
        uniq, inverse = np.unique(index, return_inverse=True)
        total = np.zeros(uniq.size, dtype=np.complex128)
        np.add.at(total, inverse, amp)
        return cls(uniq, total, dim)

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.amp) ** 2)))

    def vdot(self, other: "StateVector") -> complex:
        common, ia, ib = np.intersect1d(self.index, other.index, assume_unique=True, return_indices=True)
        return complex(np.sum(np.conj(self.amp[ia]) * other.amp[ib]))

    def max_abs_diff(self, other: "StateVector") -> float:
        union = np.union1d(self.index, other.index)
        a = np.zeros(union.size, dtype=np.complex128)
        b = np.zeros(union.size, dtype=np.complex128)
        a[np.searchsorted(union, self.index)] = self.amp
        b[np.searchsorted(union, other.index)] = other.amp
        return float(np.max(np.abs(a - b), initial=0.0))


def _reachable(topology: OrbitTopology, T: int) -> set:
    """Orbital indices occupied at times ``0..T-1`` by some branch."""
    seen, frontier = set(), {topology.k_in}
    for _ in range(T):
        seen |= frontier
        frontier = {s for k in frontier for s in topology.successors(k)}
    return seen


@dataclass
class Oracle:
    """Explicit step operators on the modelled tensor-product space.

    ``indices`` selects the orbital indices whose records are modelled; by
    default those visited before time ``T``.  Rotations of read-out factors
    use one fixed real rotation by ``angle``.
    """

    topology: OrbitTopology
    T: int
    cap: int = DEFAULT_DIM_CAP
    angle: float = DEFAULT_ANGLE
    indices: object = None
    records: tuple = field(init=False)
    codec: BasisCodec = field(init=False)

    def __post_init__(self):
        topo, params = self.topology, self.topology.params
        if self.indices is None:
            self.indices = _reachable(topo, self.T)
        self.indices = tuple(sorted(self.indices))
        self.records = tuple(sorted(r for k in self.indices for r in topo.A_W[k]))
        n_rec = len(self.records)
        dim = params.K * (2 * params.N) ** n_rec
        if dim > self.cap:
            raise ResourceLimitError(
                f"state space needs dimension {dim} ({n_rec} records), cap is {self.cap}",
                required=dim,
                limit=self.cap,
            )
        self.codec = BasisCodec(params.K, params.N, n_rec)
        pos = {r: i for i, r in enumerate(self.records)}
        self._pos = pos

        K, n = params.K, params.n_split
        self._covered = np.zeros(K + 1, dtype=bool)
        self._blank = np.zeros((K + 1, n_rec), dtype=bool)
        self._write = np.zeros((K + 1, n_rec), dtype=np.int64)
        self._branch = np.zeros(K + 1, dtype=bool)
        self._targets = np.zeros((K + 1, n), dtype=np.int64)
        for k in range(1, K + 1):
            self._covered[k] = all(r in pos for r in topo.A_W[k])
            required = topo.B[k] if topo.is_branch(k) else topo.A_W[k]
            for r in required:
                if r in pos:
                    self._blank[k, pos[r]] = True
            for r in topo.A_W[k]:
                if r in pos:
                    self._write[k, pos[r]] = 1
            if topo.is_branch(k):
                self._branch[k] = True
                self._targets[k] = topo.jump[k]
            else:
                self._targets[k] = k + 1
        self._recall = [
            (pos[m], [pos[r] for r in topo.A_R[m] if r in pos]) for m in topo.M if m in pos
        ]
        c, s = math.cos(self.angle), math.sin(self.angle)
        self.u = np.array([[c, -s], [s, c]])

    @property
    def dim(self) -> int:
        return self.codec.dim

    def basis(self, k, ages=None, spins=None) -> StateVector:
        n = self.codec.n
        ages = np.zeros(n, dtype=np.int64) if ages is None else ages
        spins = np.zeros(n, dtype=np.int64) if spins is None else spins
        return StateVector(np.array([self.codec.encode(k, ages, spins)]), np.array([1.0 + 0j]), self.dim)

    def initial_state(self) -> StateVector:
        return self.basis(self.topology.k_in)

    # step factors ----------------------------------------------------------

    def apply_UA(self, state: StateVector) -> StateVector:
        k, ages, spins = self.codec.decode(state.index)
        N = self.topology.params.N
        aged = np.where(ages == 0, 0, np.where(ages == N - 1, 1, ages + 1))
        return StateVector.from_entries(self.codec.encode(k, aged, spins), state.amp, self.dim)

    def in_domain(self, index) -> np.ndarray:
        k, ages, _ = self.codec.decode(index)
        bad_blank = np.any(self._blank[k] & (ages != 0), axis=-1)
        return self._covered[k] & ~bad_blank

    def apply_UO(self, state: StateVector) -> StateVector:
        k, ages, spins = self.codec.decode(state.index)
        ok = self.in_domain(state.index)
        if not np.all(ok):
            bad = int(np.flatnonzero(~ok)[0])
            raise DomainError(
                f"outside constructed domain: k={int(k[bad])}, ages={ages[bad].tolist()}"
            )
        N, n = self.topology.params.N, self.topology.params.n_split
        written = (ages + self._write[k]) % N
        branch = self._branch[k]
        out_idx = [self.codec.encode(k[~branch] + 1, written[~branch], spins[~branch])]
        out_amp = [state.amp[~branch]]
        scale = 1.0 / math.sqrt(n)
        for c in range(n):
            targets = self._targets[k[branch], c]
            out_idx.append(self.codec.encode(targets, written[branch], spins[branch]))
            out_amp.append(state.amp[branch] * scale)
        return StateVector.from_entries(np.concatenate(out_idx), np.concatenate(out_amp), self.dim)

    def apply_UC(self, state: StateVector) -> StateVector:
        weights = self.codec.weights
        for pm, recall in self._recall:
            for pl in recall:
                _, ages, spins = self.codec.decode(state.index)
                hit = (ages[:, pm] > 0) & (ages[:, pl] > 0)
                if not hit.any():
                    continue
                s = spins[hit, pl]
                base = state.index[hit] - s * weights[pl]
                amp = state.amp[hit]
                idx = np.concatenate([state.index[~hit], base, base + weights[pl]])
                val = np.concatenate([state.amp[~hit], self.u[0, s] * amp, self.u[1, s] * amp])
                state = StateVector.from_entries(idx, val, self.dim)
        return state

    def step(self, state: StateVector) -> StateVector:
        return self.apply_UC(self.apply_UO(self.apply_UA(state)))

    def run(self, steps: int) -> StateVector:
        state = self.initial_state()
        for _ in range(steps):
            state = self.step(state)
        return state

    # checks ---------------------------------------------------------------

    def sample_domain_basis(self, count: int, rng) -> np.ndarray:
        """Up to ``count`` distinct basis indices inside the orbital domain."""
        ks = np.flatnonzero(self._covered[1:]) + 1
        N, n_rec = self.topology.params.N, self.codec.n
        found = {}
        for _ in range(50 * count):
            if len(found) == count:
                break
            k = int(ks[rng.integers(ks.size)])
            ages = rng.integers(0, N, size=n_rec)
            ages[self._blank[k]] = 0
            spins = rng.integers(0, 2, size=n_rec)
            idx = int(self.codec.encode(k, ages, spins))
            found.setdefault(idx, None)
        return np.array(sorted(found), dtype=np.int64)

    def gram_error(self, count: int = 200, rng=None) -> float:
        """``max |G - 1|`` for the Gram matrix of ``U_O`` images of domain basis vectors."""
        if rng is None:
            rng = np.random.default_rng(self.topology.params.seed)
        originals = self.sample_domain_basis(count, rng)
        rows, cols, vals = [], [], []
        for j, idx in enumerate(originals):
            image = self.apply_UO(StateVector(np.array([idx]), np.array([1.0 + 0j]), self.dim))
            rows.append(image.index)
            cols.append(np.full(image.index.size, j))
            vals.append(image.amp)
        V = sp.csc_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(self.dim, originals.size),
        )
        G = (V.conj().T @ V).toarray()
        return float(np.max(np.abs(G - np.eye(originals.size)), initial=0.0))

    def predicted_state(self, sup: Superposition) -> StateVector:
        """State vector implied by a symbolic superposition."""
        idx, amp = [], []
        n_rec = self.codec.n
        for b in sup.branches:
            ages = np.zeros(n_rec, dtype=np.int64)
            for r, a in b.ages.items():
                if r not in self._pos:
                    raise DomainError(f"symbolic branch wrote unmodelled record {r}")
                ages[self._pos[r]] = a
            entries = [(np.zeros(n_rec, dtype=np.int64), b.amplitude(sup.n_split))]
            for r, count in sorted(b.rotated.items()):
                pr = self._pos[r]
                spin_amp = (math.cos(count * self.angle), math.sin(count * self.angle))
                grown = []
                for spins, a in entries:
                    for bit in (0, 1):
                        s = spins.copy()
                        s[pr] = bit
                        grown.append((s, a * spin_amp[bit]))
                entries = grown
            for spins, a in entries:
                idx.append(self.codec.encode(b.k, ages, spins))
                amp.append(a)
        return StateVector.from_entries(np.array(idx, dtype=np.int64), np.array(amp), self.dim)

    def branch_patterns(self, state: StateVector, tol: float = 1e-12) -> set:
        """``(k, ages)`` patterns carrying weight above ``tol`` in a state."""
        k, ages, spins = self.codec.decode(state.index)
        stripped = state.index - spins @ self.codec.weights
        weight = {}
        for key, a in zip(stripped.tolist(), np.abs(state.amp) ** 2):
            weight[key] = weight.get(key, 0.0) + a
        return {key for key, w in weight.items() if w > tol}


def compare_to_symbolic(topology: OrbitTopology, T: int, cap: int = DEFAULT_DIM_CAP, angle: float = DEFAULT_ANGLE) -> dict:
    """Run ``T`` exact steps and compare with the symbolic superposition."""
    oracle = Oracle(topology, T, cap=cap, angle=angle)
    state = oracle.run(T)
    sup = evolve(topology, T)
    patterns_oracle = oracle.branch_patterns(state)
    try:
        predicted = oracle.predicted_state(sup)
    except DomainError:
        # the symbolic branches leave the modelled space; nothing to compare
        max_err, match = math.inf, False
    else:
        max_err = state.max_abs_diff(predicted)
        patterns_symbolic = oracle.branch_patterns(predicted)
        match = patterns_oracle == patterns_symbolic and len(patterns_symbolic) == len(sup)
    return {
        "dim": oracle.dim,
        "steps": T,
        "records": len(oracle.records),
        "max_amp_err": max_err,
        "gram_err": oracle.gram_error(),
        "structure_match": match,
        "branches_oracle": len(patterns_oracle),
        "branches_symbolic": len(sup),
        "norm": state.norm(),
        "angle": angle,
    }
