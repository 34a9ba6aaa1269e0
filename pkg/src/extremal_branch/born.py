"""Equal-modulus branch configurations for a two-outcome superposition.

A state ``a|A> + b|B>`` is spread over ``n`` branches, ``m`` of which carry
outcome ``A``.  The phase-volume measure of a configuration of moduli
``|c_1| .. |c_n|`` is proportional to their product, maximized subject to

    sum_{k <= m} |c_k|**2 = |a|**2,    sum_{k > m} |c_k|**2 = 1 - |a|**2.

For fixed ``m`` the maximum puts equal moduli within each group, giving the
objective ``(a/m)**(m/2) * ((1-a)/(n-m))**((n-m)/2)`` with ``a = |a|**2``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import DomainError
from .topology import ModelParams

__all__ = ["SplitSpec", "objective", "optimal_split", "brute_force_split", "nway_config"]

_INTEGRAL_TOL = 1e-9


@dataclass(frozen=True)
class SplitSpec:
    a_sq: float
    n: int
    m: int
    moduli: tuple
    objective: float
    exact: bool = True
    candidates: tuple = field(default=())

    def check(self, tol: float = 1e-12) -> None:
        sq = np.square(self.moduli)
        if not 0 <= self.m <= self.n or len(self.moduli) != self.n:
            raise DomainError(f"m={self.m} and {len(self.moduli)} moduli do not fit n={self.n}")
        if abs(sq.sum() - 1.0) > tol:
            raise DomainError(f"squared moduli sum to {sq.sum()!r}")
        if abs(sq[: self.m].sum() - self.a_sq) > tol:
            raise DomainError(f"outcome-A weights sum to {sq[: self.m].sum()!r}, expected {self.a_sq!r}")

    def to_dict(self) -> dict:
        return {
            "a_sq": self.a_sq,
            "n": self.n,
            "m": self.m,
            "moduli": list(self.moduli),
            "objective": self.objective,
            "exact": self.exact,
            "candidates": [{"m": m, "objective": f} for m, f in self.candidates],
        }


def _check_args(a_sq, n):
    if not 0.0 < a_sq < 1.0:
        raise DomainError(f"a_sq={a_sq} must lie strictly between 0 and 1")
    if int(n) != n or n < 2:
        raise DomainError(f"n={n} must be an integer of at least 2")


def objective(a_sq: float, n: int, m: int) -> float:
    """Product of moduli for ``m`` equal A-branches and ``n - m`` equal B-branches."""
    if not 1 <= m <= n - 1:
        return 0.0
    return (a_sq / m) ** (m / 2) * ((1 - a_sq) / (n - m)) ** ((n - m) / 2)


def _equal_moduli(a_sq, n, m):
    return tuple([math.sqrt(a_sq / m)] * m + [math.sqrt((1 - a_sq) / (n - m))] * (n - m))


def optimal_split(a_sq: float, n: int) -> SplitSpec:
    """Maximizer of the phase-volume measure over integer ``m``.

    When ``a_sq * n`` is an integer the optimum is ``m = a_sq * n`` with every
    modulus ``1/sqrt(n)``.  Otherwise the two neighbouring integers are
    evaluated and the better one returned with ``exact=False``; both appear in
    ``candidates`` so that ties stay visible.
    """
    _check_args(a_sq, n)
    target = a_sq * n
    nearest = round(target)
    if abs(target - nearest) < _INTEGRAL_TOL and 1 <= nearest <= n - 1:
        m = int(nearest)
        return SplitSpec(
            a_sq=a_sq, n=n, m=m, moduli=tuple([1 / math.sqrt(n)] * n), objective=float(n) ** (-n / 2)
        )
    lo, hi = max(1, math.floor(target)), min(n - 1, math.ceil(target))
    candidates = tuple((m, objective(a_sq, n, m)) for m in sorted({lo, hi}))
    m = max(candidates, key=lambda c: c[1])[0]
    return SplitSpec(
        a_sq=a_sq,
        n=n,
        m=m,
        moduli=_equal_moduli(a_sq, n, m),
        objective=objective(a_sq, n, m),
        exact=False,
        candidates=candidates,
    )


def _best_composition(parts: int, grid: int):
    """Split ``grid`` units into ``parts`` positive integers maximizing the sum of logs."""
    logs = np.full(grid + 1, -np.inf)
    logs[1:] = np.log(np.arange(1, grid + 1, dtype=float))
    best = logs.copy()
    choice = [np.arange(grid + 1)]
    for _ in range(parts - 1):
        nxt = np.full(grid + 1, -np.inf)
        arg = np.zeros(grid + 1, dtype=int)
        for s in range(grid + 1):
            vals = best[: s + 1][::-1] + logs[: s + 1]
            i = int(np.argmax(vals))
            nxt[s], arg[s] = vals[i], i
        best = nxt
        choice.append(arg)
    out, s = [], grid
    for arg in reversed(choice[1:]):
        out.append(int(arg[s]))
        s -= out[-1]
    out.append(s)
    return float(best[grid]), out


def brute_force_split(a_sq: float, n: int, grid: int = 200) -> SplitSpec:
    """Direct search over squared moduli on a grid, for every integer ``m``.

    Within each outcome group the squared moduli are multiples of
    ``group weight / grid``, so the result resolves squared moduli to within
    ``1/grid``.  No within-group symmetry is assumed.
    """
    _check_args(a_sq, n)
    if grid < 200:
        raise DomainError(f"grid={grid} must be at least 200")
    best = None
    for m in range(1, n):
        log_a, units_a = _best_composition(m, grid)
        log_b, units_b = _best_composition(n - m, grid)
        sq = [a_sq * u / grid for u in units_a] + [(1 - a_sq) * u / grid for u in units_b]
        value = 0.5 * float(np.sum(np.log(sq)))
        if best is None or value > best[0]:
            best = (value, m, sq)
    value, m, sq = best
    return SplitSpec(a_sq=a_sq, n=n, m=m, moduli=tuple(math.sqrt(x) for x in sq), objective=math.exp(value))


def nway_config(params: ModelParams, a_sq_list) -> ModelParams:
    """Parameters whose branchings split ``n`` ways, ``n`` being the common denominator of the weights.

    Each weight ``a`` then corresponds to ``a * n`` of the equal-amplitude
    branches; which records mark which outcome stays implicit.
    """
    weights = [Fraction(a).limit_denominator(10**6) for a in a_sq_list]
    if not weights or any(not 0 < w < 1 for w in weights):
        raise DomainError("weights must lie strictly between 0 and 1")
    n = math.lcm(*(w.denominator for w in weights))
    return dataclasses.replace(params, n_split=n).validate()
