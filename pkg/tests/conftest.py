import dataclasses

import numpy as np
import pytest

from extremal_branch.topology import ModelParams, build_topology

MICRO = ModelParams(
    K=6, Q_size=3, N=3, I=6, T=2, alpha=1.5, L0=1.0, d_min=1, n_reg=1, n_split=2, seed=0, w_red=1
)
SMALL = ModelParams(
    K=40, Q_size=8, N=10, I=80, T=8, alpha=1.5, L0=2.0, d_min=2, n_reg=2, n_split=2, seed=24, w_red=2
)
MEDIUM = ModelParams(
    K=400, Q_size=40, N=30, I=800, T=28, alpha=1.5, L0=3.0, d_min=6, n_reg=2, n_split=2, seed=0, w_red=2
)
WIDE = ModelParams(
    K=1200, Q_size=240, N=26, I=2400, T=24, alpha=1.5, L0=3.0, d_min=2, n_reg=3, n_split=2, seed=0, w_red=2
)


def with_params(base, **changes):
    changes.setdefault("I", changes.get("K", base.K) * changes.get("w_red", base.w_red))
    return dataclasses.replace(base, **changes)


@pytest.fixture
def micro_topology():
    return build_topology(MICRO)


@pytest.fixture
def small_topology():
    return build_topology(SMALL)


@pytest.fixture(scope="session")
def medium_topologies():
    return [build_topology(with_params(MEDIUM, seed=s)) for s in range(20)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def enumerate_walk_defects(topology, horizon):
    """Brute-force oracle: follow every index-level walk from every section start.

    Reports orbital revisits and walks that branch at two points sharing a
    jump target.
    """
    jump = topology.jump
    defects = []
    for s0 in topology.starts:
        stack = [(s0, 0, (s0,), ())]
        while stack:
            k, t, visited, branched = stack.pop()
            if t == horizon:
                continue
            if topology.is_branch(k):
                for q in branched:
                    if set(jump[q]) & set(jump[k]):
                        defects.append(("blank", s0, q, k))
                branched = branched + (k,)
            for nxt in topology.successors(k):
                if nxt in visited:
                    defects.append(("loop", s0, nxt))
                    continue
                stack.append((nxt, t + 1, visited + (nxt,), branched))
    return defects


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
