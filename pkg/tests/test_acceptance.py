"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import math
import time
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.stats import ks_2samp

from conftest import ACCEPTANCE_LINES, MEDIUM, MICRO, SMALL, WIDE, with_params
from extremal_branch.born import brute_force_split, optimal_split
from extremal_branch.cli import main
from extremal_branch.evolution import closed_form, evolve, same_branches
from extremal_branch.oracle import Oracle, StateVector, compare_to_symbolic
from extremal_branch.statistics import (
    GWParams,
    compute_R0,
    excess_distribution,
    ks_ccdf_distance,
    sample_R,
    simulate_gw_many,
)
from extremal_branch.topology import build_topology, pareto_ccdf, sample_pareto

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def report(number, ok, detail):
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_oracle_equivalence():
    start = time.perf_counter()
    configs = [with_params(MICRO, seed=s) for s in range(4)]
    configs += [with_params(MICRO, K=8, Q_size=4, seed=s) for s in range(4)]
    configs += [with_params(MICRO, K=8, Q_size=4, d_min=2, seed=s) for s in range(4)]
    worst, matched, branched = 0.0, 0, 0
    for params in configs:
        assert params.K <= 8 and params.N == 3 and params.T <= 6
        report_ = compare_to_symbolic(build_topology(params), params.T)
        assert report_["records"] <= 4 and report_["dim"] <= 10**5
        worst = max(worst, report_["max_amp_err"])
        matched += report_["structure_match"]
        branched += report_["branches_symbolic"] > 1
    elapsed = time.perf_counter() - start
    ok = len(configs) >= 10 and worst < 1e-12 and matched == len(configs) and elapsed < 60 and branched > 0
    report(1, ok, f"{len(configs)} configs, max amp err {worst:.1e}, {matched} structural matches, {elapsed:.1f}s")


def random_state(oracle, rng, in_domain):
    if in_domain:
        index = oracle.sample_domain_basis(8, rng)
    else:
        index = np.unique(rng.integers(0, oracle.dim, size=8))
    amp = rng.normal(size=index.size) + 1j * rng.normal(size=index.size)
    return StateVector(index, amp / np.linalg.norm(amp), oracle.dim)


def test_criterion_2_unitarity():
    params = with_params(MICRO, K=4, Q_size=2, d_min=2, T=1, w_red=1)
    oracle = Oracle(build_topology(params), params.T, indices=range(1, params.K + 1))
    rng = np.random.default_rng(2024)
    worst = {"U_A": 0.0, "U_O": 0.0, "U_C": 0.0}
    for _ in range(1000):
        worst["U_A"] = max(worst["U_A"], abs(oracle.apply_UA(random_state(oracle, rng, False)).norm() - 1))
        worst["U_O"] = max(worst["U_O"], abs(oracle.apply_UO(random_state(oracle, rng, True)).norm() - 1))
        worst["U_C"] = max(worst["U_C"], abs(oracle.apply_UC(random_state(oracle, rng, False)).norm() - 1))
    gram = oracle.gram_error(200, np.random.default_rng(0))
    ok = max(worst.values()) < 1e-12 and gram < 1e-12
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(2, ok, f"norm drift {detail}; gram err {gram:.1e} (dim {oracle.dim})")


def test_criterion_3_dual_implementation(medium_topologies):
    # denser branch points push the deepest branches to four splits
    denser = [build_topology(with_params(MEDIUM, Q_size=50, seed=s)) for s in range(20)]
    mismatches, deepest = 0, 0
    for topo in medium_topologies + denser:
        for T in range(MEDIUM.T + 1):
            a, b = evolve(topo, T), closed_form(topo, T)
            mismatches += not same_branches(a.branches, b.branches)
        deepest = max(deepest, max(br.p for br in a.branches))
    total = len(medium_topologies) + len(denser)
    ok = total >= 20 and mismatches == 0 and deepest == 4
    report(3, ok, f"{total} topologies, every T, {mismatches} mismatches, up to {deepest} branchings")


def test_criterion_4_norm_partition():
    runs = [with_params(MICRO, seed=s) for s in range(10)]
    runs += [with_params(SMALL, seed=s) for s in range(10)]
    runs += [with_params(WIDE, seed=s) for s in range(3)]
    steps, bad_norm, bad_pairs, largest = 0, 0, 0, 0
    for params in runs:
        topo = build_topology(params)
        for t in range(params.T + 1):
            sup = evolve(topo, t, branch_limit=2**10)
            bad_norm += sup.norm() != Fraction(1)
            bad_pairs += not sup.distinguishable()
            largest = max(largest, len(sup))
            steps += 1
    ok = bad_norm == 0 and bad_pairs == 0
    report(4, ok, f"{len(runs)} runs, {steps} steps, norm failures {bad_norm}, "
           f"indistinguishable states {bad_pairs}, largest {largest} branches")


def test_criterion_5_galton_watson_means():
    start = time.perf_counter()
    worst, failures = 0.0, 0
    for sigma in (0.01, 0.02, 0.05):
        for T in (100, 200):
            params = GWParams(sigma=sigma, T=T, trials=10_000, seed=5)
            Z_T, _ = simulate_gw_many(params)
            se = Z_T.std(ddof=1) / math.sqrt(Z_T.size)
            z = abs(Z_T.mean() - (1 + sigma) ** T) / se
            worst = max(worst, z)
            failures += z >= 3
    elapsed = time.perf_counter() - start
    ok = failures == 0 and elapsed < 30
    report(5, ok, f"6 configs, worst deviation {worst:.2f} standard errors, {elapsed:.1f}s")


def test_criterion_6_heavy_tails():
    alpha, L0, cap = 1.5, 10.0, 1e6
    L = sample_pareto(alpha, L0, cap, np.random.default_rng(61), size=100_000)
    ks_L = ks_ccdf_distance(L, lambda x: pareto_ccdf(x, alpha, L0, cap), lower=L0)
    params = GWParams(sigma=0.02, T=100)
    R = sample_R(100_000, alpha, L0, params, np.random.default_rng(62))
    R0 = compute_R0(alpha, L0, params)
    ks_R = ks_ccdf_distance(R, lambda x: (R0 / x) ** alpha, lower=L0)
    ok = ks_L < 0.02 and ks_R < 0.02
    report(6, ok, f"KS(L) {ks_L:.4f}, KS(R >= L0) {ks_R:.4f} at 1e5 draws")


_EXCESS = {}


def excess(T):
    if T not in _EXCESS:
        _EXCESS[T] = excess_distribution(GWParams(sigma=0.02, T=T, trials=10_000, seed=0), 1.5, 10.0)
    return _EXCESS[T]


def test_criterion_7_spacing_independent_of_progeny():
    res = excess(200)
    lo, hi = np.quantile(res.Y, [0.25, 0.75])
    x = res.normalized_spacing
    low, high = x[res.Y <= lo], x[res.Y >= hi]
    stat = ks_2samp(low, high).statistic
    report(7, stat < 0.05, f"two-sample KS {stat:.4f} between Y quartiles ({low.size} vs {high.size} trials)")


def test_criterion_8_extremal_dominance():
    res = excess(200)
    median, q05 = np.median(res.log2E), np.quantile(res.log2E, 0.05)
    stat = ks_2samp(excess(150).rescaled, excess(250).rescaled).statistic
    ok = median > 0 and stat < 0.05
    report(8, ok, f"median log2E {median:.2f}, 5th percentile {q05:.2f}, collapse KS T=150 vs 250 {stat:.4f}")


def test_criterion_9_born_split():
    grid, worst, disagreements = 200, 0.0, 0
    for n in range(2, 7):
        for i in range(1, n):
            exact, found = optimal_split(i / n, n), brute_force_split(i / n, n, grid)
            gap = max(abs(x * x - y * y) for x, y in zip(found.moduli, exact.moduli))
            worst = max(worst, gap)
            disagreements += found.m != exact.m or gap > 1 / grid
    spec = optimal_split(0.25, 8)
    quarter = spec.m == 2 and all(abs(c - 1 / math.sqrt(8)) < 1e-15 for c in spec.moduli)
    ok = disagreements == 0 and quarter
    report(9, ok, f"n <= 6: {disagreements} disagreements, worst |c|^2 gap {worst:.4f}; "
           f"a^2=0.25, n=8 -> m={spec.m}, |c|={spec.moduli[0]:.6f}")


def pipeline(root, threads):
    root.mkdir()
    common = ["--threads", str(threads)]
    steps = [
        ["topology", str(CONFIGS / "small.toml"), "--out", str(root / "small.json")],
        ["topology", str(CONFIGS / "micro.toml"), "--out", str(root / "micro.json")],
        ["evolve", str(root / "small.json"), "--verbose", "--out", str(root / "branches.csv")],
        ["verify", str(root / "micro.json"), "--out", str(root / "verify.json")],
        ["stats", "--sigma", "0.05", "--T", "60", "--alpha", "1.5", "--L0", "10",
         "--trials", "2000", "--seed", "3", "--out", str(root / "stats.json")],
        ["born", "--a-sq", "0.25", "--n", "8", "--brute-force", "--out", str(root / "born.json")],
    ]
    for argv in steps:
        assert main(common + argv) == 0, argv
    return {p.name: p.read_bytes() for p in sorted(root.iterdir()) if not p.name.endswith(".manifest.json")}


def test_criterion_10_determinism(tmp_path):
    outputs = {t: pipeline(tmp_path / f"threads{t}", t) for t in (1, 2, 8)}
    outputs["repeat"] = pipeline(tmp_path / "repeat", 8)
    reference = outputs[1]
    differing = [name for key, files in outputs.items() for name in reference if files.get(name) != reference[name]]
    ok = len(reference) >= 8 and not differing and all(set(f) == set(reference) for f in outputs.values())
    report(10, ok, f"{len(reference)} stage outputs byte-identical at 1, 2, 8 threads and on rerun"
           if ok else f"differing outputs: {sorted(set(differing))}")
