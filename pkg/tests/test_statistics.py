import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from extremal_branch.errors import DomainError, ParameterError
from extremal_branch.evolution import evolve
from extremal_branch.statistics import (
    GWParams,
    compute_R0,
    excess_distribution,
    generation_of_trigger,
    generation_pmf,
    ks_ccdf_distance,
    sample_R,
    simulate_gw,
    simulate_gw_many,
    spacing_report,
    top_two,
    tree_vs_theory,
    trial_rng,
)
from extremal_branch.topology import sample_pareto

# sigma=0.02, T=100, alpha=1.5, L0=10
R0_REFERENCE = 6.868824455117676


def test_no_branching_gives_unit_generations():
    run = simulate_gw(GWParams(sigma=0.0, T=50), np.random.default_rng(0))
    assert run.Z.tolist() == [1] * 51
    assert run.Y == 50
    assert run.W_hat == 1.0


def test_generations_nondecreasing():
    params = GWParams(sigma=0.1, T=60)
    for i in range(200):
        run = simulate_gw(params, trial_rng(0, i))
        assert run.Z[0] == 1
        assert np.all(np.diff(run.Z) >= 0)
        assert run.Y == run.Z[1:].sum()


def test_mean_generation_size():
    params = GWParams(sigma=0.02, T=100, trials=10_000, seed=4)
    Z_T, _ = simulate_gw_many(params)
    target = params.mu**params.T
    assert target == pytest.approx(7.245, abs=5e-4)
    assert abs(Z_T.mean() - target) < 3 * Z_T.std(ddof=1) / math.sqrt(Z_T.size)


def test_normalized_means_settle():
    params = GWParams(sigma=0.05, T=80, trials=4000, seed=9)
    Z = np.array([simulate_gw(params, trial_rng(params.seed, i)).Z for i in range(params.trials)])
    ratio = Z.mean(axis=0) / params.mu ** np.arange(params.T + 1)
    se = Z.std(axis=0, ddof=1) / math.sqrt(params.trials) / params.mu ** np.arange(params.T + 1)
    assert np.all(np.abs(ratio - 1) < 4 * se + 1e-12)


def test_generalized_offspring_mean():
    params = GWParams(sigma=0.02, T=60, trials=10_000, seed=2, n_split=3)
    Z_T, _ = simulate_gw_many(params)
    target = (1 + 2 * 0.02) ** 60
    assert params.mu**params.T == pytest.approx(target)
    assert abs(Z_T.mean() - target) < 3 * Z_T.std(ddof=1) / math.sqrt(Z_T.size)
    assert np.all((Z_T - 1) % 2 == 0)


def test_gw_params_validation():
    with pytest.raises(ParameterError):
        GWParams(sigma=1.5, T=10).validate()
    with pytest.raises(ParameterError) as err:
        GWParams(sigma=0.1, T=10, trials=0).validate()
    assert err.value.field == "trials"


def test_pmf_normalized_and_truncated():
    pmf = generation_pmf(0.02, 100)
    assert pmf.size == 101
    assert math.isclose(pmf.sum(), 1.0, abs_tol=1e-15)
    assert np.all(np.diff(pmf) < 0)
    with pytest.raises(DomainError):
        generation_pmf(0.0, 10)


def test_generation_samples_match_pmf():
    params = GWParams(sigma=0.05, T=30)
    t = generation_of_trigger(params, np.random.default_rng(1), size=100_000)
    assert t.min() >= 0 and t.max() <= params.T
    observed = np.bincount(params.T - t, minlength=params.T + 1)
    expected = generation_pmf(params.sigma, params.T) * t.size
    assert chisquare(observed, expected).pvalue > 0.001


def test_large_mean_concentrates_on_last_generation():
    params = GWParams(sigma=0.9, T=20, n_split=50)
    pmf = generation_pmf(params.sigma, params.T, params.n_split)
    assert pmf[0] == pytest.approx(1 - 1 / params.mu, rel=1e-12)
    assert pmf[0] > 0.97


def test_R0_reference_and_reverse_sum():
    params = GWParams(sigma=0.02, T=100)
    R0 = compute_R0(1.5, 10.0, params)
    mu, T = params.mu, params.T
    weights = [(1 - 1 / mu) * mu ** (-j) for j in range(T, -1, -1)]
    total = math.fsum(weights)
    again = 10.0 * math.fsum(w / total * (i / T) ** 1.5 for i, w in enumerate(weights)) ** (1 / 1.5)
    assert abs(R0 - again) < 1e-12
    assert R0 == pytest.approx(R0_REFERENCE, abs=1e-12)


def test_R0_bounds():
    assert compute_R0(1.5, 10.0, GWParams(sigma=0.99, T=5, n_split=10**6)) == pytest.approx(10.0, rel=1e-5)
    for sigma in (0.01, 0.1, 0.5):
        assert compute_R0(1.2, 4.0, GWParams(sigma=sigma, T=50)) <= 4.0


def test_sample_R_basic():
    params = GWParams(sigma=0.02, T=100)
    assert sample_R(1, 1.5, 10.0, params, np.random.default_rng(0)).shape == (1,)
    with pytest.raises(DomainError):
        sample_R(0, 1.5, 10.0, params, np.random.default_rng(0))


def test_R_never_exceeds_its_length():
    params = GWParams(sigma=0.02, T=100)
    rng_a, rng_b = np.random.default_rng(5), np.random.default_rng(5)
    R = sample_R(5000, 1.5, 10.0, params, rng_a)
    t = generation_of_trigger(params, rng_b, size=5000)
    L = sample_pareto(1.5, 10.0, math.inf, rng_b, size=5000)
    assert np.array_equal(R, t / params.T * L)
    assert np.all(R <= L)


def test_R_tail_law_and_exponent():
    params = GWParams(sigma=0.02, T=100)
    R = sample_R(100_000, 1.5, 10.0, params, np.random.default_rng(2))
    R0 = compute_R0(1.5, 10.0, params)
    assert ks_ccdf_distance(R, lambda x: (R0 / x) ** 1.5, lower=10.0) < 0.02
    top = np.sort(R)[-1000:]
    hill = top.size / np.sum(np.log(top / top[0]))
    assert abs(hill - 1.5) < 0.1


def test_ks_distance_exact_sample():
    # sample at the quantiles of a uniform law: gap is exactly 1/n
    n = 50
    x = (np.arange(n) + 1) / n
    assert ks_ccdf_distance(x, lambda v: 1 - v) == pytest.approx(1 / n)


def test_spacing_of_small_list():
    rep = spacing_report([5, 3, 3])
    assert (rep.R1, rep.R2, rep.D) == (5, 3, 2)
    assert rep.log2E == pytest.approx(2 - math.log2(3))
    with pytest.raises(DomainError):
        spacing_report([1.0])


def test_top_two_against_sort():
    rng = np.random.default_rng(8)
    for _ in range(1000):
        values = rng.pareto(1.5, size=int(rng.integers(2, 300)))
        ordered = np.sort(values)
        assert top_two(values) == (ordered[-1], ordered[-2])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1e6, allow_nan=False), min_size=2, max_size=60))
def test_spacing_nonnegative(values):
    rep = spacing_report(values)
    assert rep.R1 >= rep.R2
    assert rep.D >= 0
    assert rep.R1 == max(values)


def test_excess_is_thread_independent():
    params = GWParams(sigma=0.05, T=40, trials=300, seed=3)
    a = excess_distribution(params, 1.5, 10.0, threads=1)
    b = excess_distribution(params, 1.5, 10.0, threads=4)
    for name in ("Y", "Z_T", "R1", "R2", "D", "log2E"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.summary() == b.summary()


def test_excess_fields_consistent():
    params = GWParams(sigma=0.05, T=40, trials=300, seed=3)
    res = excess_distribution(params, 1.5, 10.0)
    assert np.all(res.R1 >= res.R2)
    assert np.allclose(res.log2E, res.D - np.log2(res.Y))
    assert np.allclose(res.log2E_Z, res.D - np.log2(res.Z_T))
    assert np.all(res.log2E_Z >= res.log2E)
    assert res.C_T == pytest.approx(params.mu**params.T)
    rows = list(res.rows())
    assert len(rows) == 300 and list(rows[0]) == ["Y", "R1", "R2", "D", "log2E"]
    summary = res.summary()
    assert summary["log2E"]["q50"] == pytest.approx(np.median(res.log2E))


def test_tree_bookkeeping(medium_topologies):
    for topo in medium_topologies:
        report = tree_vs_theory(topo)
        assert report["Z"] == list(evolve(topo, topo.params.T).counts)
        # one trigger per non-branching step of every tree node
        assert report["trigger_events"] == report["node_count"] - report["branch_events"]
        assert report["Y_T"] == sum(report["Z"][1:])


def test_tree_recall_counts(medium_topologies):
    obs, pred, own = [], [], []
    for topo in medium_topologies:
        report = tree_vs_theory(topo)
        obs.append(report["R_obs"])
        pred.append(report["R_pred"])
        own.append(report["R_own"])
    obs, pred, own = (np.concatenate(x) for x in (obs, pred, own))
    # counting the trigger's own section, the pooled mean is within 20%
    assert obs.mean() / (pred + own).mean() == pytest.approx(1.0, abs=0.2)
    # without it the lifetime-fraction estimate falls short at this scale
    assert obs.mean() / pred.mean() > 1.2
