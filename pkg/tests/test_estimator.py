import io
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_array_equal

from groupbias.biassim import BiasConfig, simulate_attractiveness
from groupbias.dataset import GroupedDataset, Query, SyntheticSpec, synthesize_dataset
from groupbias.estimator import (
    Grid,
    ScorePool,
    build_pools,
    estimate_all,
    estimate_beta,
    global_pool,
    ks_profile,
    ks_statistic,
    write_estimates,
)

samples = arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1, allow_nan=False))


def ks_oracle(a, b):
    """Largest ECDF gap at every merged sample point, in exact rationals."""
    a, b = np.asarray(a), np.asarray(b)
    gap = max(
        abs(Fraction(int(np.sum(a <= t)), len(a)) - Fraction(int(np.sum(b <= t)), len(b)))
        for t in np.concatenate([a, b])
    )
    return float(gap)


def test_ks_examples():
    assert ks_statistic([0.3, 0.1, 0.2], [0.1, 0.2, 0.3]) == 0.0
    assert ks_statistic([0.1, 0.2], [0.8, 0.9]) == 1.0
    assert ks_statistic([1, 2, 3], [2, 3, 4]) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        ks_statistic([], [1.0])


def test_ks_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(300):
        a = rng.integers(0, 10, rng.integers(1, 50)) / 10
        b = rng.random(rng.integers(1, 50)).round(1)
        assert ks_statistic(a, b) == ks_oracle(a, b)


@settings(max_examples=100, deadline=None)
@given(samples, samples)
def test_ks_properties(a, b):
    d = ks_statistic(a, b)
    assert 0.0 <= d <= 1.0
    assert d == ks_statistic(b, a)
    # a common strictly increasing transform leaves the statistic unchanged
    assert d == ks_statistic(4.0 * a + 0.0, 4.0 * b)


def test_exact_scaling_recovered():
    s = np.random.default_rng(1).random(40)
    est = estimate_beta(ScorePool(0.8 * s, s))
    assert est.beta_hat == 0.8
    assert est.ks_at_min == 0.0
    assert est.pool_sizes == (40, 40)


def test_equal_pools_pick_largest_beta():
    s = np.random.default_rng(2).random(10)
    assert estimate_beta(ScorePool(s, s)).beta_hat == 1.0


def test_empty_pool():
    with pytest.raises(ValueError):
        estimate_beta(ScorePool(np.array([]), np.array([0.5])))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.integers(1, 25), elements=st.floats(0.01, 1)), st.integers(0, 190))
def test_scale_identifiability(s, idx):
    grid = Grid()
    beta0 = grid.points()[idx]
    est = estimate_beta(ScorePool(beta0 * s, s), grid)
    assert est.beta_hat == beta0


@settings(max_examples=30, deadline=None)
@given(samples, samples, st.randoms())
def test_estimate_is_order_invariant(a, b, rnd):
    a2, b2 = a.copy(), b.copy()
    rnd.shuffle(a2)
    rnd.shuffle(b2)
    assert estimate_beta(ScorePool(a, b)) == estimate_beta(ScorePool(a2, b2))


@settings(max_examples=30, deadline=None)
@given(samples, samples)
def test_estimate_is_grid_minimizer(a, b):
    pool = ScorePool(a, b)
    est = estimate_beta(pool)
    betas, ks = ks_profile(pool)
    assert est.beta_hat in betas
    assert est.ks_at_min == ks.min()
    assert est.beta_hat == betas[ks == ks.min()].max()
    assert ks.min() == pytest.approx(min(ks_oracle(a / beta, b) for beta in betas), abs=1e-12)


def test_grid_points():
    pts = Grid().points()
    assert len(pts) == 191
    assert pts[0] == 0.05 and pts[-1] == 1.0
    assert 0.8 in pts and 0.625 in pts


def test_recovery_on_synthetic_pool():
    ds = synthesize_dataset(SyntheticSpec(250, 20, seed=0))
    t = simulate_attractiveness(ds, BiasConfig.single(0.8, sigma_beta=0.1, seed=0))
    est = estimate_beta(global_pool(ds, t))
    assert est.pool_sizes == (2500, 2500)
    assert 0.78 <= est.beta_hat <= 0.86


def test_consistency_in_pool_size():
    rng = np.random.default_rng(5)
    errors = {}
    for size in (50, 500, 5000):
        errs = []
        for _ in range(100):
            r_a, r_n = rng.random(size), rng.random(size)
            errs.append(abs(estimate_beta(ScorePool(0.7 * r_a, r_n)).beta_hat - 0.7))
        errors[size] = np.mean(errs)
    assert errors[50] > errors[500] > errors[5000]


def _dataset(rel, aff):
    return GroupedDataset(tuple(
        Query(f"q{i}", tuple(f"d{j}" for j in range(len(r))), r, affected=a) for i, (r, a) in enumerate(zip(rel, aff))
    ))


def test_global_pool_conserves_items():
    ds = synthesize_dataset(SyntheticSpec(30, 9, 0.4, seed=1))
    t = simulate_attractiveness(ds, BiasConfig.single(0.8))
    pools = build_pools(ds, t, {q: "g" for q in ds.query_ids})
    assert len(pools.pools) == 1
    p = pools.pools[0]
    assert len(p.affected) + len(p.nonaffected) == ds.n_items
    assert p.source_queries == tuple(ds.query_ids)


def test_singleton_pools_match_queries():
    ds = synthesize_dataset(SyntheticSpec(5, 6, seed=2))
    t = simulate_attractiveness(ds, BiasConfig.single(0.8))
    pools = build_pools(ds, t, {q: q for q in ds.query_ids}).pools
    assert [p.cluster_id for p in pools] == ds.query_ids
    for p, q, a in zip(pools, ds, t):
        assert_array_equal(p.affected, a[q.affected])
        assert_array_equal(p.nonaffected, a[~q.affected])


def test_build_pools_skips_one_group_clusters_and_needs_all_queries():
    ds = _dataset([[0.5, 0.4], [0.3, 0.2]], [[True, False], [True, True]])
    pools = build_pools(ds, [q.relevance for q in ds], {"q0": "a", "q1": "b"})
    assert [p.cluster_id for p in pools.pools] == ["a"]
    assert "b" in pools.skipped
    with pytest.raises(KeyError):
        build_pools(ds, [q.relevance for q in ds], {"q0": "a"})


# Three queries whose non-affected items are {0.9, 0.5}, {0.4, 0.3}, {0.3, 0.2};
# the affected items carry the same multiset of relevances, permuted across
# queries, and are observed at beta = 0.8.
PERMUTED_NON = [[0.9, 0.5], [0.4, 0.3], [0.3, 0.2]]
PERMUTED_AFF = [[0.3, 0.2], [0.9, 0.5], [0.4, 0.3]]


def permuted_dataset():
    rel = [np.array(a + n) for a, n in zip(PERMUTED_AFF, PERMUTED_NON)]
    aff = [np.array([True, True, False, False])] * 3
    return _dataset(rel, aff)


def test_permuted_pools_amortized_vs_per_query():
    ds = permuted_dataset()
    t = simulate_attractiveness(ds, BiasConfig.single(0.8))
    amortized = estimate_beta(global_pool(ds, t))
    assert amortized.beta_hat == 0.8 and amortized.ks_at_min == 0.0
    per_query = estimate_all(build_pools(ds, t, {q: q for q in ds.query_ids}).pools).estimates
    betas = [per_query[q].beta_hat for q in ds.query_ids]
    # query 1 looks strongly biased, query 2 looks unbiased; neither is 0.8
    assert betas[0] < 0.8 and betas[1] == 1.0
    assert all(b != 0.8 for b in betas)


def test_estimate_all_exact_and_partial_failure():
    s = np.random.default_rng(3).random(30)
    pools = [ScorePool(0.6 * s, s, cluster_id="x"), ScorePool(0.8 * s, s, cluster_id="y"),
             ScorePool(np.array([]), s, cluster_id="z")]
    for jobs in (1, 3):
        res = estimate_all(pools, jobs=jobs)
        assert {k: e.beta_hat for k, e in res.estimates.items()} == {"x": 0.6, "y": 0.8}
        assert set(res.diagnostics) == {"z"}
    with pytest.raises(ValueError):
        estimate_all([])


def test_mixture_in_one_cluster_lands_between_modes():
    ds = synthesize_dataset(SyntheticSpec(400, 20, seed=4))
    t = simulate_attractiveness(ds, BiasConfig.mixture([0.6, 0.8], sigma_beta=0.0, seed=4))
    assert 0.6 < estimate_beta(global_pool(ds, t)).beta_hat < 0.8


def test_write_estimates():
    s = np.linspace(0.1, 1, 10)
    res = estimate_all([ScorePool(0.5 * s, s, cluster_id="c1")])
    buf = io.StringIO()
    write_estimates(res.estimates, buf)
    assert buf.getvalue() == "cluster_id,beta_hat,ks_at_min,n_affected,n_nonaffected\nc1,0.5,0.0,10,10\n"
