import io

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from groupbias.biassim import BiasConfig, simulate_attractiveness
from groupbias.correction import correct_scores, overcorrection_report
from groupbias.dataset import GroupedDataset, Query, SyntheticSpec, synthesize_dataset
from groupbias.estimator import build_pools, estimate_all, estimate_beta, global_pool


def _one(relevance, affected):
    return GroupedDataset((Query("q", tuple(f"d{i}" for i in range(len(relevance))), relevance, affected=affected),))


def exact_scaling_dataset(num_queries, half, seed):
    """Affected relevances are a permutation of the same query's non-affected ones."""
    rng = np.random.default_rng(seed)
    queries = []
    for i in range(num_queries):
        r = rng.random(half)
        rel = np.concatenate([rng.permutation(r), r])
        aff = np.arange(2 * half) < half
        queries.append(Query(f"q{i}", tuple(f"d{j}" for j in range(2 * half)), rel, affected=aff))
    return GroupedDataset(tuple(queries))


def test_division_and_clamp():
    ds = _one([0.5, 1.0, 0.3], [True, True, False])
    t = simulate_attractiveness(ds, BiasConfig.single(0.8))
    t = t.with_values([np.array([0.4, 0.9, 0.3])])
    c = correct_scores(t, ds, {"c": 0.8}, {"q": "c"})
    assert_allclose(c.values[0], [0.5, 1.0, 0.3])
    assert c.clamped_count == 1
    assert c.beta_used[0] == 0.8


def test_exact_pipeline_recovers_relevance():
    ds = exact_scaling_dataset(100, 5, seed=3)
    t = simulate_attractiveness(ds, BiasConfig.single(0.8))
    est = estimate_beta(global_pool(ds, t))
    assert est.beta_hat == 0.8
    c = correct_scores(t, ds, {"g": est}, {q: "g" for q in ds.query_ids})
    for q, v in zip(ds, c):
        assert_allclose(v, q.relevance, rtol=1e-15, atol=0)
    assert c.clamped_count == 0


def test_unbiased_data_is_fixed_point():
    ds = exact_scaling_dataset(50, 5, seed=1)
    t = simulate_attractiveness(ds, BiasConfig.single(1.0))
    est = estimate_beta(global_pool(ds, t))
    assert est.beta_hat == 1.0
    c = correct_scores(t, ds, {"g": est}, {q: "g" for q in ds.query_ids})
    for a, v in zip(t, c):
        assert_array_equal(a, v)


def test_within_group_order_preserved():
    ds = synthesize_dataset(SyntheticSpec(40, 12, seed=2))
    t = simulate_attractiveness(ds, BiasConfig.single(0.7, sigma_beta=0.1, seed=2))
    clustering = {q: f"c{i % 4}" for i, q in enumerate(ds.query_ids)}
    est = estimate_all(build_pools(ds, t, clustering).pools).estimates
    c = correct_scores(t, ds, est, clustering)
    for q, a, v in zip(ds, t, c):
        for mask in (q.affected, ~q.affected):
            i, j = np.meshgrid(np.flatnonzero(mask), np.flatnonzero(mask))
            assert np.all(v[i][a[i] < a[j]] <= v[j][a[i] < a[j]])


def test_missing_cluster_uses_fallback_or_raises():
    ds = synthesize_dataset(SyntheticSpec(3, 4, seed=0))
    t = simulate_attractiveness(ds, BiasConfig.single(0.8))
    clustering = {q: "known" if i == 0 else "unknown" for i, q in enumerate(ds.query_ids)}
    with pytest.raises(KeyError) as err:
        correct_scores(t, ds, {"known": 0.8}, clustering)
    assert "q000001" in str(err.value) and "q000002" in str(err.value)
    c = correct_scores(t, ds, {"known": 0.8}, clustering, fallback=0.5)
    assert list(c.beta_used) == [0.8, 0.5, 0.5]
    assert len(c.diagnostics) == 2


def test_overcorrection_report():
    ds = synthesize_dataset(SyntheticSpec(200, 10, seed=5))
    t = simulate_attractiveness(ds, BiasConfig.single(0.8))
    ids = {q: "g" for q in ds.query_ids}
    perfect = correct_scores(t, ds, {"g": 0.8}, ids)
    rep = overcorrection_report(perfect, ds)
    assert rep["affected"] == pytest.approx(0.0, abs=1e-15) and rep["nonaffected"] == 0.0

    under = correct_scores(t, ds, {"g": 0.6}, ids)
    assert overcorrection_report(under, ds)["affected"] > 0

    none = correct_scores(t, ds, {"g": 1.0}, ids)
    mean_rel = np.mean(np.concatenate([q.relevance[q.affected] for q in ds]))
    assert overcorrection_report(none, ds)["affected"] == pytest.approx(-(1 - 0.8) * mean_rel)


def test_corrected_csv_has_beta_used():
    ds = _one([0.5, 0.2], [True, False])
    t = simulate_attractiveness(ds, BiasConfig.single(0.5))
    c = correct_scores(t, ds, {"c": 0.5}, {"q": "c"})
    buf = io.StringIO()
    c.to_csv(buf, betas=t.betas)
    assert buf.getvalue().splitlines() == [
        "query_id,item_id,attractiveness,beta_q,beta_used",
        "q,d0,0.5,0.5,0.5",
        "q,d1,0.2,0.5,0.5",
    ]
