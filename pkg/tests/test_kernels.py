import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from numpy.testing import assert_allclose, assert_array_equal

from groupbias import kernels
from groupbias.kernels import _pykernels

try:
    from groupbias.kernels import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = [_pykernels] + ([_ckernels] if _ckernels is not None else [])
needs_ext = pytest.mark.skipif(_ckernels is None, reason="compiled kernels not built")

values = arrays(np.float64, st.integers(1, 40), elements=st.sampled_from([0.0, 0.1, 0.2, 0.25, 0.5, 0.75, 1.0]))


def _lambda_oracle(scores, labels, cutoff):
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    rank = {i: r + 1 for r, i in enumerate(order)}
    ideal = sorted(labels, reverse=True)
    disc = lambda r: 1 / np.log2(1 + r) if r <= cutoff else 0.0
    idcg = sum(g * disc(r + 1) for r, g in enumerate(ideal))
    out = np.zeros(n)
    if idcg <= 0:
        return out
    for i in range(n):
        for j in range(n):
            if labels[i] > labels[j]:
                rho = 1 / (1 + np.exp(scores[i] - scores[j]))
                delta = abs((labels[i] - labels[j]) * (disc(rank[i]) - disc(rank[j]))) / idcg
                out[i] += rho * delta
                out[j] -= rho * delta
    return out


def test_backend_is_selected():
    assert kernels.BACKEND in ("cython", "python")
    if _ckernels is not None:
        assert kernels.BACKEND == "cython" or kernels.BACKEND == "python"


@pytest.mark.parametrize("k", BACKENDS)
def test_ks_gap_examples(k):
    assert k.ks_gap(np.array([1.0, 2.0, 3.0]), np.array([2.0, 3.0, 4.0])) == 3
    assert k.ks_gap(np.array([0.1, 0.2]), np.array([0.8, 0.9])) == 4


@needs_ext
@settings(max_examples=200, deadline=None)
@given(values, values)
def test_ks_backends_agree(a, b):
    a, b = np.sort(a), np.sort(b)
    scales = np.round(np.linspace(0.05, 1.0, 20), 12)
    assert _ckernels.ks_gap(a, b) == _pykernels.ks_gap(a, b)
    assert_array_equal(_ckernels.ks_gap_grid(a, b, scales), _pykernels.ks_gap_grid(a, b, scales))


@pytest.mark.parametrize("k", BACKENDS)
def test_lambda_examples(k):
    qptr = np.array([0, 3], dtype=np.int64)
    zero = k.lambda_gradients(np.array([0.3, 0.1, 0.2]), np.array([0.5, 0.5, 0.5]), qptr, 10, True)
    assert_array_equal(zero, 0.0)
    two = k.lambda_gradients(np.zeros(2), np.array([1.0, 0.0]), np.array([0, 2], dtype=np.int64), 10, True)
    assert two[0] > 0 and two[1] == -two[0]


@pytest.mark.parametrize("k", BACKENDS)
def test_lambda_matches_pair_loop(k):
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 9))
        s, y = rng.normal(size=n), rng.integers(0, 5, n) / 4
        cutoff = int(rng.integers(1, 10))
        got = k.lambda_gradients(s, y, np.array([0, n], dtype=np.int64), cutoff, True)
        assert_allclose(got, _lambda_oracle(list(s), list(y), cutoff), rtol=1e-12, atol=1e-15)


@needs_ext
@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 12), min_size=1, max_size=5), st.integers(0, 2**32 - 1), st.booleans())
def test_lambda_backends_agree(sizes, seed, weighted):
    rng = np.random.default_rng(seed)
    qptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    s, y = rng.normal(size=qptr[-1]), rng.random(qptr[-1]).round(1)
    assert_allclose(
        _ckernels.lambda_gradients(s, y, qptr, 5, weighted),
        _pykernels.lambda_gradients(s, y, qptr, 5, weighted),
        rtol=1e-12,
        atol=1e-15,
    )
