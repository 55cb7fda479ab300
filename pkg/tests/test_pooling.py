import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from emofuse.core import DimensionMismatch, FeatureSequence
from emofuse.pooling import AttentionParams, attention_pool, attention_pool_backward, mean_pool

from oracles import central_diff, rel_max_err


def test_mean_pool_small():
    assert mean_pool(FeatureSequence("s", [[1, 2], [3, 4]])).tolist() == [2, 3]


def test_mean_pool_single_frame():
    v = np.array([[0.3, -7.0, 2.5]])
    assert np.array_equal(mean_pool(v), v[0])


def test_mean_pool_against_compensated_sum():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1000, 6)) * 10 + 1e3
    expected = [math.fsum(x[:, d]) / 1000 for d in range(6)]
    np.testing.assert_allclose(mean_pool(x), expected, rtol=0, atol=1e-12 * 1e3)


def test_attention_zero_u_is_mean():
    x = np.random.default_rng(0).standard_normal((5, 3))
    pooled, w = attention_pool(x, np.zeros(3))
    assert np.array_equal(pooled, mean_pool(x))
    np.testing.assert_array_equal(w, np.full(5, 0.2))


def test_attention_single_frame():
    pooled, w = attention_pool([[4.0, -1.0]], AttentionParams([3.0, 2.0]))
    assert pooled.tolist() == [4.0, -1.0]
    assert w.tolist() == [1.0]


def test_attention_worked_example():
    # softmax([1, 3]) and its weighted frame sum, evaluated at 30 digits
    pooled, w = attention_pool([[1, 0], [3, 2]], [1, 0])
    np.testing.assert_allclose(w, [0.119202922022117556, 0.880797077977882444], rtol=0, atol=1e-15)
    np.testing.assert_allclose(pooled, [2.76159415595576489, 1.76159415595576489], rtol=0, atol=1e-14)


def test_attention_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        attention_pool(np.ones((3, 2)), [1.0, 2.0, 3.0])
    with pytest.raises(DimensionMismatch):
        attention_pool_backward(np.ones((3, 2)), [1.0, 2.0], [1.0])


def test_attention_stable_for_large_scores():
    x = np.array([[1000.0], [999.0]])
    pooled, w = attention_pool(x, [5.0])
    assert np.all(np.isfinite(w)) and abs(w.sum() - 1) < 1e-12


def _fd_check(x, u, g):
    def f_seq(xx):
        return g @ attention_pool(xx, u)[0]

    def f_u(uu):
        return g @ attention_pool(x, uu)[0]

    grad_seq, grad_u = attention_pool_backward(x, u, g)
    return rel_max_err(grad_seq, central_diff(f_seq, x)), rel_max_err(grad_u, central_diff(f_u, u))


def test_backward_zero_u_unit_upstream():
    x = np.random.default_rng(1).standard_normal((4, 3))
    for d in range(3):
        e_seq, e_u = _fd_check(x, np.zeros(3), np.eye(3)[d])
        assert e_seq < 1e-6 and e_u < 1e-6


def test_backward_single_frame():
    g = np.array([0.5, -2.0])
    grad_seq, grad_u = attention_pool_backward([[1.0, 3.0]], [0.7, -0.2], g)
    assert np.array_equal(grad_u, np.zeros(2))
    np.testing.assert_allclose(grad_seq[0], g, rtol=0, atol=1e-15)


def test_backward_random_7x5():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((7, 5))
    u = rng.standard_normal(5)
    g = rng.standard_normal(5)
    e_seq, e_u = _fd_check(x, u, g)
    assert e_seq < 1e-6 and e_u < 1e-6


def test_backward_many_random():
    rng = np.random.default_rng(12)
    for _ in range(100):
        t, d = rng.integers(1, 8), rng.integers(1, 6)
        x = rng.standard_normal((t, d))
        u = rng.standard_normal(d)
        g = rng.standard_normal(d)
        e_seq, e_u = _fd_check(x, u, g)
        assert e_seq < 1e-5 and e_u < 1e-5


seqs = st.integers(1, 8).flatmap(
    lambda t: st.integers(1, 5).flatmap(
        lambda d: st.tuples(
            arrays(np.float64, (t, d), elements=st.floats(-50, 50)),
            arrays(np.float64, (d,), elements=st.floats(-3, 3)),
        )
    )
)


@settings(max_examples=200, deadline=None)
@given(seqs, st.randoms())
def test_permutation_invariance(pair, rnd):
    x, u = pair
    perm = list(range(x.shape[0]))
    rnd.shuffle(perm)
    np.testing.assert_allclose(mean_pool(x[perm]), mean_pool(x), rtol=1e-12, atol=1e-12)
    p1, w1 = attention_pool(x, u)
    p2, w2 = attention_pool(x[perm], u)
    np.testing.assert_allclose(p2, p1, rtol=1e-10, atol=1e-10)
    np.testing.assert_allclose(w2, w1[perm], rtol=1e-10, atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(seqs)
def test_weights_are_probabilities(pair):
    x, u = pair
    _, w = attention_pool(x, u)
    assert np.all(w >= 0) and abs(w.sum() - 1) < 1e-12
