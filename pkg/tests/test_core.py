import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtuning.core import ConfigError, DataError, Rng, cosine, cosine_matrix, log_softmax, softmax

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
vectors = arrays(np.float64, st.integers(1, 12), elements=finite)


def test_cosine_examples():
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([2, 0], [1, 0]) == 1.0
    assert cosine([1, 2], [3, 4]) == pytest.approx(11 / (math.sqrt(5) * 5), abs=1e-12)
    assert cosine([1, 2], [3, 4]) == pytest.approx(0.98387, abs=1e-5)


def test_cosine_errors():
    with pytest.raises(DataError):
        cosine([1, 0], [1, 0, 0])
    with pytest.raises(DataError):
        cosine([0, 0], [1, 0])
    with pytest.raises(DataError):
        cosine([np.nan, 1], [1, 0])


@given(st.integers(1, 10).flatmap(lambda d: st.tuples(
    arrays(np.float64, d, elements=finite), arrays(np.float64, d, elements=finite))),
    st.floats(0.01, 100), st.floats(0.01, 100))
def test_cosine_scale_invariance_and_symmetry(uv, a, b):
    u, v = uv
    if np.linalg.norm(u) < 1e-3 or np.linalg.norm(v) < 1e-3:
        return
    c = cosine(u, v)
    assert -1.0 <= c <= 1.0
    assert cosine(v, u) == pytest.approx(c, abs=1e-12)
    assert cosine(a * u, b * v) == pytest.approx(c, abs=1e-12)


def test_cosine_matrix_matches_scalar():
    g = np.random.default_rng(0)
    A, B = g.normal(size=(4, 3)), g.normal(size=(5, 3))
    M = cosine_matrix(A, B)
    for i in range(4):
        for j in range(5):
            assert M[i, j] == pytest.approx(cosine(A[i], B[j]), abs=1e-12)


def test_softmax_examples():
    np.testing.assert_allclose(softmax([3.3] * 5), [0.2] * 5, atol=1e-15)
    np.testing.assert_allclose(softmax([math.log(2), 0.0]), [2 / 3, 1 / 3], atol=1e-15)
    np.testing.assert_allclose(softmax([1.0, 0.0], T=0.5), [0.88080, 0.11920], atol=1e-5)
    e2 = math.exp(2)
    np.testing.assert_allclose(softmax([1.0, 0.0], T=0.5), [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-15)


def test_softmax_errors():
    with pytest.raises(ConfigError):
        softmax([])
    with pytest.raises(ConfigError):
        softmax([1, 2], T=0)
    with pytest.raises(ConfigError):
        softmax([1, 2], T=-1)
    with pytest.raises(DataError):
        softmax([1, np.inf])


@given(vectors, st.floats(0.05, 10), st.floats(-100, 100))
def test_softmax_normalised_and_shift_invariant(z, T, c):
    p = softmax(z, T)
    assert abs(p.sum() - 1.0) <= 1e-9
    assert np.all(p >= 0) and np.all(p <= 1)
    if np.ptp(z) / T < 700:  # beyond this exp underflows to exactly 0 in float64
        assert np.all(p > 0)
    np.testing.assert_allclose(softmax(z + c, T), p, atol=1e-12)


@given(arrays(np.float64, st.integers(2, 10), elements=finite, unique=True))
def test_softmax_monotone(z):
    p = softmax(z)
    order = np.argsort(z)
    assert np.all(np.diff(p[order]) >= 0)


def test_log_softmax_examples():
    np.testing.assert_allclose(log_softmax([0.0, 0.0]), [-math.log(2)] * 2, atol=1e-15)
    out = log_softmax([1000.0, 0.0])
    assert np.all(np.isfinite(out))
    assert out[0] == pytest.approx(0.0, abs=1e-300)
    assert out[1] == pytest.approx(-1000.0, abs=1e-12)
    out = log_softmax([-700.0, 700.0, 0.0])
    assert np.all(np.isfinite(out))


def test_log_softmax_matches_softmax():
    g = np.random.default_rng(7)
    z = g.normal(size=40) * 3
    np.testing.assert_allclose(np.exp(log_softmax(z)), softmax(z), atol=1e-12)
    np.testing.assert_allclose(log_softmax(z), np.log(softmax(z)), atol=1e-12)


def test_softmax_batched_rows():
    z = np.array([[0.0, 1.0], [5.0, 5.0]])
    p = softmax(z)
    np.testing.assert_allclose(p[1], [0.5, 0.5])
    np.testing.assert_allclose(p.sum(axis=1), 1.0)


def test_rng_reproducible_million_draws():
    a = Rng(123).stream("x").random(1_000_000)
    b = Rng(123).stream("x").random(1_000_000)
    assert np.array_equal(a, b)


def test_rng_streams_are_independent_of_each_other():
    r = Rng(5)
    assert not np.array_equal(r.stream("a").random(8), r.stream("b").random(8))
    assert not np.array_equal(r.stream("a", 0).random(8), r.stream("a", 1).random(8))
    assert not np.array_equal(Rng(5).stream("a").random(8), Rng(6).stream("a").random(8))
    # drawing from one stream never shifts another
    s1 = r.stream("a")
    s1.random(100)
    assert np.array_equal(r.stream("b").random(4), Rng(5).stream("b").random(4))


def test_rng_validation():
    with pytest.raises(ConfigError):
        Rng(-1)
    with pytest.raises(ConfigError):
        Rng(0, algorithm="MT19937-custom")


@settings(max_examples=20)
@given(st.integers(0, 2**64 - 1))
def test_rng_accepts_full_u64_range(seed):
    assert Rng(seed).stream("t").integers(0, 10) in range(10)
