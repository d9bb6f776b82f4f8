import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdistfit.linalg import NotPositiveDefinite, SpdMatrix, cholesky, log_det, quad_form

from conftest import random_spd


def test_cholesky_identity():
    m = cholesky(np.eye(2))
    np.testing.assert_array_equal(m.chol, np.eye(2))


def test_cholesky_diagonal():
    m = cholesky([[4.0, 0.0], [0.0, 9.0]])
    np.testing.assert_array_equal(m.chol, [[2.0, 0.0], [0.0, 3.0]])


def test_cholesky_reconstruction():
    a = np.array([[2.0, -1.0], [-1.0, 2.0]])
    m = cholesky(a)
    assert np.max(np.abs(m.chol @ m.chol.T - a)) < 1e-14


def test_entries_exactly_symmetric(rng):
    a = rng.standard_normal((4, 4))
    a = a @ a.T + np.eye(4)
    a[0, 1] += 1e-13  # slight asymmetry is absorbed
    m = SpdMatrix(a)
    assert np.array_equal(m.entries, m.entries.T)


def test_not_positive_definite():
    with pytest.raises(NotPositiveDefinite) as err:
        cholesky([[1.0, 2.0], [2.0, 1.0]])
    assert err.value.pivot == 1
    with pytest.raises(NotPositiveDefinite):
        cholesky(np.zeros((2, 2)))


def test_bad_input():
    with pytest.raises(ValueError):
        SpdMatrix(np.ones((2, 3)))
    with pytest.raises(ValueError):
        SpdMatrix([[np.nan, 0.0], [0.0, 1.0]])


def test_quad_form_examples():
    assert quad_form(cholesky(np.eye(2)), [3.0, 4.0]) == pytest.approx(25.0, rel=1e-15)
    assert quad_form(cholesky(np.eye(2)), [0.0, 0.0]) == 0.0
    m = cholesky([[2.0, -1.0], [-1.0, 2.0]])
    inv = np.array([[2.0, 1.0], [1.0, 2.0]]) / 3.0
    v = np.array([1.0, 1.0])
    assert quad_form(m, v) == pytest.approx(v @ inv @ v, rel=1e-14)
    assert quad_form(m, v) == pytest.approx(2.0, rel=1e-14)


def test_quad_form_dimension_mismatch():
    with pytest.raises(ValueError):
        quad_form(cholesky(np.eye(2)), [1.0, 2.0, 3.0])


def test_quad_form_batch(rng):
    m = SpdMatrix(random_spd(rng, 3))
    v = rng.standard_normal((7, 3))
    inv = np.linalg.inv(m.entries)
    expected = np.einsum("ni,ij,nj->n", v, inv, v)
    np.testing.assert_allclose(quad_form(m, v), expected, rtol=1e-10)


def test_log_det_examples():
    assert log_det(cholesky(np.eye(3))) == 0.0
    assert log_det(cholesky(np.diag([math.e, math.e]))) == pytest.approx(2.0, rel=1e-15)
    assert log_det(cholesky([[2.0, -1.0], [-1.0, 2.0]])) == pytest.approx(math.log(3.0), rel=1e-14)


def test_solve_and_inverse(rng):
    a = random_spd(rng, 4)
    m = SpdMatrix(a)
    b = rng.standard_normal(4)
    np.testing.assert_allclose(a @ m.solve(b), b, atol=1e-10)
    np.testing.assert_allclose(m.inverse() @ a, np.eye(4), atol=1e-10)


def test_from_cholesky_keeps_factor():
    low = np.array([[2.0, 0.0], [0.5, 1.5]])
    m = SpdMatrix.from_cholesky(low)
    np.testing.assert_array_equal(m.chol, low)
    np.testing.assert_allclose(m.entries, low @ low.T)
    with pytest.raises(NotPositiveDefinite):
        SpdMatrix.from_cholesky([[1.0, 0.0], [0.0, -1.0]])


def test_read_only(rng):
    m = SpdMatrix(random_spd(rng, 2))
    with pytest.raises(ValueError):
        m.entries[0, 0] = 5.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6))
def test_quad_form_positive(seed, d):
    rng = np.random.default_rng(seed)
    m = SpdMatrix(random_spd(rng, d))
    v = rng.standard_normal(d)
    assert quad_form(m, v) > 0.0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 6), c=st.floats(1e-3, 1e3))
def test_log_det_scaling(seed, d, c):
    rng = np.random.default_rng(seed)
    a = random_spd(rng, d)
    lhs = log_det(SpdMatrix(c * a))
    rhs = d * math.log(c) + log_det(SpdMatrix(a))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(rhs)) + 1e-12 * d * abs(math.log(c))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 5))
def test_quad_form_congruence(seed, d):
    rng = np.random.default_rng(seed)
    m = random_spd(rng, d)
    a = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
    v = rng.standard_normal(d)
    lhs = quad_form(SpdMatrix(a @ m @ a.T), a @ v)
    rhs = quad_form(SpdMatrix(m), v)
    assert lhs == pytest.approx(rhs, rel=1e-10)
