import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fricsim import dual as dm
from fricsim.dual import Dual, jvp

finite = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False)
nonzero = st.floats(min_value=0.1, max_value=1e3)


@settings(derandomize=True, max_examples=50)
@given(a=finite, b=finite, da=finite, db=finite)
def test_product_rule(a, b, da, db):
    x = Dual(np.array(a), np.array(da))
    y = Dual(np.array(b), np.array(db))
    z = x * y
    assert z.re == pytest.approx(a * b)
    assert z.eps == pytest.approx(a * db + b * da, abs=1e-9)


@settings(derandomize=True, max_examples=50)
@given(a=nonzero, b=nonzero, da=finite, db=finite)
def test_quotient_rule(a, b, da, db):
    x = Dual(np.array(a), np.array(da))
    y = Dual(np.array(b), np.array(db))
    z = x / y
    assert z.re == pytest.approx(a / b)
    assert z.eps == pytest.approx((da * b - a * db) / b**2, rel=1e-12)


def test_square_and_sqrt_log():
    x = Dual(np.array(3.0), np.array(1.0))
    assert (x**2).eps == pytest.approx(6.0)
    assert dm.sqrt(x).eps == pytest.approx(0.5 / np.sqrt(3.0))
    assert dm.log(x).eps == pytest.approx(1.0 / 3.0)


def test_jvp_componentwise_square():
    r = lambda v: v * v
    out = jvp(r, np.array([3.0]), np.array([1.0]))
    assert out == pytest.approx([6.0])


def test_jvp_linear_map_exact():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(7, 7))
    p = rng.normal(size=7)
    v = rng.normal(size=7)
    out = jvp(lambda x: dm.matmul(a, x), v, p)
    np.testing.assert_allclose(out, a @ p, rtol=0, atol=1e-14)


def test_jvp_linear_in_direction():
    rng = np.random.default_rng(1)
    v = rng.normal(size=5)
    p1, p2 = rng.normal(size=5), rng.normal(size=5)

    def f(x):
        return x * x * x - 2.0 * x

    j1 = jvp(f, v, p1)
    j2 = jvp(f, v, p2)
    j12 = jvp(f, v, 2.0 * p1 - 3.0 * p2)
    np.testing.assert_allclose(j12, 2.0 * j1 - 3.0 * j2, rtol=1e-13, atol=1e-13)


def test_jvp_zero_direction_exact():
    v = np.array([1.0, -2.0, 0.5])
    out = jvp(lambda x: x * x + dm.sqrt(x * x + 1.0), v, np.zeros(3))
    assert np.all(out == 0.0)


def test_comparisons_use_real_part():
    x = Dual(np.array([1.0, 2.0]), np.array([100.0, -100.0]))
    np.testing.assert_array_equal(x < 1.5, [True, False])
    np.testing.assert_array_equal(x >= 2.0, [False, True])


def test_branch_consistency_where():
    # dual evaluation takes the same branch as the real evaluation
    def f(x):
        return dm.where(x < 1.0, x * x, 2.0 * x - 1.0)

    at = np.array([0.5, 1.0, 2.0])
    out = jvp(f, at, np.ones(3))
    np.testing.assert_allclose(out, [1.0, 2.0, 2.0])


def test_min_max_tie_toward_first():
    a = Dual(np.array(1.0), np.array(5.0))
    b = Dual(np.array(1.0), np.array(7.0))
    assert dm.maximum(a, b).eps == 5.0
    assert dm.minimum(a, b).eps == 5.0


def test_det3_inv3_match_numpy():
    rng = np.random.default_rng(2)
    m = rng.normal(size=(10, 3, 3)) + 3.0 * np.eye(3)
    np.testing.assert_allclose(dm.det3(m), np.linalg.det(m), rtol=1e-12)
    np.testing.assert_allclose(dm.inv3(m), np.linalg.inv(m), rtol=1e-10)


def test_inv3_dual_derivative():
    rng = np.random.default_rng(3)
    m = rng.normal(size=(1, 3, 3)) + 3.0 * np.eye(3)
    d = rng.normal(size=(1, 3, 3))
    out = dm.inv3(Dual(m, d))
    # d(M^{-1}) = -M^{-1} dM M^{-1}
    expect = -np.linalg.inv(m) @ d @ np.linalg.inv(m)
    np.testing.assert_allclose(out.eps, expect, rtol=1e-10, atol=1e-12)


def test_cross_and_norm():
    a = np.array([[1.0, 0.0, 0.0]])
    b = np.array([[0.0, 1.0, 0.0]])
    np.testing.assert_allclose(dm.cross_last(a, b), [[0.0, 0.0, 1.0]])
    # guarded norm has zero derivative at zero instead of NaN
    z = Dual(np.zeros((1, 3)), np.ones((1, 3)))
    n = dm.norm_last(z)
    assert np.isfinite(n.eps).all()
    assert n.eps == pytest.approx(0.0)


def test_scatter_add_dual():
    acc = dm.zeros((3,), like=Dual(np.zeros(1), np.zeros(1)))
    dm.scatter_add(acc, np.array([0, 0, 2]),
                   Dual(np.array([1.0, 2.0, 3.0]), np.array([0.1, 0.2, 0.3])))
    np.testing.assert_allclose(acc.re, [3.0, 0.0, 3.0])
    np.testing.assert_allclose(acc.eps, [0.3, 0.0, 0.3])
