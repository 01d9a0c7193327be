import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from shortmem.errors import Infeasible, Unbounded
from shortmem.simplex import lp_solve


def test_lower_bound():
    res = lp_solve([1.0], A_ub=[[-1.0]], b_ub=[-3.0])
    assert res.x[0] == pytest.approx(3.0)


def test_simple_max():
    res = lp_solve([-1.0, -1.0], A_ub=[[1.0, 1.0]], b_ub=[1.0])
    assert res.objective == pytest.approx(-1.0)


def test_free_and_bounded_variables():
    # min x - y with -2 <= x <= 5, y <= 4 free below
    res = lp_solve([1.0, -1.0], bounds=[(-2.0, 5.0), (None, 4.0)])
    np.testing.assert_allclose(res.x, [-2.0, 4.0])


def test_infeasible():
    with pytest.raises(Infeasible):
        lp_solve([1.0], A_eq=[[1.0]], b_eq=[-1.0])


def test_unbounded():
    with pytest.raises(Unbounded):
        lp_solve([-1.0])


def check_kkt(res):
    A, b, z = res.standard_A, res.standard_b, res.standard_x
    assert np.all(z >= -1e-9)
    np.testing.assert_allclose(A @ z, b, atol=1e-9)
    assert np.all(res.reduced_costs >= -1e-9)


@given(st.integers(0, 10**6))
def test_matches_scipy_and_kkt(seed):
    scipy = pytest.importorskip("scipy.optimize")
    rng = np.random.default_rng(seed)
    n, m = int(rng.integers(2, 6)), int(rng.integers(1, 5))
    A = rng.normal(size=(m, n))
    x0 = rng.uniform(0, 1, size=n)
    b = A @ x0 + rng.uniform(0, 1, size=m)  # feasible
    c = rng.uniform(0.1, 1, size=n)  # bounded below on x >= 0
    res = lp_solve(c, A_ub=A, b_ub=b)
    ref = scipy.linprog(c, A_ub=A, b_ub=b)
    assert res.objective == pytest.approx(ref.fun, abs=1e-8)
    check_kkt(res)
