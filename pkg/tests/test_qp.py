import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrmpc.qp import QPError, solve_qp


def random_qp(rng, n, m):
    L = rng.normal(size=(n, n))
    H = L @ L.T + 0.5 * np.eye(n)
    g = rng.normal(size=n)
    A = rng.normal(size=(m, n))
    x0 = rng.normal(size=n)
    b = A @ x0 - rng.uniform(0, 1, m)  # x0 strictly feasible
    return H, g, A, b, x0


def cvx_solve(H, g, A, b):
    x = cp.Variable(len(g))
    cons = [A @ x >= b] if len(b) else []
    cp.Problem(cp.Minimize(0.5 * cp.quad_form(x, cp.psd_wrap(H)) + g @ x), cons).solve(solver=cp.CLARABEL)
    return x.value


@given(st.integers(0, 10**6), st.integers(2, 12), st.integers(0, 25))
def test_matches_cvxpy(seed, n, m):
    rng = np.random.default_rng(seed)
    H, g, A, b, x0 = random_qp(rng, n, m)
    res = solve_qp(H, g, A, b, x0)
    ref = cvx_solve(H, g, A, b)
    f = lambda x: 0.5 * x @ H @ x + g @ x  # noqa: E731
    assert f(res.x) <= f(ref) + 1e-6 * max(1.0, abs(f(ref)))
    assert np.all(A @ res.x >= b - 1e-8)
    assert np.allclose(res.x, ref, atol=1e-4)


def test_unconstrained_minimum():
    H = np.diag([2.0, 4.0])
    g = np.array([-2.0, -4.0])
    res = solve_qp(H, g, np.zeros((0, 2)), np.zeros(0), np.zeros(2))
    assert np.allclose(res.x, [1.0, 1.0])


def test_active_bound_and_multiplier():
    # min 0.5|x|^2 - x1  s.t. -x1 >= -0.5  ->  x1 = 0.5, multiplier 0.5
    res = solve_qp(np.eye(2), np.array([-1.0, 0.0]), np.array([[-1.0, 0.0]]), np.array([-0.5]), np.zeros(2))
    assert np.allclose(res.x, [0.5, 0.0])
    assert res.active == [0] and res.multipliers[0] == pytest.approx(0.5)


def test_infeasible_start_rejected():
    with pytest.raises(QPError):
        solve_qp(np.eye(1), np.zeros(1), np.array([[1.0]]), np.array([1.0]), np.zeros(1))


def test_singular_hessian_rejected():
    with pytest.raises(QPError):
        solve_qp(np.zeros((2, 2)), np.zeros(2), np.zeros((0, 2)), np.zeros(0), np.zeros(2))
