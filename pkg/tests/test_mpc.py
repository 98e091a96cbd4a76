import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lrmpc.mpc import (
    MpcConfig,
    ObstacleTrack,
    build_problem,
    cbf_residual,
    constant_velocity_tracks,
    psi,
    residual_table,
    rollout,
    shifted,
    solve,
)
from lrmpc.sim import HumanAgent, StaticObstacle


def static(p, r=0.3, N=8):
    return ObstacleTrack(np.repeat(np.array(p, float)[None], N + 1, axis=0), r)


def test_psi_examples():
    assert psi([1, 0], [0, 0], 0.6) == pytest.approx(0.64)
    assert psi([0.6, 0], [0, 0], 0.6) == pytest.approx(0.0)
    assert psi([0, 0], [0, 0], 0.6) == pytest.approx(-0.36)


def test_residual_examples():
    x = np.array([1.0, 0.0])
    o = np.zeros(2)
    assert cbf_residual(x, x, o, o, 0.5, 0.6) == pytest.approx(0.32)
    edge = np.array([0.6, 0.0])
    assert cbf_residual(edge, edge, o, o, 0.3, 0.6) == pytest.approx(0.0, abs=1e-15)
    # psi 0.1 -> -0.2 with xi = 1
    a = np.array([np.sqrt(0.46), 0.0])
    b = np.array([np.sqrt(0.16), 0.0])
    assert cbf_residual(a, b, o, o, 1.0, 0.6) == pytest.approx(-0.2)


def test_problem_sizes():
    cfg = MpcConfig()
    p0 = build_problem(np.zeros(2), [1, 0], [], cfg)
    assert p0.n_controls == 16 and p0.n_cbf_rows == 0
    p3 = build_problem(np.zeros(2), [1, 0], [static([2, 2]), static([3, 3]), static([-2, 2])], cfg)
    assert p3.n_cbf_rows == 24
    assert np.array_equal(p3.x0, [0.0, 0.0])


def test_straight_line_optimum():
    cfg = MpcConfig()
    sol = solve(build_problem(np.zeros(2), [1, 0], [], cfg))
    q, r, dt, N = 10.0, 1.0, cfg.dt, cfg.horizon
    u_star = dt * q / (r + N * dt * dt * q)  # every step equal in the unconstrained optimum
    assert np.allclose(sol.controls[0], [u_star, 0.0], atol=1e-6)
    assert sol.status == "optimal"


def test_terminal_error_with_heavy_terminal_weight():
    cfg = MpcConfig(q=(1e4, 0, 0, 1e4))
    sol = solve(build_problem(np.zeros(2), [1, 0], [], cfg))
    assert np.linalg.norm(sol.states[-1] - [1, 0]) <= 1e-3


def test_obstacle_on_line_respects_barrier():
    cfg = MpcConfig()
    sol = solve(build_problem(np.zeros(2), [3, 0], [static([1.5, 0.0])], cfg))
    assert sol.status == "optimal"
    assert sol.residuals.min() >= -1e-6
    assert sol.min_psi >= -1e-6


def test_warm_start_at_optimum_converges_in_one_iteration():
    cfg = MpcConfig()
    prob = build_problem(np.zeros(2), [3, 0], [static([1.5, 0.05])], cfg)
    sol = solve(prob)
    again = solve(prob, sol)
    assert again.iterations == 1
    assert np.allclose(again.controls, sol.controls, atol=1e-6)


def test_shifted_warm_start():
    sol = solve(build_problem(np.zeros(2), [3, 0], [], MpcConfig()))
    ws = shifted(sol)
    assert np.array_equal(ws.controls[:-1], sol.controls[1:]) and np.all(ws.controls[-1] == 0)


def cvx_reference(x0, target, cfg):
    """Convex obstacle-free problem solved by cvxpy with the same polygon and box."""
    N, dt = cfg.horizon, cfg.dt
    U = cp.Variable((N, 2))
    X = [x0 + dt * cp.sum(U[:t], axis=0) if t else x0 for t in range(N + 1)]
    P = cfg.polygon_sides
    ang = (np.arange(P) + 0.5) * 2 * np.pi / P
    nrm = np.stack([np.cos(ang), np.sin(ang)], 1)
    reach = cfg.v_max * np.cos(np.pi / P)
    cons = [nrm @ U[t] <= reach for t in range(N)]
    lo, hi = np.array(cfg.bounds[:2]), np.array(cfg.bounds[2:])
    cons += [X[t] >= lo for t in range(1, N + 1)] + [X[t] <= hi for t in range(1, N + 1)]
    e = X[N] - target
    obj = 0.5 * cp.quad_form(e, cfg.Q) + 0.5 * sum(cp.quad_form(U[t], cfg.R) for t in range(N))
    cp.Problem(cp.Minimize(obj), cons).solve(solver=cp.CLARABEL)
    return U.value


@given(st.integers(0, 10**6))
def test_obstacle_free_matches_cvxpy(seed):
    rng = np.random.default_rng(seed)
    cfg = MpcConfig(bounds=(-3, -3, 3, 3))
    x0 = rng.uniform(-2.5, 2.5, 2)
    target = rng.uniform(-6, 6, 2)
    sol = solve(build_problem(x0, target, [], cfg))
    ref = cvx_reference(x0, target, cfg)
    assert np.allclose(sol.controls, ref, atol=1e-4)


@given(st.integers(0, 10**6))
def test_solution_properties(seed):
    rng = np.random.default_rng(seed)
    cfg = MpcConfig()
    x0 = rng.uniform(-3, 3, 2)
    tracks = []
    for _ in range(int(rng.integers(0, 4))):
        p = x0 + rng.uniform(-3, 3, 2)
        v = rng.uniform(-1, 1, 2)
        tracks.append(ObstacleTrack(p + np.arange(9)[:, None] * 0.25 * v, 0.3))
    prob = build_problem(x0, rng.uniform(-5, 5, 2), tracks, cfg)
    sol = solve(prob)
    assert np.allclose(sol.states, rollout(x0, sol.controls, cfg.dt), atol=1e-12, rtol=0)
    if sol.status != "infeasible":
        assert np.all(np.linalg.norm(sol.controls, axis=1) <= cfg.v_max + 1e-9)
        assert all(a <= b + 1e-9 * max(1.0, abs(b)) for a, b in zip(sol.merit_history[1:], sol.merit_history))
    if sol.status == "optimal" and tracks:
        assert residual_table(prob, sol.states).min() >= -1e-8
        # first executed step keeps every barrier within its allowed decay
        for k, tr in enumerate(tracks):
            p0, p1 = psi(sol.states[0], tr.positions[0], prob.etas[k]), psi(sol.states[1], tr.positions[1], prob.etas[k])
            assert p1 >= (1 - cfg.xi) * p0 - 1e-6
    rev = solve(build_problem(x0, prob.target, tracks[::-1], cfg))
    assert np.allclose(rev.controls, sol.controls, atol=1e-6)


def test_constant_velocity_tracks():
    cfg = MpcConfig(max_humans=2)
    hs = [HumanAgent(i, np.array([d, 0.0]), np.array([0.0, 1.0]), np.zeros(2), 0.3, 1.0, True) for i, d in enumerate((3, 1, 2))]
    tr = constant_velocity_tracks(hs, [StaticObstacle(np.zeros(2), 1.0)], np.zeros(2), cfg)
    assert [t.label for t in tr] == ["human1", "human2", "static0"]
    assert np.allclose(tr[0].positions[-1], [1.0, 2.0])
    assert tr[2].radius == 1.0


def test_invalid_config():
    with pytest.raises(ValueError):
        MpcConfig(xi=0.0)
    with pytest.raises(ValueError):
        MpcConfig(q=(1, 0, 0, -1))
