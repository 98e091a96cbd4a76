"""Receding-horizon controller with discrete-time CBF constraints.

Dynamics are the omnidirectional single integrator x+ = x + u dt, so every
state is affine in the stacked controls. The only non-convexity is in the
barrier rows, which are linearized around the incumbent trajectory and
re-solved (sequential QP). Barrier rows carry a nonnegative slack with an
exact (L1) penalty plus a small quadratic term for strict convexity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from lrmpc.qp import QPError, solve_qp


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 8
    dt: float = 0.25
    q: tuple[float, ...] = (10.0, 0.0, 0.0, 10.0)  # terminal weight, row-major 2x2
    r: tuple[float, ...] = (1.0, 0.0, 0.0, 1.0)  # effort weight, row-major 2x2
    xi: float = 0.5
    robot_radius: float = 0.3
    human_radius: float = 0.3
    safety_margin: float = 0.05
    v_max: float = 1.0
    bounds: tuple[float, ...] = (-5.7, -5.7, 5.7, 5.7)  # xmin, ymin, xmax, ymax
    sqp_iters: int = 10
    slack_weight: float = 1e4
    slack_quadratic: float = 1.0
    polygon_sides: int = 16
    max_humans: int = 6
    step_tol: float = 1e-6

    def __post_init__(self):
        for name in ("q", "r"):
            m = np.array(getattr(self, name), dtype=float).reshape(2, 2)
            if not np.allclose(m, m.T) or np.linalg.eigvalsh(m).min() <= 0:
                raise ValueError(f"{name} must be symmetric positive definite")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError("xi must be in (0, 1]")
        if self.horizon < 1 or self.dt <= 0 or self.v_max <= 0:
            raise ValueError("horizon, dt and v_max must be positive")

    @property
    def Q(self) -> np.ndarray:
        return np.array(self.q, dtype=float).reshape(2, 2)

    @property
    def R(self) -> np.ndarray:
        return np.array(self.r, dtype=float).reshape(2, 2)

    @property
    def eta_safe(self) -> float:
        """Safety distance against a human-sized disc."""
        return self.robot_radius + self.human_radius + self.safety_margin

    def eta_for(self, radius: float) -> float:
        return self.robot_radius + radius + self.safety_margin


@dataclass
class ObstacleTrack:
    positions: np.ndarray  # (N+1, 2), one row per horizon step
    radius: float
    label: str = ""


@dataclass
class MpcSolution:
    states: np.ndarray  # (N+1, 2)
    controls: np.ndarray  # (N, 2)
    status: str  # optimal / feasible_with_slack / infeasible
    min_psi: float
    cost: float
    iterations: int = 0
    max_violation: float = 0.0
    residuals: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))  # (obstacles, N)
    merit_history: list[float] = field(default_factory=list)
    diagnostic: str = ""


def psi(x, obs_pos, eta_safe: float) -> float:
    d = np.asarray(x, dtype=float) - np.asarray(obs_pos, dtype=float)
    return float(d @ d - eta_safe * eta_safe)


def cbf_residual(x_t, x_t1, obs_t, obs_t1, xi: float, eta_safe: float) -> float:
    """psi(x_{t+1}) - psi(x_t) + xi psi(x_t); the barrier holds iff >= 0."""
    p0 = psi(x_t, obs_t, eta_safe)
    return psi(x_t1, obs_t1, eta_safe) - p0 + xi * p0


@dataclass
class MpcProblem:
    x0: np.ndarray
    target: np.ndarray
    tracks: list[ObstacleTrack]
    cfg: MpcConfig
    S: np.ndarray  # (N+1, 2, 2N): x_t = x0 + S[t] u
    H: np.ndarray
    g: np.ndarray
    A_fixed: np.ndarray  # speed polygon and state box rows over (u, s)
    b_fixed: np.ndarray
    etas: np.ndarray

    @property
    def n_controls(self) -> int:
        return 2 * self.cfg.horizon

    @property
    def n_cbf_rows(self) -> int:
        return self.cfg.horizon * len(self.tracks)


def build_problem(current, target, tracks: list[ObstacleTrack], cfg: MpcConfig = MpcConfig()) -> MpcProblem:
    """Stack cost, dynamics and box constraints for one decision step.

    ``current`` is a robot state (anything with ``.position``) or a position.
    """
    x0 = np.asarray(getattr(current, "position", current), dtype=float).reshape(2).copy()
    target = np.asarray(target, dtype=float).reshape(2)
    N, dt = cfg.horizon, cfg.dt
    for tr in tracks:
        if np.shape(tr.positions) != (N + 1, 2):
            raise ValueError(f"obstacle track must have shape ({N + 1}, 2), got {np.shape(tr.positions)}")
    nu = 2 * N
    M = N * len(tracks)
    S = np.zeros((N + 1, 2, nu))
    for t in range(1, N + 1):
        S[t] = S[t - 1]
        S[t][:, 2 * (t - 1):2 * t] = dt * np.eye(2)
    Q, R = cfg.Q, cfg.R
    H = np.zeros((nu + M, nu + M))
    H[:nu, :nu] = S[N].T @ Q @ S[N] + np.kron(np.eye(N), R)
    H[nu:, nu:] = cfg.slack_quadratic * np.eye(M)
    g = np.zeros(nu + M)
    g[:nu] = S[N].T @ Q @ (x0 - target)
    g[nu:] = cfg.slack_weight

    P = cfg.polygon_sides
    angles = (np.arange(P) + 0.5) * 2.0 * math.pi / P
    normals = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    reach = cfg.v_max * math.cos(math.pi / P)
    rows, rhs = [], []
    for t in range(N):
        blk = np.zeros((P, nu + M))
        blk[:, 2 * t:2 * t + 2] = -normals
        rows.append(blk)
        rhs.append(np.full(P, -reach))
    xmin, ymin, xmax, ymax = cfg.bounds
    lo = np.minimum([xmin, ymin], x0)
    hi = np.maximum([xmax, ymax], x0)
    for t in range(1, N + 1):
        blk = np.zeros((4, nu + M))
        blk[0:2, :nu] = S[t]
        blk[2:4, :nu] = -S[t]
        rows.append(blk)
        rhs.append(np.concatenate([lo - x0, x0 - hi]))
    slack_rows = np.zeros((M, nu + M))
    slack_rows[:, nu:] = np.eye(M)
    rows.append(slack_rows)
    rhs.append(np.zeros(M))
    etas = np.array([cfg.eta_for(tr.radius) for tr in tracks])
    return MpcProblem(x0, target, list(tracks), cfg, S, H, g, np.vstack(rows), np.concatenate(rhs), etas)


def rollout(x0: np.ndarray, controls: np.ndarray, dt: float) -> np.ndarray:
    states = np.empty((len(controls) + 1, 2))
    states[0] = x0
    for t, u in enumerate(controls):
        states[t + 1] = states[t] + u * dt
    return states


def _psi_table(prob: MpcProblem, states: np.ndarray) -> np.ndarray:
    """psi for every (obstacle, time) pair, shape (n_obs, N+1)."""
    if not prob.tracks:
        return np.zeros((0, len(states)))
    obs = np.stack([tr.positions for tr in prob.tracks])  # (k, N+1, 2)
    d = states[None, :, :] - obs
    return np.einsum("ktc,ktc->kt", d, d) - prob.etas[:, None] ** 2


def residual_table(prob: MpcProblem, states: np.ndarray) -> np.ndarray:
    ps = _psi_table(prob, states)
    return ps[:, 1:] - (1.0 - prob.cfg.xi) * ps[:, :-1]


def _cost(prob: MpcProblem, u: np.ndarray, states: np.ndarray) -> float:
    e = states[-1] - prob.target
    U = u.reshape(-1, 2)
    return 0.5 * float(e @ prob.cfg.Q @ e) + 0.5 * float(np.einsum("ti,ij,tj->", U, prob.cfg.R, U))


def _merit(prob: MpcProblem, u: np.ndarray) -> float:
    states = rollout(prob.x0, u.reshape(-1, 2), prob.cfg.dt)
    v = np.maximum(-residual_table(prob, states), 0.0).ravel()
    return _cost(prob, u, states) + prob.cfg.slack_weight * v.sum() + 0.5 * prob.cfg.slack_quadratic * float(v @ v)


def _cbf_rows(prob: MpcProblem, u_bar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Barrier rows linearized at ``u_bar``: A_cbf [u; s] >= b_cbf."""
    cfg = prob.cfg
    N, nu, M = cfg.horizon, prob.n_controls, prob.n_cbf_rows
    states = rollout(prob.x0, u_bar.reshape(-1, 2), cfg.dt)
    ps = _psi_table(prob, states)
    A = np.zeros((M, nu + M))
    b = np.zeros(M)
    row = 0
    for k, tr in enumerate(prob.tracks):
        grads = 2.0 * (states - tr.positions)  # d psi_t / d x_t
        for t in range(N):
            coef = grads[t + 1] @ prob.S[t + 1] - (1.0 - cfg.xi) * (grads[t] @ prob.S[t])
            A[row, :nu] = coef
            A[row, nu + row] = 1.0
            b[row] = -(ps[k, t + 1] - (1.0 - cfg.xi) * ps[k, t]) + coef @ u_bar
            row += 1
    return A, b


def solve(prob: MpcProblem, warm_start: MpcSolution | None = None) -> MpcSolution:
    """Sequential linearized QP with a merit line search."""
    cfg = prob.cfg
    N, nu, M = cfg.horizon, prob.n_controls, prob.n_cbf_rows
    if warm_start is not None:
        u = np.asarray(warm_start.controls, dtype=float).reshape(-1).copy()
        if not np.all(prob.A_fixed @ np.concatenate([u, np.zeros(M)]) >= prob.b_fixed - 1e-9):
            u = np.zeros(nu)
    else:
        u = np.zeros(nu)
    try:
        Hinv = np.linalg.inv(prob.H)
    except np.linalg.LinAlgError as exc:
        return _infeasible(prob, f"singular Hessian: {exc}")
    merits = [_merit(prob, u)]
    iterations = 0
    for _ in range(cfg.sqp_iters):
        iterations += 1
        Ac, bc = _cbf_rows(prob, u)
        A = np.vstack([prob.A_fixed, Ac])
        b = np.concatenate([prob.b_fixed, bc])
        s0 = np.maximum(bc - Ac[:, :nu] @ u, 0.0)
        z0 = np.concatenate([u, s0])
        n_fixed = len(prob.b_fixed)
        working = [n_fixed - M + i if s0[i] == 0.0 else n_fixed + i for i in range(M)]
        try:
            res = solve_qp(prob.H, prob.g, A, b, z0, working=working, Hinv=Hinv)
        except QPError as exc:
            return _infeasible(prob, str(exc))
        d = res.x[:nu] - u
        if np.linalg.norm(d) < cfg.step_tol:
            m = _merit(prob, res.x[:nu])
            if m <= merits[-1]:
                u = res.x[:nu]
                merits.append(m)
            break
        alpha, accepted = 1.0, False
        while alpha >= 1.0 / 64:
            trial = u + alpha * d
            m = _merit(prob, trial)
            if m <= merits[-1] + 1e-12 * max(1.0, abs(merits[-1])):
                u, accepted = trial, True
                merits.append(m)
                break
            alpha *= 0.5
        if not accepted:
            break
    controls = u.reshape(N, 2)
    states = rollout(prob.x0, controls, cfg.dt)
    res_tab = residual_table(prob, states)
    violation = float(np.maximum(-res_tab, 0.0).max(initial=0.0))
    ps = _psi_table(prob, states)
    return MpcSolution(
        states=states,
        controls=controls,
        status="optimal" if violation <= 1e-8 else "feasible_with_slack",
        min_psi=float(ps.min()) if ps.size else math.inf,
        cost=_cost(prob, u, states),
        iterations=iterations,
        max_violation=violation,
        residuals=res_tab,
        merit_history=merits,
    )


def _infeasible(prob: MpcProblem, why: str) -> MpcSolution:
    N = prob.cfg.horizon
    controls = np.zeros((N, 2))
    states = rollout(prob.x0, controls, prob.cfg.dt)
    return MpcSolution(states, controls, "infeasible", math.nan, math.nan, diagnostic=why)


def shifted(sol: MpcSolution) -> MpcSolution:
    """Warm start for the next step: drop the first control, hold zero at the end."""
    controls = np.vstack([sol.controls[1:], np.zeros((1, 2))])
    return MpcSolution(sol.states, controls, sol.status, sol.min_psi, sol.cost)


def constant_velocity_tracks(humans, obstacles, x0, cfg: MpcConfig) -> list[ObstacleTrack]:
    """Horizon tracks: nearest humans extrapolated at constant velocity, plus
    every static obstacle held in place."""
    N, dt = cfg.horizon, cfg.dt
    steps = np.arange(N + 1)[:, None] * dt
    order = sorted(humans, key=lambda h: (float(np.linalg.norm(h.position - x0)), h.id))[: cfg.max_humans]
    tracks = [ObstacleTrack(h.position[None, :] + steps * h.velocity[None, :], h.radius, f"human{h.id}") for h in order]
    for i, o in enumerate(obstacles):
        tracks.append(ObstacleTrack(np.repeat(np.asarray(o.center, dtype=float)[None, :], N + 1, axis=0), o.radius, f"static{i}"))
    return tracks
