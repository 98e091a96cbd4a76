"""Discrete-time crowd world: social-force humans and a single-integrator robot.

Positions and velocities are float64 numpy arrays of shape (2,). World
transitions never mutate their input; ``step_world`` returns a new state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from lrmpc.rng import generator

GOLDEN = 0.6180339887498949
ROBOT_ID = -1


class InvalidInput(ValueError):
    pass


def vec(x, y=None) -> np.ndarray:
    if y is None:
        return np.asarray(x, dtype=float).reshape(2).copy()
    return np.array([x, y], dtype=float)


@dataclass
class RobotState:
    position: np.ndarray
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    radius: float = 0.3
    v_max: float = 1.0
    sensing_range: float = 5.0


@dataclass
class HumanAgent:
    id: int
    position: np.ndarray
    velocity: np.ndarray
    goal: np.ndarray
    radius: float = 0.3
    v_max: float = 1.0
    aware_of_robot: bool = True
    goal_count: int = 0


@dataclass(frozen=True)
class StaticObstacle:
    center: np.ndarray
    radius: float


@dataclass(frozen=True)
class SocialForceParams:
    tau: float = 0.5
    strength: float = 4.0  # A, m/s^2
    range: float = 0.35  # B, m
    goal_reached: float = 0.3


@dataclass
class WorldState:
    time: float
    robot: RobotState
    humans: list[HumanAgent]
    obstacles: list[StaticObstacle]
    goal: np.ndarray
    rng_seed: int
    dt: float = 0.25
    step: int = 0
    goal_tolerance: float = 0.3
    arena: tuple[float, float, float, float] = (-6.0, -6.0, 6.0, 6.0)
    sf: SocialForceParams = field(default_factory=SocialForceParams)
    outcome: str | None = None  # None while running, else reached / collision / timeout


@dataclass
class Snapshot:
    robot: RobotState
    visible_humans: list[HumanAgent]
    obstacles: list[StaticObstacle]
    goal: np.ndarray
    time: float


def tiebreak_axis(low_id: int) -> np.ndarray:
    """Deterministic unit axis used when two centers coincide."""
    angle = 2.0 * math.pi * ((low_id * GOLDEN) % 1.0)
    return np.array([math.cos(angle), math.sin(angle)])


def _away(p: np.ndarray, q: np.ndarray, own_id: int, other_id: int | None) -> tuple[np.ndarray, float]:
    """Unit vector from q to p and the center distance."""
    d = p - q
    dist = math.hypot(d[0], d[1])
    if dist > 0.0:
        return d / dist, dist
    if other_id is None:
        return tiebreak_axis(own_id), 0.0
    axis = tiebreak_axis(min(own_id, other_id))
    return (axis if own_id < other_id else -axis), 0.0


def desired_velocity(position: np.ndarray, goal: np.ndarray, v_max: float) -> np.ndarray:
    d = goal - position
    n = math.hypot(d[0], d[1])
    if n < 1e-12:
        return np.zeros(2)
    return d / n * v_max


def sf_accel(
    agent: HumanAgent,
    others: list[HumanAgent],
    obstacles: list[StaticObstacle],
    robot: RobotState | None,
    params: SocialForceParams = SocialForceParams(),
) -> np.ndarray:
    """Social-force acceleration: goal relaxation plus exponential repulsion.

    Repulsion magnitude is ``A * exp(-surface_distance / B)``. The robot
    only repels agents flagged ``aware_of_robot``.
    """
    v_des = desired_velocity(agent.position, agent.goal, agent.v_max)
    acc = (v_des - agent.velocity) / params.tau
    for other in others:
        n, dist = _away(agent.position, other.position, agent.id, other.id)
        acc = acc + params.strength * math.exp(-(dist - agent.radius - other.radius) / params.range) * n
    for obs in obstacles:
        n, dist = _away(agent.position, obs.center, agent.id, None)
        acc = acc + params.strength * math.exp(-(dist - agent.radius - obs.radius) / params.range) * n
    if robot is not None and agent.aware_of_robot:
        n, dist = _away(agent.position, robot.position, agent.id, ROBOT_ID)
        acc = acc + params.strength * math.exp(-(dist - agent.radius - robot.radius) / params.range) * n
    return acc


def clip_norm(v: np.ndarray, limit: float) -> np.ndarray:
    n = math.hypot(v[0], v[1])
    if n > limit:
        return v * (limit / n)
    return v


def resample_goal(world: WorldState, human: HumanAgent) -> np.ndarray:
    """Fresh random goal for a human, a pure function of (seed, id, count)."""
    rng = generator(world.rng_seed, 7, human.id, human.goal_count + 1)
    xmin, ymin, xmax, ymax = world.arena
    margin = human.radius + 0.2
    for _ in range(1000):
        g = rng.uniform([xmin + margin, ymin + margin], [xmax - margin, ymax - margin])
        if all(np.linalg.norm(g - o.center) > o.radius + human.radius + 0.5 for o in world.obstacles):
            return g
    return human.goal.copy()


def robot_collides(robot: RobotState, humans: list[HumanAgent], obstacles: list[StaticObstacle]) -> bool:
    for h in humans:
        if np.linalg.norm(robot.position - h.position) < robot.radius + h.radius:
            return True
    for o in obstacles:
        if np.linalg.norm(robot.position - o.center) < robot.radius + o.radius:
            return True
    return False


def step_world(world: WorldState, robot_cmd) -> WorldState:
    """Advance one step of ``world.dt`` under robot velocity command ``robot_cmd``."""
    cmd = np.asarray(robot_cmd, dtype=float).reshape(2)
    if not np.all(np.isfinite(cmd)):
        raise InvalidInput(f"robot command must be finite, got {cmd!r}")
    cmd = clip_norm(cmd, world.robot.v_max)
    dt = world.dt

    humans = []
    for i, h in enumerate(world.humans):
        others = world.humans[:i] + world.humans[i + 1:]
        acc = sf_accel(h, others, world.obstacles, world.robot, world.sf)
        vel = clip_norm(h.velocity + acc * dt, h.v_max)
        pos = h.position + vel * dt
        humans.append(replace(h, position=pos, velocity=vel))
    for i, h in enumerate(humans):
        if np.linalg.norm(h.position - h.goal) <= world.sf.goal_reached:
            humans[i] = replace(h, goal=resample_goal(world, h), goal_count=h.goal_count + 1)

    robot = replace(world.robot, position=world.robot.position + cmd * dt, velocity=cmd.copy())
    step = world.step + 1
    outcome = world.outcome
    if outcome is None:
        if robot_collides(robot, humans, world.obstacles):
            outcome = "collision"
        elif np.linalg.norm(robot.position - world.goal) <= world.goal_tolerance:
            outcome = "reached"
    return replace(world, time=step * dt, step=step, robot=robot, humans=humans, outcome=outcome)


def sense(world: WorldState) -> Snapshot:
    """Humans within sensing range; static obstacles are always known."""
    r = world.robot
    visible = [
        replace(h, position=h.position.copy(), velocity=h.velocity.copy())
        for h in world.humans
        if np.linalg.norm(h.position - r.position) <= r.sensing_range
    ]
    return Snapshot(
        robot=replace(r, position=r.position.copy(), velocity=r.velocity.copy()),
        visible_humans=visible,
        obstacles=list(world.obstacles),
        goal=world.goal.copy(),
        time=world.time,
    )
