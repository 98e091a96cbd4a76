"""Scenario generation, the episode loop and episode logs."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

import numpy as np

from lrmpc.metrics import HumanZoneStats, ZoneBands, zone_of
from lrmpc.rng import child_int, generator
from lrmpc.sim import (
    HumanAgent,
    RobotState,
    SocialForceParams,
    StaticObstacle,
    WorldState,
    sense,
    step_world,
    vec,
)

LOG_VERSION = 1


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "default"
    arena_size: float = 12.0
    robot_start: tuple[float, ...] = (-4.5, -4.5)
    robot_goal: tuple[float, ...] = (4.5, 4.5)
    min_humans: int = 5
    max_humans: int = 30
    aware: bool = True
    obstacles: tuple[tuple[float, ...], ...] = ()
    dt: float = 0.25
    timeout: float = 200.0
    goal_tolerance: float = 0.3
    human_radius: float = 0.3
    human_v_max: float = 1.0
    robot_radius: float = 0.3
    robot_v_max: float = 1.0
    sensing_range: float = 5.0
    separation: float = 0.5
    sf_tau: float = 0.5
    sf_strength: float = 4.0
    sf_range: float = 0.35

    def __post_init__(self):
        if self.dt <= 0 or self.timeout <= 0:
            raise ValueError("dt and timeout must be positive")
        if not 0 <= self.min_humans <= self.max_humans:
            raise ValueError("need 0 <= min_humans <= max_humans")
        half = self.arena_size / 2
        for p in (self.robot_start, self.robot_goal):
            if len(p) != 2 or max(abs(p[0]), abs(p[1])) > half:
                raise ValueError(f"start/goal {p} outside the arena")
        for o in self.obstacles:
            if len(o) != 3 or o[2] <= 0:
                raise ValueError(f"obstacle must be (x, y, r>0), got {o}")

    @property
    def arena(self) -> tuple[float, float, float, float]:
        h = self.arena_size / 2
        return (-h, -h, h, h)


CENTER_OBSTACLE = ((0.0, 0.0, 1.0),)


def scenario_matrix(base: ScenarioConfig, obstacles=CENTER_OBSTACLE) -> list[ScenarioConfig]:
    """The obstacle x awareness grid, in a fixed order."""
    cells = []
    for has_obs in (False, True):
        for aware in (True, False):
            name = ("obstacle" if has_obs else "open") + ("-aware" if aware else "-unaware")
            cells.append(dataclasses.replace(base, name=name, aware=aware, obstacles=tuple(obstacles) if has_obs else ()))
    return cells


def _sample_free(rng, lo, hi, placed, radius, separation, obstacles, attempts=2000):
    for _ in range(attempts):
        p = rng.uniform(lo, hi)
        if all(np.linalg.norm(p - q) >= radius + r + separation for q, r in placed) and all(
            np.linalg.norm(p - o.center) >= radius + o.radius + separation for o in obstacles
        ):
            return p
    raise RuntimeError("could not place agent without overlap")


def initial_world(scenario: ScenarioConfig, seed: int) -> WorldState:
    """Seeded crowd layout: human count, starts and goals by rejection sampling."""
    rng = generator(seed, 1)
    obstacles = [StaticObstacle(vec(o[0], o[1]), float(o[2])) for o in scenario.obstacles]
    robot = RobotState(
        position=vec(scenario.robot_start),
        radius=scenario.robot_radius,
        v_max=scenario.robot_v_max,
        sensing_range=scenario.sensing_range,
    )
    goal = vec(scenario.robot_goal)
    n = int(rng.integers(scenario.min_humans, scenario.max_humans + 1))
    h = scenario.arena_size / 2
    margin = scenario.human_radius + 0.2
    lo, hi = np.array([-h + margin] * 2), np.array([h - margin] * 2)
    placed = [(robot.position, robot.radius), (goal, robot.radius)]
    goals_placed = []
    humans = []
    for i in range(n):
        p = _sample_free(rng, lo, hi, placed, scenario.human_radius, scenario.separation, obstacles)
        placed.append((p, scenario.human_radius))
        g = _sample_free(rng, lo, hi, goals_placed, scenario.human_radius, scenario.separation, obstacles)
        goals_placed.append((g, scenario.human_radius))
        humans.append(
            HumanAgent(
                id=i,
                position=p,
                velocity=np.zeros(2),
                goal=g,
                radius=scenario.human_radius,
                v_max=scenario.human_v_max,
                aware_of_robot=scenario.aware,
            )
        )
    return WorldState(
        time=0.0,
        robot=robot,
        humans=humans,
        obstacles=obstacles,
        goal=goal,
        rng_seed=child_int(seed, 2),
        dt=scenario.dt,
        goal_tolerance=scenario.goal_tolerance,
        arena=scenario.arena,
        sf=SocialForceParams(tau=scenario.sf_tau, strength=scenario.sf_strength, range=scenario.sf_range),
    )


@dataclass
class EpisodeResult:
    success: bool
    outcome: str  # reached / collision / timeout / policy_error
    duration: float
    path_length: float
    per_human_zone_counts: dict[int, HumanZoneStats]
    trajectory: list = field(default_factory=list)  # (time, robot xy, humans (n,2))
    steps: int = 0
    diagnostic: str = ""

    def summary(self) -> dict:
        return {
            "success": self.success,
            "outcome": self.outcome,
            "duration": self.duration,
            "path_length": self.path_length,
            "steps": self.steps,
            "diagnostic": self.diagnostic,
            "zones": {str(k): v.to_dict() for k, v in self.per_human_zone_counts.items()},
        }


def _human_record(h: HumanAgent) -> list:
    return [h.id, float(h.position[0]), float(h.position[1]), float(h.velocity[0]), float(h.velocity[1])]


def run_episode(policy, scenario: ScenarioConfig, seed: int, log=None, bands: ZoneBands = ZoneBands()) -> EpisodeResult:
    """sense -> policy -> step until the robot arrives, collides or times out.

    ``policy`` needs ``reset(world)`` and ``act(snapshot) -> (control, trace)``;
    ``trace`` is a JSON-ready dict or None. ``log`` is an optional text sink
    that receives one JSON record per line.
    """
    world = initial_world(scenario, seed)
    policy.reset(world)
    stats = {h.id: HumanZoneStats() for h in world.humans}
    trajectory = [(world.time, world.robot.position.copy(), np.array([h.position for h in world.humans]).reshape(-1, 2))]
    path_length = 0.0
    diagnostic = ""
    if log is not None:
        header = {
            "kind": "header",
            "version": LOG_VERSION,
            "seed": int(seed),
            "scenario": dataclasses.asdict(scenario),
            "policy": policy.describe() if hasattr(policy, "describe") else {},
        }
        log.write(json.dumps(header) + "\n")
    outcome = None
    if np.linalg.norm(world.robot.position - world.goal) <= world.goal_tolerance:
        outcome = "reached"
    while outcome is None:
        if world.time >= scenario.timeout - 1e-9:
            outcome = "timeout"
            break
        snap = sense(world)
        try:
            control, trace = policy.act(snap)
            control = np.asarray(control, dtype=float).reshape(2)
            if not np.all(np.isfinite(control)):
                raise ValueError(f"non-finite control {control!r}")
        except Exception as exc:  # noqa: BLE001 - any policy failure ends the episode
            outcome = "policy_error"
            diagnostic = f"{type(exc).__name__}: {exc}"
            break
        before = world
        world = step_world(world, control)
        path_length += math.hypot(*(world.robot.position - before.robot.position))
        for h in world.humans:
            s = stats[h.id]
            s.steps += 1
            s.zone_steps[zone_of(world.robot, h, bands)] += 1
        trajectory.append((world.time, world.robot.position.copy(), np.array([h.position for h in world.humans]).reshape(-1, 2)))
        if log is not None:
            rec = {
                "kind": "step",
                "step": before.step,
                "t": before.time,
                "robot": [float(v) for v in (*before.robot.position, *before.robot.velocity)],
                "humans": [_human_record(h) for h in before.humans],
                "control": [float(v) for v in world.robot.velocity],
                "trace": trace,
            }
            log.write(json.dumps(rec) + "\n")
        outcome = world.outcome
    result = EpisodeResult(
        success=outcome == "reached",
        outcome=outcome,
        duration=world.time,
        path_length=path_length,
        per_human_zone_counts=stats,
        trajectory=trajectory,
        steps=world.step,
        diagnostic=diagnostic,
    )
    if log is not None:
        log.write(json.dumps({"kind": "result", **result.summary()}) + "\n")
    return result
