import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lrmpc.sim import HumanAgent, RobotState, Snapshot, StaticObstacle

settings.register_profile("repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")


def make_snapshot(robot=(0.0, 0.0), robot_vel=(0.0, 0.0), goal=(4.5, 4.5), humans=(), obstacles=(), time=0.0):
    """humans: iterable of (x, y, vx, vy); obstacles: iterable of (x, y, r)."""
    hs = [
        HumanAgent(id=i, position=np.array(h[:2], float), velocity=np.array(h[2:4], float),
                   goal=np.zeros(2), radius=0.3, v_max=1.0, aware_of_robot=True)
        for i, h in enumerate(humans)
    ]
    obs = [StaticObstacle(np.array(o[:2], float), float(o[2])) for o in obstacles]
    return Snapshot(RobotState(np.array(robot, float), np.array(robot_vel, float)), hs, obs, np.array(goal, float), time)


def random_snapshot(rng, n_humans=None, with_obstacle=None):
    n = int(rng.integers(0, 9)) if n_humans is None else n_humans
    humans = [(*rng.uniform(-5, 5, 2), *rng.uniform(-1, 1, 2)) for _ in range(n)]
    obs = [(*rng.uniform(-3, 3, 2), rng.uniform(0.3, 1.2))] if (with_obstacle if with_obstacle is not None else rng.random() < 0.5) else []
    return make_snapshot(rng.uniform(-4, 4, 2), rng.uniform(-1, 1, 2) * 0.7, rng.uniform(-5, 5, 2), humans, obs)


@pytest.fixture
def snapshot_factory():
    return make_snapshot


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record a one-line verdict for an acceptance criterion, then assert it."""

    def _report(n: int, ok: bool, detail: str):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
