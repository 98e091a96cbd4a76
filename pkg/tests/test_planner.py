import math
import threading
import time

import numpy as np
import pytest

from lrmpc.planner import (
    GlobalPath,
    LockstepPlanner,
    NoPathError,
    PlannerService,
    PlanRequest,
    current_guidance,
    plan,
)
from lrmpc.sim import StaticObstacle

BOUNDS = (-6.0, -6.0, 6.0, 6.0)
START, GOAL = np.array([-4.5, -4.5]), np.array([4.5, 4.5])
CENTER = [StaticObstacle(np.zeros(2), 1.0)]


def seg_clearance(a, b, c):
    d = b - a
    t = np.clip((c - a) @ d / (d @ d), 0, 1)
    return np.linalg.norm(a + t * d - c)


def test_empty_map_near_straight():
    p = plan(PlanRequest(START, GOAL, [], BOUNDS))
    assert p.length <= 1.05 * math.hypot(9, 9)
    assert np.array_equal(p.waypoints[0], START) and np.array_equal(p.waypoints[-1], GOAL)


def test_central_disc_detour():
    p = plan(PlanRequest(START, GOAL, CENTER, BOUNDS, seed=4))
    assert p.length > math.hypot(9, 9)
    assert np.all(np.linalg.norm(p.waypoints, axis=1) >= 1.3 - 1e-12)
    for a, b in zip(p.waypoints[:-1], p.waypoints[1:]):
        assert seg_clearance(a, b, np.zeros(2)) >= 1.3 - 1e-9


def test_goal_inside_obstacle():
    with pytest.raises(NoPathError):
        plan(PlanRequest(START, np.array([0.2, 0.1]), CENTER, BOUNDS))


def test_deterministic():
    a = plan(PlanRequest(START, GOAL, CENTER, BOUNDS, seed=11))
    b = plan(PlanRequest(START, GOAL, CENTER, BOUNDS, seed=11))
    assert np.array_equal(a.waypoints, b.waypoints)


def test_budget_exhaustion():
    wall = [StaticObstacle(np.array([x, 0.0]), 0.6) for x in np.arange(-6, 6.01, 0.8)]
    with pytest.raises(NoPathError):
        plan(PlanRequest(START, GOAL, wall, BOUNDS), budget=200)


def test_random_maps_success_rate():
    ok = tried = 0
    rng = np.random.default_rng(0)
    while tried < 100:
        obs = [StaticObstacle(rng.uniform(-4, 4, 2), rng.uniform(0.3, 1.2)) for _ in range(int(rng.integers(1, 7)))]
        if any(np.linalg.norm(p - o.center) < o.radius + 0.3 for o in obs for p in (START, GOAL)):
            continue
        tried += 1
        try:
            path = plan(PlanRequest(START, GOAL, obs, BOUNDS, seed=tried))
        except NoPathError:
            continue
        ok += 1
        for a, b in zip(path.waypoints[:-1], path.waypoints[1:]):
            for o in obs:
                assert seg_clearance(a, b, o.center) >= o.radius + 0.3 - 1e-9
    assert ok >= 99


def test_guidance_examples():
    path = GlobalPath(np.array([[0.0, 0.0], [10.0, 0.0]]))
    assert np.allclose(current_guidance(path, [0, 0], 3), [3, 0])
    assert np.allclose(current_guidance(path, [8.5, 0.2], 3), [10, 0])
    # far off-path: measured from the projection, never behind it
    assert np.allclose(current_guidance(path, [4, 7], 3), [7, 0])
    assert np.allclose(current_guidance(path, [-5, 0], 3), [3, 0])


def test_guidance_on_polyline():
    path = GlobalPath(np.array([[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]]))
    assert np.allclose(current_guidance(path, [1, 0], 2), [2, 1])


def test_guidance_single_point():
    assert np.allclose(current_guidance(GlobalPath(np.array([[1.0, 2.0]])), [0, 0], 3), [1, 2])


def test_service_publishes_increasing_stamps():
    svc = PlannerService(PlanRequest(START, GOAL, CENTER, BOUNDS, seed=1))
    svc.update_position(START)
    stamps = []
    for k in range(4):
        svc.update_position(START + 0.3 * k)
        assert svc.step_once()
        stamps.append(svc.latest().stamp)
    assert stamps == sorted(stamps) and len(set(stamps)) == 4


def test_service_degraded_keeps_last_path():
    calls = {"n": 0}

    def flaky(req, budget):
        calls["n"] += 1
        if calls["n"] > 1:
            raise NoPathError("blocked")
        return plan(req, budget)

    svc = PlannerService(PlanRequest(START, GOAL, [], BOUNDS), plan_fn=flaky)
    svc.update_position(START)
    svc.step_once()
    first = svc.latest()
    for _ in range(3):
        svc.step_once()
    assert svc.degraded and svc.latest() is first


def test_control_loop_never_blocks_on_planning():
    release = threading.Event()

    def slow(req, budget):
        release.wait(5)
        return GlobalPath(np.array([req.start, req.goal]))

    svc = PlannerService(PlanRequest(START, GOAL, [], BOUNDS), plan_fn=slow)
    svc.update_position(START)
    svc.start()
    try:
        seen = []
        for _ in range(3):  # three control periods while the planner is busy
            t0 = time.perf_counter()
            seen.append(svc.latest())
            assert time.perf_counter() - t0 < 0.01
        assert seen == [None, None, None]
        release.set()
        deadline = time.time() + 5
        while svc.latest() is None and time.time() < deadline:
            time.sleep(0.01)
        assert svc.latest().stamp >= 1
    finally:
        release.set()
        svc.stop()


def test_lockstep_replans_on_schedule():
    lp = LockstepPlanner(PlanRequest(START, GOAL, CENTER, BOUNDS, seed=3), every=2)
    lp.guidance(START)
    lp.guidance(START)
    lp.guidance(START)
    assert lp.stamp == 2
