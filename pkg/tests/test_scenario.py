import io
import json

import numpy as np
import pytest

from lrmpc.metrics import ZONES
from lrmpc.scenario import ScenarioConfig, initial_world, run_episode, scenario_matrix


class Const:
    def __init__(self, u=(0.0, 0.0)):
        self.u = np.array(u, float)

    def reset(self, world):
        pass

    def act(self, snap):
        return self.u, None


class Boom(Const):
    def act(self, snap):
        raise RuntimeError("kaput")


class Straight(Const):
    def act(self, snap):
        d = snap.goal - snap.robot.position
        return d / max(np.linalg.norm(d), 1e-9), {"note": "straight"}


def test_matrix_order():
    cells = scenario_matrix(ScenarioConfig())
    assert [c.name for c in cells] == ["open-aware", "open-unaware", "obstacle-aware", "obstacle-unaware"]
    assert cells[2].obstacles == ((0.0, 0.0, 1.0),) and not cells[0].obstacles
    assert [c.aware for c in cells] == [True, False, True, False]


def test_initial_world_valid_and_seeded():
    sc = ScenarioConfig(obstacles=((0, 0, 1),))
    for seed in range(20):
        w = initial_world(sc, seed)
        assert 5 <= len(w.humans) <= 30
        pos = np.array([h.position for h in w.humans])
        d = np.linalg.norm(pos[:, None] - pos[None], axis=-1) + np.eye(len(pos)) * 99
        assert d.min() >= 0.6
        assert np.all(np.linalg.norm(pos, axis=1) >= 1.3)
    a, b = initial_world(sc, 3), initial_world(sc, 3)
    assert all(np.array_equal(x.position, y.position) for x, y in zip(a.humans, b.humans))


def test_start_equals_goal():
    sc = ScenarioConfig(robot_goal=(-4.5, -4.5))
    r = run_episode(Const(), sc, 0)
    assert r.success and r.duration == 0 and r.path_length == 0


def test_zero_policy_times_out():
    r = run_episode(Const(), ScenarioConfig(min_humans=0, max_humans=0), 0)
    assert r.outcome == "timeout" and not r.success
    assert r.duration == pytest.approx(200.0)
    assert r.steps == 800


def test_policy_failure_recorded():
    r = run_episode(Boom(), ScenarioConfig(), 0)
    assert r.outcome == "policy_error" and "kaput" in r.diagnostic


def test_deterministic_and_accounting():
    sc = ScenarioConfig(max_humans=8)
    buf1, buf2 = io.StringIO(), io.StringIO()
    r1 = run_episode(Straight(), sc, 7, log=buf1)
    r2 = run_episode(Straight(), sc, 7, log=buf2)
    assert buf1.getvalue() == buf2.getvalue()
    assert r1.summary() == r2.summary()
    assert r1.duration == r1.steps * sc.dt
    for s in r1.per_human_zone_counts.values():
        assert sum(s.zone_steps[z] for z in ZONES) == s.steps == r1.steps
    recs = [json.loads(x) for x in buf1.getvalue().splitlines()]
    assert recs[0]["kind"] == "header" and recs[-1]["kind"] == "result"
    assert len(recs) == r1.steps + 2


def test_invalid_scenario():
    with pytest.raises(ValueError):
        ScenarioConfig(robot_goal=(9, 9))
    with pytest.raises(ValueError):
        ScenarioConfig(min_humans=5, max_humans=2)
