import io
import json

import numpy as np
import pytest
from conftest import make_snapshot, random_snapshot
from oracles import risk_oracle, snapshot_args

from lrmpc.policy import (
    HeuristicRiskPolicy,
    LearnedRiskPolicy,
    PolicyConfig,
    PolicyConfigError,
    SocialForcePolicy,
    config_from_dict,
    make_policy,
)
from lrmpc.risk import FEATURE_DIM, total_risk
from lrmpc.scenario import ScenarioConfig, initial_world, run_episode


class StubModel:
    """Fixed per-candidate member means and variances."""

    feature_dim = FEATURE_DIM

    def __init__(self, means, var=1.0):
        self.means = np.asarray(means, float)
        self.var = var

    def predict_arrays(self, X):
        n = len(X)
        mus = np.broadcast_to(self.means[:, :n] if self.means.ndim == 2 else self.means[:n], (3, n)).copy()
        return mus, np.full_like(mus, self.var)


def ready(policy, snap, scenario=ScenarioConfig()):
    world = initial_world(scenario, 0)
    world.robot.position = snap.robot.position.copy()
    world.goal = snap.goal.copy()
    world.obstacles = list(snap.obstacles)
    policy.reset(world)
    return policy


def test_hr_selection_matches_oracle_scores():
    rng = np.random.default_rng(5)
    p = PolicyConfig().heuristic
    for _ in range(15):
        snap = random_snapshot(rng)
        pol = ready(HeuristicRiskPolicy(), snap)
        cands = pol.candidates(snap, snap.goal)
        idx, info = pol.select(snap, cands)
        robot, hs, obs, goal = snapshot_args(snap)
        scores = [risk_oracle(robot, hs, obs, goal, tuple(c.position), p.lambda_dist, p.eps_d, p.lambda_dir, p.samples_per_segment, p.risk_max)
                  for c in cands]
        assert np.allclose(info["risks"], scores, atol=1e-9)
        assert scores[idx] == pytest.approx(min(scores), abs=1e-9)


def test_hr_never_selects_colliding_candidate():
    # humans on every ring candidate but one
    snap = make_snapshot(goal=(4.0, 0.0), humans=[(1.5, 0.0, 0, 0), (3.0, 0.0, 0, 0)])
    pol = ready(HeuristicRiskPolicy(), snap)
    cands = pol.candidates(snap, snap.goal)
    idx, info = pol.select(snap, cands)
    assert info["risks"][idx] < 100.0
    assert np.linalg.norm(cands[idx].position - np.array([1.5, 0.0])) > 0.3


def test_empty_world_heads_to_goal():
    snap = make_snapshot(goal=(4.5, 0.0))
    pol = ready(HeuristicRiskPolicy(), snap)
    u, trace = pol.act(snap)
    assert trace["candidates"][trace["selected"]][1] == pytest.approx(0.0, abs=1e-9)
    assert u[0] > 0.9 and abs(u[1]) < 1e-6


def test_record_collects_features():
    snap = make_snapshot(humans=[(1.0, 1.0, 0, 0)])
    pol = ready(HeuristicRiskPolicy(record=True), snap)
    pol.act(snap)
    X, y = pol.samples[0]
    assert X.shape == (25, FEATURE_DIM) and y.shape == (25,)
    assert np.all((0 <= y) & (y <= 100))


def test_lr_selects_lowest_mean():
    snap = make_snapshot(goal=(4.5, 0.0))
    means = np.full(25, 30.0)
    means[7] = 5.0
    pol = ready(LearnedRiskPolicy(PolicyConfig(kind="lr_mpc"), StubModel(means)), snap)
    idx, info = pol.select(snap, pol.candidates(snap, snap.goal))
    assert idx == 7 and info["fallback"] is None


def test_lr_fallback_to_guidance_then_stop():
    snap = make_snapshot(goal=(4.5, 0.0))
    pol = ready(LearnedRiskPolicy(PolicyConfig(kind="lr_mpc"), StubModel(np.full(25, 95.0))), snap)
    cands = pol.candidates(snap, snap.goal)
    idx, info = pol.select(snap, cands)
    assert info["fallback"] == "guidance" and idx == 24

    # robot boxed in by humans on every candidate path
    ring = [(r * np.cos(a), r * np.sin(a), 0, 0) for r in (0.75, 1.5, 3.0) for a in np.linspace(0, 2 * np.pi, 24, endpoint=False)]
    snap = make_snapshot(goal=(4.5, 0.0), humans=ring)
    pol = ready(LearnedRiskPolicy(PolicyConfig(kind="lr_mpc"), StubModel(np.full(25, 95.0))), snap)
    u, trace = pol.act(snap)
    assert trace["fallback"] == "stop" and trace["selected"] is None
    assert np.all(u == 0)


def test_lr_requires_model():
    with pytest.raises(PolicyConfigError):
        LearnedRiskPolicy(PolicyConfig(kind="lr_mpc"))
    with pytest.raises(PolicyConfigError):
        PolicyConfig(kind="bogus")


def test_sf_policy_head_on_and_speed_limit():
    snap = make_snapshot(goal=(4.5, 0.0))
    pol = SocialForcePolicy()
    pol.reset(initial_world(ScenarioConfig(), 0))
    u, _ = pol.act(snap)
    assert u[0] > 0 and abs(u[1]) < 1e-12 and np.linalg.norm(u) <= 1.0 + 1e-12
    snap = make_snapshot(robot_vel=(1.0, 0.0), goal=(4.5, 0.0), humans=[(0.8, 0.05, -1.0, 0.0)])
    u, _ = pol.act(snap)
    assert u[0] < 1.0 and u[1] < 0


@pytest.mark.parametrize("kind", ["hr_mpc", "sf_baseline"])
def test_controls_bounded_in_episode(kind):
    sc = ScenarioConfig(min_humans=6, max_humans=6, timeout=15.0, obstacles=((0, 0, 1),), aware=False)
    pol = make_policy(PolicyConfig(kind=kind))
    buf = io.StringIO()
    r = run_episode(pol, sc, 3, log=buf)
    assert r.steps > 0
    steps = [json.loads(x) for x in buf.getvalue().splitlines()[1:-1]]
    assert len(steps) == r.steps
    for rec in steps:
        assert np.hypot(*rec["control"]) <= 1.0 + 1e-9


def test_config_dict_roundtrip():
    cfg = PolicyConfig(kind="hr_mpc", radii=(1.0, 2.0))
    pol = make_policy(cfg)
    assert config_from_dict(pol.describe()["config"]) == cfg


def test_heuristic_risk_helper_consistent():
    snap = make_snapshot(humans=[(1.0, 1.0, 0.2, 0)])
    r = total_risk(snap, np.array([1.5, 0.0]))
    assert r.total >= 0
