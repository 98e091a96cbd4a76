"""Navigation policies: learned-risk MPC, heuristic-risk MPC and a social-force robot.

All three share the episode interface used by ``scenario.run_episode``:
``reset(world)``, ``act(snapshot) -> (control, trace)`` and ``describe()``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from lrmpc import mpc as mpc_mod
from lrmpc.penn import Ensemble, load_model, predict_many
from lrmpc.planner import LockstepPlanner, PlanRequest
from lrmpc.risk import (
    CandidateWaypoint,
    HeuristicParams,
    featurize_many,
    goal_dist,
    sample_candidates,
    total_risk,
)
from lrmpc.sim import ROBOT_ID, HumanAgent, SocialForceParams, clip_norm, sf_accel
from lrmpc.uncertainty import FilterThresholds, filter_candidates

KINDS = ("lr_mpc", "hr_mpc", "sf_baseline")


class PolicyConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "hr_mpc"
    model_path: str = ""
    heuristic: HeuristicParams = HeuristicParams()
    thresholds: FilterThresholds = FilterThresholds()
    mpc: mpc_mod.MpcConfig = mpc_mod.MpcConfig()
    n_ring: int = 12
    radii: tuple[float, ...] = (1.5, 3.0)
    lookahead: float = 3.0
    replan_every: int = 4
    planner_budget: int = 2000
    slack_threshold: float = 0.05

    def __post_init__(self):
        if self.kind not in KINDS:
            raise PolicyConfigError(f"unknown policy kind {self.kind!r}; expected one of {KINDS}")


def _xy(p) -> list[float]:
    return [float(p[0]), float(p[1])]


class _MpcPolicy:
    """Candidate selection (subclass hook) followed by CBF-MPC tracking."""

    kind = ""

    def __init__(self, cfg: PolicyConfig):
        self.cfg = cfg
        self.mpc_cfg = cfg.mpc
        self.planner: LockstepPlanner | None = None
        self.warm: mpc_mod.MpcSolution | None = None

    def reset(self, world) -> None:
        r = world.robot
        xmin, ymin, xmax, ymax = world.arena
        self.mpc_cfg = dataclasses.replace(
            self.cfg.mpc,
            dt=world.dt,
            v_max=r.v_max,
            robot_radius=r.radius,
            bounds=(xmin + r.radius, ymin + r.radius, xmax - r.radius, ymax - r.radius),
        )
        req = PlanRequest(r.position.copy(), world.goal.copy(), list(world.obstacles), world.arena,
                          seed=world.rng_seed, robot_radius=r.radius)
        self.planner = LockstepPlanner(req, every=self.cfg.replan_every, budget=self.cfg.planner_budget,
                                       lookahead=self.cfg.lookahead)
        self.warm = None

    def describe(self) -> dict:
        return {"kind": self.kind, "config": _config_dict(self.cfg)}

    def candidates(self, snap, guidance) -> list[CandidateWaypoint]:
        cands = sample_candidates(snap, self.cfg.n_ring, self.cfg.radii)
        cands.append(CandidateWaypoint(np.asarray(guidance, dtype=float), source="global_guidance"))
        return cands

    def select(self, snap, cands) -> tuple[int | None, dict]:
        raise NotImplementedError

    def act(self, snap):
        guidance = self.planner.guidance(snap.robot.position)
        cands = self.candidates(snap, guidance)
        idx, info = self.select(snap, cands)
        trace = {
            "t": snap.time,
            "guidance": _xy(guidance),
            "candidates": [_xy(c.position) for c in cands],
            "selected": idx,
            **info,
        }
        if idx is None:
            self.warm = None
            trace.update(target=None, mpc=None, control=[0.0, 0.0])
            return np.zeros(2), trace
        target = cands[idx].position
        x0 = snap.robot.position
        tracks = mpc_mod.constant_velocity_tracks(snap.visible_humans, snap.obstacles, x0, self.mpc_cfg)
        prob = mpc_mod.build_problem(x0, target, tracks, self.mpc_cfg)
        sol = mpc_mod.solve(prob, self.warm)
        if sol.status == "infeasible" or sol.max_violation > self.cfg.slack_threshold:
            control = np.zeros(2)
            self.warm = None
        else:
            control = clip_norm(sol.controls[0].copy(), self.mpc_cfg.v_max)
            self.warm = mpc_mod.shifted(sol)
        trace["target"] = _xy(target)
        trace["mpc"] = {
            "status": sol.status,
            "iterations": sol.iterations,
            "min_psi": None if math.isnan(sol.min_psi) else sol.min_psi,
            "cost": None if math.isnan(sol.cost) else sol.cost,
            "max_violation": sol.max_violation,
            "diagnostic": sol.diagnostic,
            "xi": self.mpc_cfg.xi,
            "x0": _xy(x0),
            "x1": _xy(sol.states[1]),
            "tracks": [
                {"label": tr.label, "p0": _xy(tr.positions[0]), "p1": _xy(tr.positions[1]),
                 "eta": float(eta)}
                for tr, eta in zip(tracks, prob.etas)
            ],
        }
        trace["control"] = _xy(control)
        return control, trace


def _goal_key(snap, cands, i):
    return goal_dist(cands[i].position, snap.goal)


class HeuristicRiskPolicy(_MpcPolicy):
    """Scores every candidate with the hand-designed risk and picks the minimum.

    With ``record=True`` each decision also stores (features, labels) for
    every candidate, which is how training data is produced.
    """

    kind = "hr_mpc"

    def __init__(self, cfg: PolicyConfig = PolicyConfig(kind="hr_mpc"), record: bool = False):
        super().__init__(cfg)
        self.record = record
        self.samples: list[tuple[np.ndarray, np.ndarray]] = []

    def select(self, snap, cands):
        risks = [total_risk(snap, c.position, self.cfg.heuristic) for c in cands]
        for c, r in zip(cands, risks):
            c.risk = r.total
        if self.record:
            X = featurize_many(snap, np.array([c.position for c in cands]))
            y = np.clip([r.total for r in risks], 0.0, self.cfg.heuristic.risk_max)
            self.samples.append((X, y))
        idx = min(range(len(cands)), key=lambda i: (risks[i].total, _goal_key(snap, cands, i), i))
        return idx, {"risks": [r.total for r in risks]}


class LearnedRiskPolicy(_MpcPolicy):
    """Ensemble risk prediction, uncertainty filters, then minimum-risk selection.

    If every candidate is filtered out the fallback chain is: the guidance
    waypoint when its heuristic risk is below the maximum, else the lowest
    heuristic-risk candidate below the maximum, else stop.
    """

    kind = "lr_mpc"

    def __init__(self, cfg: PolicyConfig, model: Ensemble | None = None):
        super().__init__(cfg)
        if model is None:
            if not cfg.model_path:
                raise PolicyConfigError("lr_mpc needs a model path")
            model = load_model(cfg.model_path)
        self.model = model

    def select(self, snap, cands):
        X = featurize_many(snap, np.array([c.position for c in cands]))
        preds = predict_many(self.model, X)
        report = filter_candidates(cands, preds, self.cfg.thresholds, goal=snap.goal)
        for c, s in zip(cands, report.scores):
            c.risk = s.mixture_mean
            c.passed_filters = s.passed
        info = {"filter": report.to_dict(), "fallback": None}
        if report.selected is not None:
            return report.selected, info
        rmax = self.cfg.heuristic.risk_max
        g = len(cands) - 1
        if total_risk(snap, cands[g].position, self.cfg.heuristic).total < rmax:
            info["fallback"] = "guidance"
            return g, info
        risks = [total_risk(snap, c.position, self.cfg.heuristic).total for c in cands]
        best = min(range(len(cands)), key=lambda i: (risks[i], _goal_key(snap, cands, i), i))
        if risks[best] < rmax:
            info["fallback"] = "min_heuristic"
            return best, info
        info["fallback"] = "stop"
        return None, info


class SocialForcePolicy:
    """The robot driven by the same social-force law as the crowd, toward its goal."""

    kind = "sf_baseline"

    def __init__(self, cfg: PolicyConfig = PolicyConfig(kind="sf_baseline"), params: SocialForceParams | None = None):
        self.cfg = cfg
        self.params = params
        self.dt = 0.25

    def reset(self, world) -> None:
        self.dt = world.dt
        if self.params is None:
            self.params = world.sf

    def describe(self) -> dict:
        return {"kind": self.kind, "config": _config_dict(self.cfg)}

    def act(self, snap):
        r = snap.robot
        agent = HumanAgent(id=ROBOT_ID, position=r.position, velocity=r.velocity, goal=snap.goal,
                           radius=r.radius, v_max=r.v_max, aware_of_robot=False)
        acc = sf_accel(agent, snap.visible_humans, snap.obstacles, None, self.params)
        control = clip_norm(r.velocity + acc * self.dt, r.v_max)
        return control, {"t": snap.time, "control": _xy(control)}


def _config_dict(cfg: PolicyConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(d: dict) -> PolicyConfig:
    d = dict(d)
    d["heuristic"] = HeuristicParams(**d.get("heuristic", {}))
    d["thresholds"] = FilterThresholds(**d.get("thresholds", {}))
    m = {k: tuple(v) if isinstance(v, list) else v for k, v in d.get("mpc", {}).items()}
    d["mpc"] = mpc_mod.MpcConfig(**m)
    d["radii"] = tuple(d.get("radii", (1.5, 3.0)))
    return PolicyConfig(**d)


def make_policy(cfg: PolicyConfig, model: Ensemble | None = None, record: bool = False):
    if cfg.kind == "lr_mpc":
        return LearnedRiskPolicy(cfg, model)
    if cfg.kind == "hr_mpc":
        return HeuristicRiskPolicy(cfg, record=record)
    return SocialForcePolicy(cfg)


def policy_from_description(desc: dict, model: Ensemble | None = None):
    """Rebuild a policy from the ``describe()`` record stored in a log header."""
    return make_policy(config_from_dict(desc["config"]), model)
