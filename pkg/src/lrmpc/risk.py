"""Heuristic waypoint risk, candidate sampling and risk features."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NO_OBSTACLE_DISTANCE = 1e6
FEATURE_DIM = 39
K_HUMANS = 5
DISTANCE_CAP = 10.0


@dataclass(frozen=True)
class HeuristicParams:
    lambda_dist: float = 1.0
    eps_d: float = 0.1
    lambda_dir: float = 2.0
    samples_per_segment: int = 8
    risk_max: float = 100.0

    def __post_init__(self):
        if min(self.lambda_dist, self.eps_d, self.lambda_dir, self.risk_max) <= 0:
            raise ValueError("heuristic parameters must be positive")
        if self.samples_per_segment < 2:
            raise ValueError("samples_per_segment must be >= 2")


@dataclass
class CandidateWaypoint:
    position: np.ndarray
    source: str = "local_sample"  # or "global_guidance"
    risk: float | None = None
    passed_filters: bool | None = None


@dataclass(frozen=True)
class RiskBreakdown:
    path: float
    orientation: float
    goal_dist: float
    dir_penalty: float
    total: float
    collision: bool = False


def sample_candidates(snap, n_ring: int = 12, radii=(1.5, 3.0)) -> list[CandidateWaypoint]:
    """Concentric rings of ``n_ring`` points around the robot, angle 0 first."""
    if any(r > snap.robot.sensing_range for r in radii):
        raise ValueError("candidate radius beyond sensing range")
    base = snap.robot.position
    out = []
    for r in radii:
        for k in range(n_ring):
            a = 2.0 * math.pi * k / n_ring
            out.append(CandidateWaypoint(base + r * np.array([math.cos(a), math.sin(a)])))
    return out


def segment_points(start: np.ndarray, end: np.ndarray, n: int) -> np.ndarray:
    """``n`` evenly spaced points on (start, end], endpoint included."""
    s = np.arange(1, n + 1)[:, None] / n
    return start[None, :] + s * (end - start)[None, :]


def _entities(snap) -> tuple[np.ndarray, np.ndarray]:
    centers = [h.position for h in snap.visible_humans] + [o.center for o in snap.obstacles]
    radii = [h.radius for h in snap.visible_humans] + [o.radius for o in snap.obstacles]
    return np.array(centers, dtype=float).reshape(-1, 2), np.array(radii, dtype=float)


def surface_distances(points: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest disc surface (negative inside)."""
    if len(centers) == 0:
        return np.full(len(points), NO_OBSTACLE_DISTANCE)
    d = np.linalg.norm(points[:, None, :] - centers[None, :, :], axis=-1) - radii[None, :]
    return d.min(axis=1)


def path_risk(snap, p, params: HeuristicParams = HeuristicParams()) -> float:
    """Max inverse-distance risk over the sampled segment; RISK_MAX if it hits a disc."""
    pts = segment_points(snap.robot.position, np.asarray(p, dtype=float), params.samples_per_segment)
    d = surface_distances(pts, *_entities(snap))
    if np.any(d <= 0.0):
        return params.risk_max
    return float(np.max(params.lambda_dist / (d + params.eps_d)))


def orientation_risk(snap, p, params: HeuristicParams = HeuristicParams()) -> float:
    """Sum over segment points of exp(-cos) of the angle between the robot's
    heading toward ``p`` and the nearest visible human's velocity.

    A standing human counts as perpendicular (cos = 0).
    """
    p = np.asarray(p, dtype=float)
    move = p - snap.robot.position
    norm = math.hypot(move[0], move[1])
    if norm < 1e-12 or not snap.visible_humans:
        return 0.0
    heading = move / norm
    pts = segment_points(snap.robot.position, p, params.samples_per_segment)
    pos = np.array([h.position for h in snap.visible_humans])
    vel = np.array([h.velocity for h in snap.visible_humans])
    nearest = np.argmin(np.linalg.norm(pts[:, None, :] - pos[None, :, :], axis=-1), axis=1)
    v = vel[nearest]
    speed = np.linalg.norm(v, axis=1)
    cos = np.where(speed > 1e-12, (v @ heading) / np.maximum(speed, 1e-300), 0.0)
    return float(np.sum(np.exp(-cos)))


def goal_dist(p, goal) -> float:
    d = np.asarray(goal, dtype=float) - np.asarray(p, dtype=float)
    return math.hypot(d[0], d[1])


def dir_penalty(robot_pos, p, goal, lambda_dir: float) -> float:
    a = np.asarray(p, dtype=float) - robot_pos
    b = np.asarray(goal, dtype=float) - robot_pos
    na, nb = math.hypot(a[0], a[1]), math.hypot(b[0], b[1])
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    cos = min(1.0, max(-1.0, float(a @ b) / (na * nb)))
    return lambda_dir * (1.0 - cos)


def total_risk(snap, p, params: HeuristicParams = HeuristicParams()) -> RiskBreakdown:
    p = np.asarray(p, dtype=float)
    gp = path_risk(snap, p, params)
    gori = orientation_risk(snap, p, params)
    gg = goal_dist(p, snap.goal)
    gdir = dir_penalty(snap.robot.position, p, snap.goal, params.lambda_dir)
    collision = gp >= params.risk_max
    total = params.risk_max if collision else gp + gori + gg + gdir
    return RiskBreakdown(gp, gori, gg, gdir, total, collision)


def _obstacle_distance(points: np.ndarray, obstacles) -> np.ndarray:
    if not obstacles:
        return np.full(len(points), DISTANCE_CAP)
    c = np.array([o.center for o in obstacles])
    r = np.array([o.radius for o in obstacles])
    return np.minimum(surface_distances(points, c, r), DISTANCE_CAP)


def goal_frame(goal_offset) -> np.ndarray:
    """Rotation taking ``goal_offset`` onto the +x axis (identity at the goal)."""
    g = np.asarray(goal_offset, dtype=float)
    n = float(np.hypot(g[0], g[1]))
    if n < 1e-12:
        return np.eye(2)
    c, s = g / n
    return np.array([[c, s], [-s, c]])


def path_clearance(start, ends, centers, radii) -> np.ndarray:
    """Distance from each segment start->ends[i] to each disc surface, shape (n, m)."""
    d = np.asarray(ends, dtype=float) - start                       # (n, 2)
    rel = np.asarray(centers, dtype=float) - start                  # (m, 2)
    L2 = np.einsum("ij,ij->i", d, d)
    t = np.where(L2[:, None] > 0, (d @ rel.T) / np.maximum(L2, 1e-300)[:, None], 0.0)
    t = np.clip(t, 0.0, 1.0)
    gap = t[:, :, None] * d[:, None, :] - rel[None, :, :]
    return np.linalg.norm(gap, axis=-1) - np.asarray(radii, dtype=float)[None, :]


def featurize_many(snap, points) -> np.ndarray:
    """Feature rows for several candidates sharing one snapshot, shape (n, 39).

    Layout: robot velocity (2), goal offset from robot (2), candidate offset
    (2), candidate-goal distance (1), static-obstacle clearance from robot and
    from candidate (2), then the 5 visible humans nearest to the straight path
    from robot to candidate, sorted by that clearance, each as relative
    position (2), relative velocity (2), path clearance from the human's disc
    (1), valid flag (1). Choosing humans per candidate path matters: the
    humans that block a 3 m candidate are often not the ones closest to the
    robot.

    Vectors are expressed in a robot-centred frame whose x axis points at the
    goal, so the goal offset is always (|goal - robot|, 0). The risk labels
    are invariant to rotating the whole scene, and this frame removes that
    nuisance direction from the inputs.
    """
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    robot = snap.robot
    n = len(pts)
    out = np.zeros((n, FEATURE_DIM))
    rot = goal_frame(snap.goal - robot.position)
    out[:, 0:2] = rot @ robot.velocity
    out[:, 2:4] = rot @ (snap.goal - robot.position)
    out[:, 4:6] = (pts - robot.position) @ rot.T
    out[:, 6] = np.linalg.norm(snap.goal[None, :] - pts, axis=1)
    out[:, 7] = _obstacle_distance(robot.position[None, :], snap.obstacles)[0]
    out[:, 8] = _obstacle_distance(pts, snap.obstacles)
    if snap.visible_humans:
        hp = np.array([h.position for h in snap.visible_humans])
        rel = (hp - robot.position) @ rot.T
        relv = (np.array([h.velocity for h in snap.visible_humans]) - robot.velocity) @ rot.T
        clear = path_clearance(robot.position, pts, hp, np.array([h.radius for h in snap.visible_humans]))
        for row in range(n):
            order = np.lexsort((rel[:, 1], rel[:, 0], clear[row]))[:K_HUMANS]
            for slot, i in enumerate(order):
                c = 9 + 6 * slot
                out[row, c:c + 2] = rel[i]
                out[row, c + 2:c + 4] = relv[i]
                out[row, c + 4] = clear[row, i]
                out[row, c + 5] = 1.0
    return out


def featurize(snap, p) -> np.ndarray:
    return featurize_many(snap, np.asarray(p, dtype=float)[None, :])[0]
