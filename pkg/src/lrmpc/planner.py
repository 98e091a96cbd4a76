"""Multi-tree RRT global planner over the static map and its replanning service.

Besides the trees rooted at start and goal, a few extra subtrees are seeded
at random free points. Every tree grows toward a shared goal-biased sample
each iteration; trees whose nodes come within connection range merge. A
path exists once start and goal share a component.
"""

from __future__ import annotations

import heapq
import math
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from lrmpc.rng import generator


class NoPathError(RuntimeError):
    pass


@dataclass
class PlanRequest:
    start: np.ndarray
    goal: np.ndarray
    obstacles: list  # StaticObstacle-like: .center, .radius
    bounds: tuple[float, float, float, float]
    seed: int = 0
    robot_radius: float = 0.3


@dataclass
class GlobalPath:
    waypoints: np.ndarray  # (k, 2), start first, goal last
    stamp: int = 0

    @property
    def length(self) -> float:
        return float(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1).sum())


@dataclass(frozen=True)
class PlannerParams:
    subtrees: int = 4
    goal_bias: float = 0.1
    step: float = 0.5
    connect_radius: float = 1.0
    shortcut_attempts: int = 50


class _Map:
    def __init__(self, req: PlanRequest):
        self.centers = np.array([o.center for o in req.obstacles], dtype=float).reshape(-1, 2)
        self.radii = np.array([o.radius + req.robot_radius for o in req.obstacles], dtype=float)
        m = req.robot_radius
        xmin, ymin, xmax, ymax = req.bounds
        self.lo = np.array([xmin + m, ymin + m])
        self.hi = np.array([xmax - m, ymax - m])

    def point_free(self, p) -> bool:
        if np.any(p < self.lo - 1e-12) or np.any(p > self.hi + 1e-12):
            return False
        if len(self.radii) == 0:
            return True
        return bool(np.all(np.linalg.norm(self.centers - p, axis=1) >= self.radii))

    def segment_free(self, a, b) -> bool:
        if not (self.point_free(a) and self.point_free(b)):
            return False
        if len(self.radii) == 0:
            return True
        d = b - a
        L2 = float(d @ d)
        t = np.zeros(len(self.radii)) if L2 == 0 else np.clip((self.centers - a) @ d / L2, 0.0, 1.0)
        closest = a + t[:, None] * d
        return bool(np.all(np.linalg.norm(self.centers - closest, axis=1) >= self.radii))


class _Forest:
    def __init__(self):
        self.points: list[np.ndarray] = []
        self.comp: list[int] = []
        self.adj: list[list[int]] = []
        self.parent_comp: dict[int, int] = {}

    def find(self, c: int) -> int:
        while self.parent_comp[c] != c:
            self.parent_comp[c] = self.parent_comp[self.parent_comp[c]]
            c = self.parent_comp[c]
        return c

    def add(self, p, comp: int | None = None, link: int | None = None) -> int:
        i = len(self.points)
        self.points.append(np.asarray(p, dtype=float))
        self.adj.append([])
        if comp is None:
            comp = i
            self.parent_comp[comp] = comp
        self.comp.append(comp)
        if link is not None:
            self.adj[i].append(link)
            self.adj[link].append(i)
        return i

    def connect(self, i: int, j: int) -> None:
        self.adj[i].append(j)
        self.adj[j].append(i)
        a, b = self.find(self.comp[i]), self.find(self.comp[j])
        if a != b:
            self.parent_comp[max(a, b)] = min(a, b)

    def roots(self) -> list[int]:
        return sorted({self.find(c) for c in self.comp})

    def members(self, root: int) -> np.ndarray:
        return np.array([k for k, c in enumerate(self.comp) if self.find(c) == root])

    def shortest(self, s: int, t: int) -> list[int]:
        pts = self.points
        dist = {s: 0.0}
        prev = {}
        heap = [(0.0, s)]
        while heap:
            d, u = heapq.heappop(heap)
            if u == t:
                break
            if d > dist[u]:
                continue
            for v in self.adj[u]:
                nd = d + float(np.linalg.norm(pts[u] - pts[v]))
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    prev[v] = u
                    heapq.heappush(heap, (nd, v))
        path = [t]
        while path[-1] != s:
            path.append(prev[path[-1]])
        return path[::-1]


def _steer(a, b, step):
    d = b - a
    n = float(np.linalg.norm(d))
    if n <= step:
        return b.copy()
    return a + d * (step / n)


def smooth(points: np.ndarray, m: _Map, rng, attempts: int) -> np.ndarray:
    """Greedy farthest-visible pass followed by random shortcuts."""
    pts = list(points)
    out = [pts[0]]
    i = 0
    while i < len(pts) - 1:
        j = len(pts) - 1
        while j > i + 1 and not m.segment_free(pts[i], pts[j]):
            j -= 1
        out.append(pts[j])
        i = j
    pts = out
    for _ in range(attempts):
        if len(pts) < 3:
            break
        i, j = sorted(rng.choice(len(pts), size=2, replace=False))
        if j - i > 1 and m.segment_free(pts[i], pts[j]):
            pts = pts[: i + 1] + pts[j:]
    return np.array(pts)


def plan(req: PlanRequest, budget: int = 20000, params: PlannerParams = PlannerParams()) -> GlobalPath:
    """Collision-free polyline from ``req.start`` to ``req.goal``; raises NoPathError."""
    m = _Map(req)
    start = np.asarray(req.start, dtype=float)
    goal = np.asarray(req.goal, dtype=float)
    if not m.point_free(goal):
        raise NoPathError("goal is inside an obstacle or outside the arena")
    if not m.point_free(start):
        raise NoPathError("start is inside an obstacle or outside the arena")
    rng = generator(req.seed, 11)
    if m.segment_free(start, goal):
        return GlobalPath(np.array([start, goal]))
    forest = _Forest()
    s_idx = forest.add(start)
    g_idx = forest.add(goal)
    placed = 0
    for _ in range(100 * params.subtrees):
        if placed == params.subtrees:
            break
        q = rng.uniform(m.lo, m.hi)
        if m.point_free(q):
            forest.add(q)
            placed += 1
    for _ in range(budget):
        q = goal if rng.random() < params.goal_bias else rng.uniform(m.lo, m.hi)
        for root in forest.roots():
            idx = forest.members(root)
            if len(idx) == 0:
                continue
            pts = np.array([forest.points[k] for k in idx])
            near = int(idx[np.argmin(np.linalg.norm(pts - q, axis=1))])
            new = _steer(forest.points[near], q, params.step)
            if not m.segment_free(forest.points[near], new):
                continue
            v = forest.add(new, comp=forest.comp[near], link=near)
            _merge_nearby(forest, v, m, params.connect_radius)
        if forest.find(forest.comp[s_idx]) == forest.find(forest.comp[g_idx]):
            raw = np.array([forest.points[k] for k in forest.shortest(s_idx, g_idx)])
            return GlobalPath(smooth(raw, m, rng, params.shortcut_attempts))
    raise NoPathError(f"no path within {budget} iterations")


def _merge_nearby(forest: _Forest, v: int, m: _Map, radius: float) -> None:
    own = forest.find(forest.comp[v])
    for root in forest.roots():
        if forest.find(root) == own:
            continue
        idx = forest.members(root)
        pts = np.array([forest.points[k] for k in idx])
        d = np.linalg.norm(pts - forest.points[v], axis=1)
        k = int(np.argmin(d))
        if d[k] <= radius and m.segment_free(forest.points[v], pts[k]):
            forest.connect(v, int(idx[k]))
            own = forest.find(forest.comp[v])


def current_guidance(path: GlobalPath, robot_pos, lookahead: float) -> np.ndarray:
    """Point ``lookahead`` metres along the path past the robot's projection."""
    wp = np.asarray(path.waypoints, dtype=float)
    if len(wp) == 0:
        raise ValueError("empty path")
    if len(wp) == 1:
        return wp[0].copy()
    p = np.asarray(robot_pos, dtype=float)
    seg = np.diff(wp, axis=0)
    lens = np.linalg.norm(seg, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lens)])
    best, best_s = math.inf, 0.0
    for i, (a, d, L) in enumerate(zip(wp[:-1], seg, lens)):
        t = 0.0 if L == 0 else min(1.0, max(0.0, float((p - a) @ d) / (L * L)))
        dist = float(np.linalg.norm(a + t * d - p))
        if dist < best - 1e-12:
            best, best_s = dist, cum[i] + t * L
    s = best_s + lookahead
    if s >= cum[-1]:
        return wp[-1].copy()
    i = int(np.searchsorted(cum, s, side="right") - 1)
    t = (s - cum[i]) / lens[i]
    return wp[i] + t * seg[i]


@dataclass
class PlannerService:
    """Background replanning with latest-value exchange in both directions.

    The control loop writes robot positions with ``update_position`` and reads
    the newest published path with ``latest``; neither call blocks on
    planning. ``plan_fn`` defaults to ``plan`` and may be swapped in tests.
    """

    template: PlanRequest
    budget: int = 2000
    plan_fn: object = plan
    period: float = 0.0
    degraded_after: int = 3
    _position: np.ndarray | None = None
    _path: GlobalPath | None = None
    _failures: int = 0
    _stamp: int = 0
    _stop: threading.Event = field(default_factory=threading.Event)
    _thread: threading.Thread | None = None

    @property
    def degraded(self) -> bool:
        return self._failures >= self.degraded_after

    def update_position(self, pos) -> None:
        self._position = np.array(pos, dtype=float)

    def latest(self) -> GlobalPath | None:
        return self._path

    def start(self) -> "PlannerService":
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join()

    def step_once(self) -> bool:
        """One replanning cycle; returns True if a new path was published."""
        pos = self._position
        if pos is None:
            return False
        req = PlanRequest(pos, self.template.goal, self.template.obstacles, self.template.bounds,
                          seed=self.template.seed + self._stamp + 1, robot_radius=self.template.robot_radius)
        try:
            path = self.plan_fn(req, self.budget)
        except NoPathError:
            self._failures += 1
            return False
        self._failures = 0
        self._stamp += 1
        self._path = GlobalPath(np.array(path.waypoints), self._stamp)
        return True

    def _run(self):
        while not self._stop.is_set():
            if not self.step_once():
                time.sleep(0.005)
            elif self.period:
                time.sleep(self.period)


class LockstepPlanner:
    """Replans every ``every`` control steps; used inside episodes so runs
    stay reproducible regardless of wall-clock timing."""

    def __init__(self, template: PlanRequest, every: int = 4, budget: int = 2000, lookahead: float = 3.0):
        self.template = template
        self.every = every
        self.budget = budget
        self.lookahead = lookahead
        self.path: GlobalPath | None = None
        self.stamp = 0
        self.failures = 0
        self._calls = 0

    def guidance(self, robot_pos) -> np.ndarray:
        if self.path is None or self._calls % self.every == 0:
            req = PlanRequest(np.asarray(robot_pos, dtype=float), self.template.goal, self.template.obstacles,
                              self.template.bounds, seed=self.template.seed + self.stamp + 1,
                              robot_radius=self.template.robot_radius)
            try:
                path = plan(req, self.budget)
                self.stamp += 1
                self.path = GlobalPath(path.waypoints, self.stamp)
                self.failures = 0
            except NoPathError:
                self.failures += 1
        self._calls += 1
        if self.path is None:
            return np.asarray(self.template.goal, dtype=float).copy()
        return current_guidance(self.path, robot_pos, self.lookahead)
