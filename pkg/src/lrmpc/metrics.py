"""Navigation and proxemic metrics over batches of episodes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

ZONES = ("intimate", "personal", "social", "public")
METRICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ZoneBands:
    """Upper bounds (closed) of the first three bands; public is unbounded."""

    intimate: float = 0.45
    personal: float = 1.2
    social: float = 3.6
    surface: bool = True  # False: center-to-center distance

    def classify(self, distance: float) -> str:
        if distance <= self.intimate:
            return "intimate"
        if distance <= self.personal:
            return "personal"
        if distance <= self.social:
            return "social"
        return "public"


def zone_of(robot, human, bands: ZoneBands = ZoneBands()) -> str:
    d = float(np.linalg.norm(robot.position - human.position))
    if bands.surface:
        d -= robot.radius + human.radius
    return bands.classify(d)


@dataclass
class HumanZoneStats:
    steps: int = 0
    zone_steps: dict = field(default_factory=lambda: {z: 0 for z in ZONES})

    @property
    def entered(self) -> dict:
        return {z: self.zone_steps[z] > 0 for z in ZONES}

    def to_dict(self) -> dict:
        return {"steps": self.steps, "zone_steps": dict(self.zone_steps), "entered": self.entered}

    @classmethod
    def from_dict(cls, d: dict) -> "HumanZoneStats":
        return cls(steps=int(d["steps"]), zone_steps={z: int(d["zone_steps"][z]) for z in ZONES})


@dataclass
class BatchMetrics:
    episodes: int
    success_rate: float
    mean_time: float
    mean_path_length: float
    mean_time_success: float | None
    mean_path_length_success: float | None
    zone_entry_ratio: dict
    zone_time_ratio: dict
    human_exposures: int


def aggregate(results) -> BatchMetrics:
    """Table-style navigation metrics plus zone entry / time ratios.

    A human counts once per episode per zone it ever entered. Successful-only
    averages are ``None`` when nothing succeeded.
    """
    results = list(results)
    if not results:
        raise ValueError("aggregate needs at least one episode")
    n = len(results)
    succ = [r for r in results if r.success]
    exposures = 0
    entries = {z: 0 for z in ZONES}
    time_sums = {z: 0.0 for z in ZONES}
    for r in results:
        for stats in r.per_human_zone_counts.values():
            exposures += 1
            for z in ZONES:
                if stats.zone_steps[z] > 0:
                    entries[z] += 1
                if stats.steps > 0:
                    time_sums[z] += stats.zone_steps[z] / stats.steps
    if exposures:
        entry_ratio = {z: entries[z] / exposures for z in ZONES}
        time_ratio = {z: time_sums[z] / exposures for z in ZONES}
    else:
        entry_ratio = {z: 0.0 for z in ZONES}
        time_ratio = {z: 0.0 for z in ZONES}
    return BatchMetrics(
        episodes=n,
        success_rate=len(succ) / n,
        mean_time=sum(r.duration for r in results) / n,
        mean_path_length=sum(r.path_length for r in results) / n,
        mean_time_success=sum(r.duration for r in succ) / len(succ) if succ else None,
        mean_path_length_success=sum(r.path_length for r in succ) / len(succ) if succ else None,
        zone_entry_ratio=entry_ratio,
        zone_time_ratio=time_ratio,
        human_exposures=exposures,
    )


CSV_COLUMNS = (
    ["schema_version", "scenario", "policy", "episodes", "success_rate", "mean_time", "mean_path_length",
     "mean_time_success", "mean_path_length_success", "human_exposures"]
    + [f"entry_{z}" for z in ZONES]
    + [f"time_{z}" for z in ZONES]
)


def _fmt(x) -> str:
    return "NA" if x is None else repr(float(x))


def metrics_rows(rows: list[tuple[str, str, BatchMetrics]]) -> str:
    """Render (scenario, policy, metrics) rows as CSV text."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for scenario, policy, m in rows:
        w.writerow(
            [METRICS_SCHEMA_VERSION, scenario, policy, m.episodes]
            + [_fmt(v) for v in (m.success_rate, m.mean_time, m.mean_path_length, m.mean_time_success,
                                 m.mean_path_length_success)]
            + [m.human_exposures]
            + [_fmt(m.zone_entry_ratio[z]) for z in ZONES]
            + [_fmt(m.zone_time_ratio[z]) for z in ZONES]
        )
    return buf.getvalue()


def read_metrics_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    for row in rows:
        if int(row["schema_version"]) != METRICS_SCHEMA_VERSION:
            raise ValueError(f"unsupported metrics schema {row['schema_version']}")
    return rows
