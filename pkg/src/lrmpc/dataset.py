"""Offline risk datasets: HR-MPC rollouts labelled with the heuristic risk.

A dataset is a CSV (``feature_0..feature_38,label``) plus a JSON sidecar
holding the feature dimension, sample count, seed and label scale.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from lrmpc.policy import HeuristicRiskPolicy, PolicyConfig
from lrmpc.risk import FEATURE_DIM
from lrmpc.rng import child_int
from lrmpc.scenario import ScenarioConfig, run_episode

DATASET_FORMAT = "lrmpc-risk-dataset"
DATASET_VERSION = 1


class DatasetError(ValueError):
    pass


def episode_seed(root: int, cell: int, k: int) -> int:
    """Seed for episode ``k`` of scenario cell ``cell``; shared by all policies."""
    return child_int(root, cell, k)


def _collect_one(args) -> tuple[np.ndarray, np.ndarray, str]:
    scenario, seed, cfg = args
    pol = HeuristicRiskPolicy(cfg, record=True)
    res = run_episode(pol, scenario, seed)
    if not pol.samples:
        return np.zeros((0, FEATURE_DIM)), np.zeros(0), res.outcome
    X = np.vstack([x for x, _ in pol.samples])
    y = np.concatenate([y for _, y in pol.samples])
    return X, y, res.outcome


def collect(scenarios: list[ScenarioConfig], episodes: int, seed: int, cfg: PolicyConfig = PolicyConfig(),
            workers: int = 1) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Run ``episodes`` HR-MPC episodes cycling over ``scenarios``; returns (X, y, outcomes)."""
    jobs = [(scenarios[k % len(scenarios)], episode_seed(seed, k % len(scenarios), k), cfg) for k in range(episodes)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(_collect_one, jobs))
    else:
        parts = [_collect_one(j) for j in jobs]
    X = np.vstack([p[0] for p in parts]) if parts else np.zeros((0, FEATURE_DIM))
    y = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0)
    return X, y, [p[2] for p in parts]


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def write_dataset(path, X: np.ndarray, y: np.ndarray, seed: int, label_scale: float = 100.0, extra: dict | None = None) -> dict:
    path = Path(path)
    header = [f"feature_{i}" for i in range(X.shape[1])] + ["label"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, label in zip(X, y):
            w.writerow([repr(float(v)) for v in row] + [repr(float(label))])
    meta = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "feature_dim": int(X.shape[1]),
        "count": int(len(y)),
        "seed": int(seed),
        "label_scale": label_scale,
        **(extra or {}),
    }
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return meta


def read_dataset(path, expect_dim: int | None = FEATURE_DIM) -> tuple[np.ndarray, np.ndarray, dict]:
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset not found: {path}")
    meta_path = sidecar_path(path)
    meta = json.loads(meta_path.read_text()) if meta_path.is_file() else {}
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise DatasetError(f"{path}: missing header ending in 'label'")
    dim = len(rows[0]) - 1
    if expect_dim is not None and dim != expect_dim:
        raise DatasetError(f"{path}: dataset has {dim} features but the model expects {expect_dim}")
    if "feature_dim" in meta and meta["feature_dim"] != dim:
        raise DatasetError(f"{path}: header has {dim} features but metadata says {meta['feature_dim']}")
    try:
        data = np.array(rows[1:], dtype=float).reshape(-1, dim + 1)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None
    if "count" in meta and meta["count"] != len(data):
        raise DatasetError(f"{path}: {len(data)} rows but metadata says {meta['count']}")
    return data[:, :dim], data[:, dim], meta
