"""Command-line driver: collect, train, eval and replay.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
The worker count for episode batches comes from ``LRMPC_WORKERS``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lrmpc import __version__
from lrmpc.config import ConfigError, fill, read_config
from lrmpc.dataset import DatasetError, collect, episode_seed, read_dataset, write_dataset
from lrmpc.metrics import ZoneBands, aggregate, metrics_rows
from lrmpc.mpc import MpcConfig
from lrmpc.penn import ModelFormatError, TrainConfig, load_model, save_model, train
from lrmpc.policy import KINDS, PolicyConfig, PolicyConfigError, config_from_dict, make_policy
from lrmpc.risk import FEATURE_DIM, HeuristicParams
from lrmpc.scenario import LOG_VERSION, ScenarioConfig, run_episode, scenario_matrix
from lrmpc.uncertainty import FilterThresholds

log = logging.getLogger("lrmpc")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class Settings:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    bands: ZoneBands = field(default_factory=ZoneBands)


_NESTED = ("heuristic", "thresholds", "mpc", "kind")


def load_settings(path) -> Settings:
    """Read an INI file with optional sections scenario, policy, heuristic,
    thresholds, mpc, train and zones. No path means all defaults."""
    s = Settings()
    if path is None:
        return s
    cp = read_config(path)
    known = {"scenario", "policy", "heuristic", "thresholds", "mpc", "train", "zones"}
    for name in cp.sections():
        if name not in known:
            raise ConfigError(f"{path}: unknown section [{name}]")
    get = lambda name: cp[name] if cp.has_section(name) else None  # noqa: E731
    try:
        s.scenario = fill(ScenarioConfig, get("scenario"))
        pol = get("policy")
        if pol is not None:
            for key in _NESTED:
                if key in pol:
                    raise ConfigError(f"[policy] {key!r} cannot be set here")
        base = fill(PolicyConfig, pol)
        s.policy = dataclasses.replace(
            base,
            heuristic=fill(HeuristicParams, get("heuristic")),
            thresholds=fill(FilterThresholds, get("thresholds")),
            mpc=fill(MpcConfig, get("mpc")),
        )
        s.train = fill(TrainConfig, get("train"))
        s.bands = fill(ZoneBands, get("zones"))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return s


def workers() -> int:
    raw = os.environ.get("LRMPC_WORKERS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LRMPC_WORKERS must be an integer, got {raw!r}") from None
    return max(1, n)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, args, started: float, artifacts: list[Path], extra: dict | None = None) -> Path:
    doc = {
        "command": command,
        "config": str(args.config) if getattr(args, "config", None) else None,
        "seed": getattr(args, "seed", None),
        "episodes": getattr(args, "episodes", None),
        "artifacts": {str(p.relative_to(out)) if p.is_relative_to(out) else str(p): sha256(p) for p in artifacts},
        "tool_version": __version__,
        "wall_time_s": time.time() - started,
        **(extra or {}),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def cmd_collect(args) -> int:
    started = time.time()
    s = load_settings(args.config)
    if args.episodes <= 0:
        raise UsageError("--episodes must be positive")
    cfg = dataclasses.replace(s.policy, kind="hr_mpc")
    X, y, outcomes = collect(scenario_matrix(s.scenario), args.episodes, args.seed, cfg, workers())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "dataset.csv"
    write_dataset(data, X, y, args.seed, cfg.heuristic.risk_max, {"episodes": args.episodes})
    write_manifest(out, "collect", args, started, [data, data.with_suffix(".json")],
                   {"outcomes": {o: outcomes.count(o) for o in sorted(set(outcomes))}})
    print(f"collected {len(y)} samples from {args.episodes} episodes -> {data}")
    return EXIT_OK


def cmd_train(args) -> int:
    started = time.time()
    s = load_settings(args.config)
    X, y, meta = read_dataset(args.dataset, FEATURE_DIM)
    cfg = dataclasses.replace(s.train, seed=args.seed)
    ens = train(X, y, cfg, label_scale=float(meta.get("label_scale", 100.0)), workers=workers())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = out / "model.json"
    save_model(ens, model)
    curve = out / "training_curve.csv"
    with curve.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["member", "epoch", "lr", "train_nll", "val_nll"])
        for j, h in enumerate(ens.histories):
            w.writerow([j, 0, "", "", repr(h.initial_val_nll)])
            for e in h.epochs:
                w.writerow([j, e["epoch"], repr(e["lr"]), repr(e["train_nll"]), repr(e["val_nll"])])
    members = [
        {"member": j, "initial_val_nll": h.initial_val_nll, "best_val_nll": h.best_val_nll,
         "best_epoch": h.best_epoch, "epochs_run": len(h.epochs), "stopped_early": h.stopped_early}
        for j, h in enumerate(ens.histories)
    ]
    write_manifest(out, "train", args, started, [model, curve], {"dataset": str(args.dataset), "members": members})
    for m in members:
        print(f"member {m['member']}: val NLL {m['initial_val_nll']:.4f} -> {m['best_val_nll']:.4f} "
              f"(best epoch {m['best_epoch']}, {m['epochs_run']} epochs)")
    return EXIT_OK


def _eval_one(job):
    scenario, seed, cfg, model_path, log_path, bands = job
    model = load_model(model_path) if cfg.kind == "lr_mpc" else None
    policy = make_policy(cfg, model)
    with open(log_path, "w") as fh:
        res = run_episode(policy, scenario, seed, log=fh, bands=bands)
    res.trajectory = []
    return res


def evaluate(settings: Settings, policies: list[str], episodes: int, seed: int, out: Path, model_path=None):
    """Run every (cell, policy) batch with shared per-episode seeds.

    Returns ``[(cell, policy, results)]`` and writes one log per episode
    under ``out/logs``.
    """
    cells = scenario_matrix(settings.scenario)
    jobs, keys = [], []
    for ci, cell in enumerate(cells):
        for kind in policies:
            cfg = dataclasses.replace(settings.policy, kind=kind,
                                      model_path=str(model_path) if kind == "lr_mpc" else "")
            d = out / "logs" / cell.name / kind
            d.mkdir(parents=True, exist_ok=True)
            for k in range(episodes):
                jobs.append((cell, episode_seed(seed, ci, k), cfg, cfg.model_path, d / f"ep_{k:04d}.jsonl", settings.bands))
                keys.append((cell.name, kind))
    n = workers()
    if n > 1:
        with ProcessPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(_eval_one, jobs))
    else:
        results = [_eval_one(j) for j in jobs]
    grouped: dict = {}
    for key, res in zip(keys, results):
        grouped.setdefault(key, []).append(res)
    return [(c, p, rs) for (c, p), rs in grouped.items()], [j[4] for j in jobs]


def cmd_eval(args) -> int:
    started = time.time()
    s = load_settings(args.config)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    bad = [p for p in policies if p not in KINDS]
    if bad or not policies:
        raise UsageError(f"unknown policies {bad}; choose from {', '.join(KINDS)}")
    if args.episodes <= 0:
        raise UsageError("--episodes must be positive")
    model_path = args.model or s.policy.model_path or None
    if "lr_mpc" in policies:
        if not model_path:
            raise UsageError("lr_mpc needs --model or [policy] model_path")
        load_model(model_path)  # fail before any episode runs
        model_path = Path(model_path).resolve()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    batches, logs = evaluate(s, policies, args.episodes, args.seed, out, model_path)
    metrics = out / "metrics.csv"
    metrics.write_text(metrics_rows([(c, p, aggregate(rs)) for c, p, rs in batches]))
    failures = sum(r.outcome == "policy_error" for _, _, rs in batches for r in rs)
    write_manifest(out, "eval", args, started, [metrics, *logs],
                   {"policies": policies, "model": str(model_path) if model_path else None, "policy_errors": failures})
    for c, p, rs in batches:
        sr = sum(r.success for r in rs) / len(rs)
        print(f"{c:18s} {p:12s} SR {sr:.2f}")
    print(f"metrics -> {metrics}")
    return EXIT_OK


class ReplayError(RuntimeError):
    pass


def parse_log(path) -> tuple[dict, list[dict], dict]:
    """Header, step records and result record; raises ReplayError at the first bad line."""
    path = Path(path)
    if not path.is_file():
        raise UsageError(f"log not found: {path}")
    header, steps, result = None, [], None
    lines = path.read_text().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for n, line in enumerate(lines, 1):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayError(f"{path}:{n}: unparseable record ({exc.msg})") from None
        kind = rec.get("kind") if isinstance(rec, dict) else None
        if n == 1:
            if kind != "header":
                raise ReplayError(f"{path}:1: expected a header record")
            if rec.get("version") != LOG_VERSION:
                raise ReplayError(f"{path}:1: unsupported log version {rec.get('version')!r}")
            header = rec
        elif result is not None:
            raise ReplayError(f"{path}:{n}: record after the result record")
        elif kind == "step":
            if rec.get("step") != len(steps):
                raise ReplayError(f"{path}:{n}: expected step {len(steps)}, got {rec.get('step')!r}")
            steps.append(rec)
        elif kind == "result":
            result = rec
        else:
            raise ReplayError(f"{path}:{n}: unknown record kind {kind!r}")
    if header is None:
        raise ReplayError(f"{path}: empty log")
    if result is None:
        raise ReplayError(f"{path}:{len(lines)}: log truncated (no result record)")
    return header, steps, result


def scenario_from_dict(d: dict) -> ScenarioConfig:
    d = dict(d)
    d["robot_start"] = tuple(d["robot_start"])
    d["robot_goal"] = tuple(d["robot_goal"])
    d["obstacles"] = tuple(tuple(o) for o in d["obstacles"])
    return ScenarioConfig(**d)


def replay(path, model_path=None) -> tuple[dict, list[dict], int | None]:
    """Re-simulate a logged episode; returns (header, steps, first mismatching step or None)."""
    header, steps, _ = parse_log(path)
    scenario = scenario_from_dict(header["scenario"])
    cfg = config_from_dict(header["policy"]["config"])
    if model_path:
        cfg = dataclasses.replace(cfg, model_path=str(model_path))
    policy = make_policy(cfg)
    buf = io.StringIO()
    run_episode(policy, scenario, header["seed"], log=buf)
    fresh = [json.loads(line) for line in buf.getvalue().splitlines()]
    fresh_steps = [r for r in fresh if r["kind"] == "step"]
    for i, (a, b) in enumerate(zip(steps, fresh_steps)):
        if a["control"] != b["control"] or a["robot"] != b["robot"]:
            return header, steps, i
    if len(steps) != len(fresh_steps):
        return header, steps, min(len(steps), len(fresh_steps))
    return header, steps, None


def export_trace(header: dict, steps: list[dict], path, bands: ZoneBands = ZoneBands()) -> None:
    """Long-format CSV: one row per (step, human) with robot position and zone."""
    sc = header["scenario"]
    rr, hr = sc["robot_radius"], sc["human_radius"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", "robot_x", "robot_y", "control_x", "control_y", "human_id", "human_x", "human_y", "zone"])
        for rec in steps:
            rx, ry = rec["robot"][:2]
            for hid, hx, hy, _, _ in rec["humans"] or [[None, None, None, None, None]]:
                zone = ""
                if hid is not None:
                    d = float(np.hypot(hx - rx, hy - ry)) - ((rr + hr) if bands.surface else 0.0)
                    zone = bands.classify(d)
                w.writerow([rec["step"], rec["t"], rx, ry, *rec["control"], "" if hid is None else hid,
                            "" if hx is None else hx, "" if hy is None else hy, zone])


def cmd_replay(args) -> int:
    header, steps, bad = replay(args.log, args.model)
    if args.export:
        export_trace(header, steps, args.export)
        print(f"trace -> {args.export}")
    if bad is not None:
        print(f"replay mismatch at step {bad}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"replay ok: {len(steps)} steps match")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lrmpc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, episodes=True):
        sp.add_argument("--config", type=Path, default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", type=Path, required=True)
        if episodes:
            sp.add_argument("--episodes", type=int, default=100)

    sp = sub.add_parser("collect", help="generate a risk dataset with HR-MPC")
    common(sp)
    sp.set_defaults(func=cmd_collect)

    sp = sub.add_parser("train", help="train the risk ensemble")
    common(sp, episodes=False)
    sp.add_argument("--dataset", type=Path, required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate policies over the scenario matrix")
    common(sp)
    sp.set_defaults(episodes=50)
    sp.add_argument("--policies", default=",".join(KINDS))
    sp.add_argument("--model", type=Path, default=None)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("replay", help="re-simulate an episode log and check it")
    sp.add_argument("log", type=Path)
    sp.add_argument("--model", type=Path, default=None)
    sp.add_argument("--export", type=Path, default=None, help="write a plot-ready CSV trace")
    sp.set_defaults(func=cmd_replay)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "seed", 0) is not None and getattr(args, "seed", 0) < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, ConfigError, PolicyConfigError, DatasetError, ModelFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReplayError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("command failed")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
