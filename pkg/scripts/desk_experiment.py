"""Desk-scale experiment: collect a heuristic-risk dataset, train the
ensemble, then run the paired evaluation over the scenario matrix.

    python scripts/desk_experiment.py --out runs/desk --episodes 12 --eval-episodes 50

Set LRMPC_WORKERS to use several processes.
"""

import argparse
import csv
from pathlib import Path

from lrmpc.cli import main


def run(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = out / "eval.ini"
    cfg.write_text(f"[scenario]\nmin_humans = {args.min_humans}\nmax_humans = {args.max_humans}\n")
    steps = [
        ["collect", "--episodes", str(args.episodes), "--seed", str(args.seed), "--out", str(out / "data")],
        ["train", "--dataset", str(out / "data" / "dataset.csv"), "--seed", str(args.seed), "--out", str(out / "model")],
        ["eval", "--config", str(cfg), "--episodes", str(args.eval_episodes), "--seed", str(args.seed),
         "--model", str(out / "model" / "model.json"), "--out", str(out / "eval")],
    ]
    for argv in steps:
        code = main(argv)
        if code:
            return code
    rows = list(csv.DictReader((out / "eval" / "metrics.csv").open()))
    print(f"{'scenario':18s} {'policy':12s} {'SR':>5s} {'intimate':>9s} {'t_succ':>7s}")
    for r in rows:
        print(f"{r['scenario']:18s} {r['policy']:12s} {float(r['success_rate']):5.2f} "
              f"{float(r['entry_intimate']):9.3f} {r['mean_time_success']:>7s}")
    return 0


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=12, help="collection episodes")
    p.add_argument("--eval-episodes", type=int, default=50, help="episodes per cell and policy")
    p.add_argument("--min-humans", type=int, default=5)
    p.add_argument("--max-humans", type=int, default=15)
    raise SystemExit(run(p.parse_args()))
