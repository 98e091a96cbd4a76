"""Grid search over the uncertainty-filter thresholds for the learned-risk policy.

    python scripts/threshold_grid.py --model runs/desk/model/model.json --episodes 10

Every grid point reuses the same paired episode seeds; results go to a CSV
with one row per (epistemic_max, cvar_bound, cell).
"""

import argparse
import csv
import dataclasses
import itertools
from pathlib import Path

from lrmpc.cli import Settings, evaluate
from lrmpc.metrics import aggregate
from lrmpc.scenario import ScenarioConfig
from lrmpc.uncertainty import FilterThresholds


def floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",")]


def run(args) -> None:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "grid.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epistemic_max", "cvar_bound", "scenario", "success_rate", "entry_intimate", "mean_time_success"])
        for e_max, bound in itertools.product(floats(args.epistemic), floats(args.cvar)):
            s = Settings(scenario=ScenarioConfig(min_humans=args.min_humans, max_humans=args.max_humans))
            th = FilterThresholds(epistemic_max=e_max, risk_tolerance=args.eps, cvar_bound=bound)
            s.policy = dataclasses.replace(s.policy, thresholds=th)
            batches, _ = evaluate(s, ["lr_mpc"], args.episodes, args.seed, out / f"e{e_max}_c{bound}", args.model)
            for cell, _, results in batches:
                m = aggregate(results)
                w.writerow([e_max, bound, cell, m.success_rate, m.zone_entry_ratio["intimate"], m.mean_time_success])
                print(f"E={e_max:<5} C={bound:<5} {cell:18s} SR {m.success_rate:.2f}")


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--model", required=True)
    p.add_argument("--out", default="runs/grid")
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epistemic", default="0.25,0.5,1.0")
    p.add_argument("--cvar", default="50,70,90")
    p.add_argument("--eps", type=float, default=0.1)
    p.add_argument("--min-humans", type=int, default=5)
    p.add_argument("--max-humans", type=int, default=15)
    run(p.parse_args())
