"""Duality gap against actor iterations and samples for the online and batch runners.

Writes ``gap_curves.csv`` with one row per recorded point of every run, ready to
plot either against ``k`` (actor iterations) or ``samples``.

    python scripts/online_vs_batch.py --seeds 0 1 2
"""

import argparse
import csv
import math
from pathlib import Path

from cmdp_ac.batch import BatchConfig, run_batch
from cmdp_ac.envs import GridWorld, default_spec
from cmdp_ac.oracles import feasible_warm_start
from cmdp_ac.pdnac import first_reaching, run, schedule_from_horizon


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--online-horizon", type=int, default=200_000)
    p.add_argument("--batch-horizon", type=int, default=20_000)
    p.add_argument("--trajectories", type=int, default=5)
    p.add_argument("--out", default="results/online_vs_batch")
    args = p.parse_args()

    model = GridWorld(default_spec()).model
    start = feasible_warm_start(model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in args.seeds:
        online = run(model, schedule_from_horizon(args.online_horizon), seed,
                     record_stride=5_000, gap_stride=5_000, warm_start=start)
        cfg = BatchConfig(schedule_from_horizon(args.batch_horizon), args.trajectories)
        batch = run_batch(model, cfg, seed, record_stride=250, gap_stride=250, warm_start=start)
        for name, trace in (("online", online), ("batch", batch)):
            rows += [(name, seed, r.k, r.samples, r.gap) for r in trace.records]
        target = online.records[-1].gap
        if target is None or math.isinf(target):
            print(f"seed {seed}: online final policy infeasible, no target gap")
            continue
        hit = first_reaching(batch, target)
        where = "never" if hit is None else f"iteration {hit.k}, {hit.samples} samples"
        print(f"seed {seed}: online final gap {target:.4f} after {online.records[-1].samples} "
              f"samples; batch reaches it at {where}")
    with open(out / "gap_curves.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["runner", "seed", "k", "samples", "gap"])
        for row in rows:
            gap = row[4]
            w.writerow(row[:4] + ("" if gap is None or math.isinf(gap) else repr(gap),))


if __name__ == "__main__":
    main()
