"""Averaged optimality gap and violation against the horizon K on a seeded random CMDP.

    python scripts/horizon_sweep.py --horizons 1000 10000 100000 --seeds 0 1 2
"""

import argparse

import numpy as np

from cmdp_ac.envs import random_cmdp
from cmdp_ac.oracles import dual_minimize
from cmdp_ac.pdnac import run, schedule_from_horizon


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--horizons", type=int, nargs="+", default=[1_000, 10_000, 100_000])
    p.add_argument("--seeds", type=int, nargs="+", default=list(range(7)))
    p.add_argument("--states", type=int, default=4)
    p.add_argument("--actions", type=int, default=2)
    p.add_argument("--model-seed", type=int, default=0)
    args = p.parse_args()

    model = random_cmdp(args.states, args.actions, 1, args.model_seed)
    opt = dual_minimize(model, step=2.0, max_iter=3000).dual_value
    print(f"optimum {opt:.6f}")
    print("K, median averaged optimality gap, median averaged violation")
    for K in args.horizons:
        gaps, viols = [], []
        for seed in args.seeds:
            trace = run(model, schedule_from_horizon(K), seed, record_stride=1, optimum=opt)
            gaps.append(trace.averages["optimality_gap"])
            viols.append(trace.averages["violation"])
        print(f"{K}, {np.median(gaps):.6f}, {np.median(viols):.6f}")


if __name__ == "__main__":
    main()
