"""Command-line front end: ``cmdp-ac {run,solve,diagnose,gen-env} --config PATH``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .batch import BatchConfig, run_batch
from .config import ConfigError, ExperimentConfig, load_config
from .core import CmdpModel, ModelError, uniform_policy
from .diagnostics import (
    ErgodicityError,
    check_negative_definite,
    lemma_residuals,
    mean_td_operator,
    mixing_time,
    mu_floor_estimate,
)
from .envs import GridWorld, default_spec, load_map, random_cmdp
from .oracles import (
    dual_minimize,
    feasible_warm_start,
    optimal_value_grid,
    value_iteration,
)
from .pdnac import StepSizes, behavior_update, lambda_cap, run, schedule_from_horizon

log = logging.getLogger("cmdp_ac")


def load_environment(cfg: ExperimentConfig) -> tuple[CmdpModel, GridWorld | None]:
    if cfg.map is not None:
        spec = default_spec() if cfg.map == "default" else load_map(cfg.map)
        gw = GridWorld(spec)
        return gw.model, gw
    if cfg.model is not None:
        return CmdpModel.load(cfg.model), None
    S, A, N = cfg.random_cmdp
    return random_cmdp(S, A, N, cfg.random_seed, cfg.min_transition_prob, cfg.slack_target,
                       cfg.gamma), None


def step_sizes(cfg: ExperimentConfig, model: CmdpModel, horizon: int | None = None) -> StepSizes:
    K = cfg.horizon if horizon is None else horizon
    if K == 0:
        sizes = schedule_from_horizon(1, cfg.eta0, cfg.alpha0, cfg.beta0, cfg.eps0)
        sizes = StepSizes(sizes.eta, sizes.alpha, sizes.beta, sizes.epsilon, 0)
    else:
        sizes = schedule_from_horizon(K, cfg.eta0, cfg.alpha0, cfg.beta0, cfg.eps0,
                                      cfg.mu_floor, model if cfg.mu_floor is not None else None)
    explicit = {k: getattr(cfg, k) for k in ("eta", "alpha", "beta", "epsilon")
                if getattr(cfg, k) is not None}
    if explicit:
        sizes = StepSizes(**{**sizes.__dict__, **explicit})
    return sizes


def _run_seed(cfg: ExperimentConfig, seed: int, out_dir: str) -> dict:
    """Run one seed and write its trace; returns the per-seed summary entry."""
    model, gw = load_environment(cfg)
    sizes = step_sizes(cfg, model)
    warm = feasible_warm_start(model) if cfg.warm_start == "feasible" else None
    cap = lambda_cap(model, cfg.xi)
    gap_stride = cfg.gap_stride if cfg.compute_gaps else None
    optimum = None
    if cfg.compute_optimum and model.num_constraints:
        optimum = dual_minimize(model, step=cfg.dual_step, max_iter=cfg.dual_iters).dual_value
    elif cfg.compute_optimum:
        optimum = float(model.initial_dist @ value_iteration(model, model.rewards[0])[0])
    if cfg.algorithm == "online":
        trace = run(model, sizes, seed, cfg.record_stride, gap_stride, warm, cap, optimum)
    else:
        bcfg = BatchConfig(sizes, cfg.trajectories_per_update, cfg.trajectory_length)
        trace = run_batch(model, bcfg, seed, cfg.record_stride, gap_stride, warm, cap, optimum)
    trace.write(Path(out_dir) / f"trace_seed{seed}.csv")
    last = trace.records[-1]
    entry = {
        "seed": seed,
        "status": "ok",
        "records": len(trace.records),
        "objective": last.objective,
        "violation_total": last.violation_total,
        "lambda": [float(x) for x in last.lam],
        "gap": None if last.gap is None else (None if math.isinf(last.gap) else last.gap),
        "feasible": bool(last.violation_total == 0.0),
        "averages": trace.averages,
    }
    if gw is not None:
        entry["greedy_bridges"] = sorted(gw.bridges_on_path(gw.greedy_path(trace.policy)))
    return entry


def _safe_run_seed(args) -> dict:
    cfg, seed, out_dir = args
    try:
        return _run_seed(cfg, seed, out_dir)
    except (ModelError, ArithmeticError, RuntimeError, AssertionError,
            np.linalg.LinAlgError) as exc:
        return {"seed": seed, "status": "failed", "reason": f"{type(exc).__name__}: {exc}"}


def _median(entries, key):
    vals = [e[key] for e in entries if e.get(key) is not None]
    return float(np.median(vals)) if vals else None


def cmd_run(cfg: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    threads = max(1, int(os.environ.get("CMDP_THREADS", "1")))
    jobs = [(cfg, seed, str(out_dir)) for seed in cfg.seeds]
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(threads, len(jobs))) as pool:
            entries = list(pool.map(_safe_run_seed, jobs))
    else:
        entries = [_safe_run_seed(j) for j in jobs]
    for e in entries:
        log.info("seed %s: %s", e["seed"], e["status"] if e["status"] != "ok" else
                 f"objective={e['objective']:.6g} violation={e['violation_total']:.3g}")
    ok = [e for e in entries if e["status"] == "ok"]
    summary = {
        "algorithm": cfg.algorithm,
        "horizon": cfg.horizon,
        "seeds": entries,
        "median": {k: _median(ok, k) for k in ("objective", "violation_total", "gap")},
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return 0 if len(ok) == len(entries) else 1


def cmd_solve(cfg: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    model, gw = load_environment(cfg)
    report = dual_minimize(model, step=cfg.dual_step, max_iter=cfg.dual_iters,
                           cap=max(lambda_cap(model, cfg.xi), 1e6))
    V, _ = value_iteration(model, model.rewards[0])
    doc = {"dual": report.to_dict(),
           "unconstrained_value": float(model.initial_dist @ V)}
    try:
        best, policy = optimal_value_grid(model, cfg.grid_resolution)
        doc["grid"] = {"resolution": cfg.grid_resolution,
                       "best_value": None if math.isinf(best) else best,
                       "feasible": policy is not None}
    except ModelError as exc:
        doc["grid"] = {"skipped": str(exc)}
    (out_dir / "solve_report.json").write_text(json.dumps(doc, indent=2) + "\n")
    log.info("dual value %.10g (lambda %s)", report.dual_value, report.lambda_star)
    return 0


def _check(name, fn, results):
    try:
        results[name] = fn()
        return True
    except (ModelError, ErgodicityError, RuntimeError, np.linalg.LinAlgError) as exc:
        results[name] = {"error": f"{type(exc).__name__}: {exc}"}
        return False


def cmd_diagnose(cfg: ExperimentConfig, out_dir: Path) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    model, _ = load_environment(cfg)
    S, A = model.num_states, model.num_actions
    results: dict = {}
    uni = uniform_policy(model)

    _check("lemmas", lambda: lemma_residuals(model, cfg.random_seed, cfg.lemma_trials).to_dict(),
           results)
    _check("mu_floor_estimate",
           lambda: mu_floor_estimate(model, cfg.mu_samples, cfg.random_seed, cfg.nd_epsilon),
           results)

    def nd_sweep():
        rng = np.random.default_rng(cfg.random_seed)
        worst, holds = -math.inf, True
        for _ in range(cfg.nd_policies):
            pi = behavior_update(rng.dirichlet(np.ones(A), size=S), cfg.nd_epsilon)
            op = mean_td_operator(model, pi)
            ok, top = check_negative_definite(op, model.gamma, float(op.stationary.min()),
                                              cfg.nd_epsilon, A)
            holds, worst = holds and ok, max(worst, top)
        return {"holds": holds, "max_top_eigenvalue": worst, "policies": cfg.nd_policies}

    _check("negative_definite", nd_sweep, results)

    def mixing_table():
        rows = []
        for c in cfg.mixing_c:
            m = mixing_time(model, uni, c, cfg.mixing_k_max)
            rows.append({"c": c, "tau": m.tau, "sup_tv": m.sup_tv})
        return rows

    _check("mixing_time_uniform", mixing_table, results)
    failed = [k for k, v in results.items() if isinstance(v, dict) and "error" in v]
    passed = (not failed and results["lemmas"]["passed"]
              and results["negative_definite"]["holds"])
    results["passed"] = passed
    results["failed_checks"] = failed
    (out_dir / "diagnostics.json").write_text(json.dumps(results, indent=2) + "\n")
    return 0 if passed else 1


def cmd_gen_env(cfg: ExperimentConfig, out_dir: Path) -> int:
    if cfg.random_cmdp is None:
        raise ConfigError(f"{cfg.source}: gen-env needs a random_cmdp environment source")
    out_dir.mkdir(parents=True, exist_ok=True)
    model, _ = load_environment(cfg)
    model.save(out_dir / "model.json")
    return 0


COMMANDS = {"run": cmd_run, "solve": cmd_solve, "diagnose": cmd_diagnose, "gen-env": cmd_gen_env}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmdp-ac", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value config file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seeds", help="comma-separated seed list (overrides seeds)")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seeds:
            cfg.seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            cfg.validate()
        out_dir = Path(args.out or cfg.out_dir)
        return COMMANDS[args.command](cfg, out_dir)
    except (ConfigError, ModelError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
