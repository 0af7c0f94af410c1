"""Command-line interface: ``qfeedback {simulate,trajectory,check,bellman,sweep}``.

Exit codes: 0 success, 1 failed checks, 2 configuration error,
3 too many aborted trajectories.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, IntegrationError, UsageError

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INTEGRATION = 0, 1, 2, 3

log = logging.getLogger("qfeedback")


def _load_sim_config(args):
    from .experiments import SimConfig, load_config

    cfg = load_config(args.config) if args.config else SimConfig()
    over = {}
    if args.seed is not None:
        over["master_seed"] = args.seed
    if args.n_traj is not None:
        over["n_traj"] = args.n_traj
    if args.out is not None:
        over["output"] = dataclasses.replace(cfg.output, dir=args.out)
    return dataclasses.replace(cfg, **over) if over else cfg


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, default=_json_default))


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o)}")


def cmd_simulate(args) -> int:
    from .experiments import config_to_dict, run_ensemble, summarize
    from .plotting import plot_rms

    cfg = _load_sim_config(args)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    per_traj = cfg.output.per_trajectory or args.per_trajectory
    t0 = time.perf_counter()
    stats = run_ensemble(cfg, threads=args.threads, keep_trajectories=per_traj)
    wall = time.perf_counter() - t0
    stats.to_csv(out / "stats.csv")
    if per_traj:
        for tr in stats.trajectories:
            tr.to_csv(out / f"trajectory_{tr.traj_id:05d}.csv")
    summary = summarize(stats, cfg) if stats.n_completed else {}
    _write_json(out / "run.json", {
        "command": "simulate",
        "config": config_to_dict(cfg),
        "master_seed": cfg.master_seed,
        "n_traj": cfg.n_traj,
        "n_completed": stats.n_completed,
        "n_aborted": stats.n_aborted,
        "failed": stats.failed,
        "reset_fraction": stats.reset_fraction,
        "max_edge_probability": stats.max_edge_prob,
        "wall_time_s": wall,
        "summary": summary,
    })
    if cfg.output.figures and stats.n_completed:
        plot_rms(stats, summary, out / "rms.png")
    print(f"trajectories: {stats.n_completed} completed, {stats.n_aborted} aborted")
    if summary:
        print(f"plateau RMS: {summary['plateau_rms']:.4f}")
        print(f"relaxation time constant: {summary['tau']:.4f} "
              f"(free-plateau fit: {summary['tau_free_plateau']:.4f})")
    print(f"wrote {out / 'stats.csv'}")
    return EXIT_INTEGRATION if stats.failed else EXIT_OK


def cmd_trajectory(args) -> int:
    from .experiments import config_to_dict, run_trajectory
    from .plotting import plot_trajectory

    cfg = _load_sim_config(args)
    cfg = dataclasses.replace(cfg, record_every=args.record_every)
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    tr = run_trajectory(cfg, args.traj_id)
    wall = time.perf_counter() - t0
    path = out / f"trajectory_{args.traj_id:05d}.csv"
    tr.to_csv(path)
    _write_json(out / "run.json", {
        "command": "trajectory",
        "config": config_to_dict(cfg),
        "master_seed": cfg.master_seed,
        "traj_id": args.traj_id,
        "aborted": tr.aborted,
        "belief_resets": tr.resets,
        "max_edge_probability": tr.edge_prob,
        "wall_time_s": wall,
    })
    if cfg.output.figures:
        x0, _ = cfg.schedule.targets(tr.t)
        plot_trajectory(tr, x0, out / f"trajectory_{args.traj_id:05d}.png")
    print(f"wrote {path}")
    return EXIT_INTEGRATION if tr.aborted else EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    results = run_checks(seed=args.seed or 0)
    for name, ok, detail in results:
        print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_CHECK_FAILED


def cmd_bellman(args) -> int:
    from .bellman import bellman_solve, brute_force_search, format_strategy, load_problem

    if not args.config:
        raise ConfigError("bellman needs --config <problem.json>")
    prob, rho0 = load_problem(args.config)
    cost, root = bellman_solve(prob, rho0)
    print(f"C* = {cost:.12g}")
    first = prob.labels[root.control] if root.control is not None else "(none, horizon 0)"
    print(f"optimal first control: {first}")
    if args.brute:
        c_bf, _ = brute_force_search(prob, rho0)
        print(f"brute-force minimum = {c_bf:.12g} (|diff| = {abs(c_bf - cost):.2e})")
    print("strategy:")
    print(format_strategy(prob, root, indent="  "))
    return EXIT_OK


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_sweep(args) -> int:
    import csv

    from .experiments import run_ensemble, summarize
    from .plotting import plot_sweep

    cfg = _load_sim_config(args)
    ks = _floats(args.k_values) if args.k_values else None
    gs = _floats(args.gamma_values) if args.gamma_values else None
    if args.config and (ks is None or gs is None):
        from .experiments import tomllib

        with open(args.config, "rb") as fh:
            sweep = tomllib.load(fh).get("sweep", {})
        ks = ks or [float(v) for v in sweep.get("k", [])]
        gs = gs or [float(v) for v in sweep.get("gamma", [])]
    ks = ks or [cfg.model.k]
    gs = gs or [cfg.ctrl.gamma]
    out = Path(cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, any_failed = [], False
    for k in ks:
        for g in gs:
            c = dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, k=k),
                                    ctrl=dataclasses.replace(cfg.ctrl, gamma=g))
            stats = run_ensemble(c, threads=args.threads)
            s = summarize(stats, c) if stats.n_completed else {"plateau_rms": float("nan"), "tau": float("nan")}
            any_failed |= stats.failed
            rows.append({"k": k, "gamma": g, "plateau_rms": s["plateau_rms"], "tau": s["tau"],
                         "n_completed": stats.n_completed, "n_aborted": stats.n_aborted})
            print(f"k={k:g} gamma={g:g}: plateau {s['plateau_rms']:.4f}, tau {s['tau']:.4f}")
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    if cfg.output.figures:
        plot_sweep(rows, out / "sweep.png")
    return EXIT_INTEGRATION if any_failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML simulation config (JSON problem file for bellman)")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--n-traj", type=int, help="number of trajectories (overrides config)")
    common.add_argument("--out", help="output directory (overrides config)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qfeedback", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="ensemble run from a config")
    s.add_argument("--per-trajectory", action="store_true", help="also write one CSV per trajectory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("trajectory", parents=[common], help="single trajectory with full dump")
    s.add_argument("--traj-id", type=int, default=0)
    s.add_argument("--record-every", type=int, default=1, help="record stride in steps")
    s.set_defaults(func=cmd_trajectory)

    s = sub.add_parser("check", parents=[common], help="run the oracle/invariant suite")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("bellman", parents=[common], help="discrete-time DP solver")
    s.add_argument("--brute", action="store_true", help="cross-check with exhaustive search")
    s.set_defaults(func=cmd_bellman)

    s = sub.add_parser("sweep", parents=[common], help="ensemble grid over k and gamma")
    s.add_argument("--k-values", help="comma-separated measurement strengths")
    s.add_argument("--gamma-values", help="comma-separated feedback strengths")
    s.set_defaults(func=cmd_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrationError as exc:
        print(f"integration failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
