"""Command-line entry points: run benchmark suites, compare solver variants,
and replay trajectory logs."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_run(args) -> int:
    from . import bench

    cfg = bench.load_config(args.config)
    out_dir = args.out_dir or cfg.out_dir
    table = bench.run_suite(cfg, jobs=args.jobs, seed_offset=args.seed_offset)
    files = bench.emit_report(table, out_dir)
    agg = table.aggregates()
    for key, stats in agg.items():
        rate = stats["success_rate"]
        if stats["mean_time_s"] is None:
            print(f"{key}: Fail (success 0/{stats['episodes']})")
        else:
            print(f"{key}: {stats['mean_time_s']:.1f}±{stats['std_time_s']:.1f} s, "
                  f"max force {stats['mean_max_force_N']:.2f}±{stats['std_max_force_N']:.2f} N, "
                  f"success {rate:.0%}")
    print(f"wrote {len(files)} files to {out_dir}")
    return 0


def _cmd_compare_solvers(args) -> int:
    from . import bench

    cfg = bench.load_config(args.config)
    out_dir = Path(args.out_dir or cfg.out_dir)
    stats = bench.solver_comparison(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "solver_comparison.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for variant, s in stats.items():
        print(f"{variant}: mean cost decrease {s['mean_cost_decrease']:.4f}, "
              f"{s['mean_seconds_per_plan']:.2f} s/plan")
    print(f"wrote {path}")
    return 0


def _cmd_replay(args) -> int:
    """Summarize a trajectory CSV (and check it against an environment file)."""
    rows = []
    with open(args.trajectory, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            rows.append([float(v) for v in line.strip().split(",")])
    if not rows:
        print("empty trajectory")
        return 1
    data = np.asarray(rows)
    cols = {name: i for i, name in enumerate(header)}
    t = data[:, cols["time_s"]]
    print(f"{len(rows)} control intervals over {t[-1] - t[0] + 0.2:.1f} s")
    if "max_force_N" in cols:
        print(f"max contact force: {data[:, cols['max_force_N']].max():.3f} N")
    if "ee_x" in cols:
        ee = data[-1, [cols["ee_x"], cols["ee_y"], cols["ee_z"]]]
        print(f"final end-effector position: ({ee[0]:.4f}, {ee[1]:.4f}, {ee[2]:.4f})")
        if args.env:
            from .envs import load_environment

            env = load_environment(args.env)
            dist = float(np.linalg.norm(ee - env.goal.translation))
            print(f"distance to goal: {dist:.4f} m "
                  f"({'success' if dist <= 0.01 else 'not at goal'})")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="reachsim",
        description="Contact-allowed goal-reaching benchmarks for a 7-DOF arm.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a benchmark suite from a TOML config")
    p_run.add_argument("config", help="experiment config (TOML)")
    p_run.add_argument("--seed-offset", type=int, default=0)
    p_run.add_argument("--out-dir", default=None)
    p_run.add_argument("--jobs", type=int, default=1)
    p_run.set_defaults(func=_cmd_run)

    p_cmp = sub.add_parser("compare-solvers",
                           help="compare solver variants on wall-env plan steps")
    p_cmp.add_argument("config", help="experiment config (TOML)")
    p_cmp.add_argument("--out-dir", default=None)
    p_cmp.set_defaults(func=_cmd_compare_solvers)

    p_rep = sub.add_parser("replay", help="summarize a trajectory CSV")
    p_rep.add_argument("trajectory", help="episode trajectory CSV")
    p_rep.add_argument("--env", default=None, help="environment JSON for goal checks")
    p_rep.set_defaults(func=_cmd_replay)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
