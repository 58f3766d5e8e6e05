"""Experiment runner: benchmark suites, solver comparisons, report emission.

A single TOML config drives everything: which environments and seeds, which
methods (contact-allowed planner variants or the collision-free baseline),
and parameter overrides. Outputs are deterministic: the same config produces
byte-identical CSV files.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import envs as envs_mod
from . import rrt
from .control import MODE_OPERATIONAL_PLUS_NULL, ControlGains
from .planner import EpisodeMetrics, PlannerConfig, plan_step, run_episode
from .solver import SolverConfig


class ConfigError(ValueError):
    """Invalid experiment config; the message names the offending field."""


@dataclass
class MethodSpec:
    name: str
    planner: str = "contact"  # contact | collision_free
    controller_mode: str = MODE_OPERATIONAL_PLUS_NULL
    solver_variant: str = "hybrid"


@dataclass
class EnvSpec:
    kind: str
    seeds: list


@dataclass
class ExperimentConfig:
    environments: list
    methods: list
    out_dir: str = "results"
    planner_overrides: dict = field(default_factory=dict)
    solver_overrides: dict = field(default_factory=dict)
    rrt_max_iters: int = 4000
    jobs: int = 1
    seed_offset: int = 0

    def planner_config(self) -> PlannerConfig:
        try:
            return PlannerConfig(**self.planner_overrides)
        except TypeError as e:
            raise ConfigError(f"planner: {e}") from None

    def solver_config(self, bounds: np.ndarray, variant: str) -> SolverConfig:
        try:
            return SolverConfig(bounds=bounds, variant=variant, **self.solver_overrides)
        except TypeError as e:
            raise ConfigError(f"solver: {e}") from None


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    if "environments" not in raw or not raw["environments"]:
        raise ConfigError("environments: at least one environment is required")
    if "methods" not in raw or not raw["methods"]:
        raise ConfigError("methods: at least one method is required")
    environments = []
    for i, e in enumerate(raw["environments"]):
        kind = e.get("kind")
        if kind not in envs_mod.MAKERS:
            raise ConfigError(f"environments[{i}].kind: unknown kind {kind!r}")
        seeds = e.get("seeds")
        if not seeds:
            raise ConfigError(f"environments[{i}].seeds: explicit seed list required")
        environments.append(EnvSpec(kind=kind, seeds=[int(s) for s in seeds]))
    methods = []
    names = set()
    for i, m in enumerate(raw["methods"]):
        if "name" not in m:
            raise ConfigError(f"methods[{i}].name: required")
        spec = MethodSpec(
            name=m["name"],
            planner=m.get("planner", "contact"),
            controller_mode=m.get("controller_mode", MODE_OPERATIONAL_PLUS_NULL),
            solver_variant=m.get("solver_variant", "hybrid"),
        )
        if spec.planner not in ("contact", "collision_free"):
            raise ConfigError(f"methods[{i}].planner: unknown {spec.planner!r}")
        if spec.name in names:
            raise ConfigError(f"methods[{i}].name: duplicate {spec.name!r}")
        names.add(spec.name)
        methods.append(spec)
    return ExperimentConfig(
        environments=environments,
        methods=methods,
        out_dir=raw.get("out_dir", "results"),
        planner_overrides=raw.get("planner", {}),
        solver_overrides=raw.get("solver", {}),
        rrt_max_iters=int(raw.get("rrt", {}).get("max_iters", 4000)),
    )


@dataclass
class ResultsTable:
    """Per-episode rows plus aggregate statistics per (env, method)."""

    rows: list  # dicts: env, seed, method, success, completion_time_s, max_contact_force_N
    trajectories: dict  # (env, method, seed) -> TrajectoryLog

    def aggregates(self) -> dict:
        table = {}
        for row in self.rows:
            key = (row["env"], row["method"])
            table.setdefault(key, []).append(row)
        out = {}
        for (env, method), rows in sorted(table.items()):
            times = [r["completion_time_s"] for r in rows if r["success"]]
            forces = [r["max_contact_force_N"] for r in rows]
            n_ok = sum(r["success"] for r in rows)
            out[f"{env}/{method}"] = {
                "episodes": len(rows),
                "success_rate": n_ok / len(rows),
                "mean_time_s": float(np.mean(times)) if times else None,
                "std_time_s": float(np.std(times)) if times else None,
                "mean_max_force_N": float(np.mean(forces)) if forces else None,
                "std_max_force_N": float(np.std(forces)) if forces else None,
                "label": "Fail" if n_ok == 0 else f"{np.mean(times):.1f}s",
            }
        return out


def _run_cell(args) -> tuple:
    """One (env kind, method, seed) episode; separable for process pools."""
    kind, method, seed, planner_overrides, solver_overrides, rrt_max_iters = args
    cfg = ExperimentConfig(environments=[], methods=[],
                           planner_overrides=planner_overrides,
                           solver_overrides=solver_overrides,
                           rrt_max_iters=rrt_max_iters)
    pcfg = cfg.planner_config()
    env = envs_mod.make_environment(kind, seed)
    if method.planner == "collision_free":
        metrics = rrt.run_baseline_episode(env, cfg=pcfg, max_iters=rrt_max_iters,
                                           seed=seed)
    else:
        from .planner import _decision_bounds, _decision_width

        width = _decision_width(method.controller_mode, env.model.n)
        bounds = np.tile(_decision_bounds(method.controller_mode, env.model.n, pcfg),
                         pcfg.horizon)
        scfg = cfg.solver_config(bounds, method.solver_variant)
        metrics = run_episode(env, pcfg, scfg, controller_mode=method.controller_mode,
                              seed=seed)
    row = {
        "env": kind,
        "seed": seed,
        "method": method.name,
        "success": bool(metrics.success),
        "completion_time_s": float(metrics.completion_time),
        "max_contact_force_N": float(metrics.max_contact_force),
    }
    return row, (kind, method.name, seed), metrics.trajectory


def run_suite(cfg: ExperimentConfig, jobs: int = 1, seed_offset: int = 0) -> ResultsTable:
    """Execute every (environment, method, seed) cell of the config.

    Failures (timeouts, no collision-free path) are recorded as rows with
    success = False; aggregation later excludes them from time means, matching
    the benchmark's Fail convention. Deterministic for a given config.
    """
    cells = []
    for e in cfg.environments:
        for m in cfg.methods:
            for s in e.seeds:
                cells.append((e.kind, m, s + seed_offset,
                              cfg.planner_overrides, cfg.solver_overrides,
                              cfg.rrt_max_iters))
    rows = []
    trajectories = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for row, key, traj in pool.map(_run_cell, cells):
                rows.append(row)
                trajectories[key] = traj
    else:
        for cell in cells:
            row, key, traj = _run_cell(cell)
            rows.append(row)
            trajectories[key] = traj
    rows.sort(key=lambda r: (r["env"], r["method"], r["seed"]))
    return ResultsTable(rows=rows, trajectories=trajectories)


# ---------------------------------------------------------------------------
# solver comparison
# ---------------------------------------------------------------------------

SOLVER_VARIANTS = ("vanilla_cmaes", "hybrid", "multi_gradient")


def solver_comparison(cfg: ExperimentConfig, steps: int = 10,
                      trials: Optional[list] = None) -> dict:
    """Mean cost decrease over the first `steps` solver steps per variant.

    Each trial optimizes the same (wall-environment state, seed) pair with
    every variant; stagnation is disabled so all variants run the full
    step count. Also reports mean wall-clock per plan call.
    """
    pcfg = cfg.planner_config()
    gains = ControlGains.defaults()
    if trials is None:
        wall_envs = [e for e in cfg.environments if e.kind == "wall"]
        if not wall_envs:
            raise ConfigError("environments: solver comparison requires a wall env")
        trials = [(s, s) for s in wall_envs[0].seeds]

    from .planner import _decision_bounds, _decision_width

    results = {v: {"decreases": [], "seconds": []} for v in SOLVER_VARIANTS}
    for env_seed, opt_seed in trials:
        env = envs_mod.make_environment("wall", env_seed)
        width = _decision_width(MODE_OPERATIONAL_PLUS_NULL, env.model.n)
        bounds = np.tile(_decision_bounds(MODE_OPERATIONAL_PLUS_NULL, env.model.n, pcfg),
                         pcfg.horizon)
        world = env.world0.copy()
        for variant in SOLVER_VARIANTS:
            scfg = cfg.solver_config(bounds, variant)
            scfg = dataclasses.replace(scfg, max_step=steps, stagnation_patience=10**9)
            t0 = time.perf_counter()
            plan = plan_step(world, env.goal, pcfg, scfg, env.model, gains,
                             mode=MODE_OPERATIONAL_PLUS_NULL, seed=opt_seed,
                             solver_steps=0)
            elapsed = time.perf_counter() - t0
            hist = plan.cost_history
            idx = min(steps, len(hist) - 1)
            results[variant]["decreases"].append(float(hist[0] - hist[idx]))
            results[variant]["seconds"].append(elapsed)
    return {
        v: {
            "mean_cost_decrease": float(np.mean(r["decreases"])),
            "decreases": r["decreases"],
            "mean_seconds_per_plan": float(np.mean(r["seconds"])),
        }
        for v, r in results.items()
    }


# ---------------------------------------------------------------------------
# report emission
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


class IoError(OSError):
    pass


def emit_report(table: ResultsTable, out_dir) -> list:
    """Write results.csv, summary.json, per-episode and force-profile CSVs.

    Re-running on the same table produces byte-identical files (stable row
    order, fixed 6-significant-digit float format).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "episodes").mkdir(exist_ok=True)
    except OSError as e:
        raise IoError(f"cannot create output directory {out}: {e}") from e
    written = []

    res = out / "results.csv"
    with open(res, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("env,method,seed,success,completion_time_s,max_contact_force_N\n")
        for r in table.rows:
            fh.write(",".join([
                r["env"], r["method"], str(r["seed"]), _fmt(r["success"]),
                _fmt(r["completion_time_s"]), _fmt(r["max_contact_force_N"]),
            ]) + "\n")
    written.append(res)

    summ = out / "summary.json"
    with open(summ, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(table.aggregates(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(summ)

    n_q = None
    for (env, method, seed), traj in sorted(table.trajectories.items()):
        arrays = traj.as_arrays()
        path = out / "episodes" / f"{env}_{method}_seed{seed}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            if len(arrays["times"]):
                n_q = arrays["q"].shape[1]
                cols = (["time_s"] + [f"q{i}" for i in range(n_q)]
                        + ["ee_x", "ee_y", "ee_z", "max_force_N"])
                fh.write(",".join(cols) + "\n")
                for i in range(len(arrays["times"])):
                    vals = ([arrays["times"][i]] + list(arrays["q"][i])
                            + list(arrays["ee"][i]) + [arrays["max_force"][i]])
                    fh.write(",".join(_fmt(float(v)) for v in vals) + "\n")
            else:
                fh.write("time_s\n")
        written.append(path)

    # Fig-4 style force profiles: one file per (env, seed), methods stacked
    by_env_seed = {}
    for (env, method, seed), traj in sorted(table.trajectories.items()):
        by_env_seed.setdefault((env, seed), []).append((method, traj))
    for (env, seed), entries in sorted(by_env_seed.items()):
        path = out / f"force_profile_{env}_seed{seed}.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("time_s,contact_force_N,method\n")
            for method, traj in entries:
                arrays = traj.as_arrays()
                for t, f in zip(arrays["profile_t"], arrays["profile_f"]):
                    fh.write(f"{_fmt(float(t))},{_fmt(float(f))},{method}\n")
        written.append(path)
    return written
