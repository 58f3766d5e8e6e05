"""Receding-horizon trajectory optimization in penalty form.

Each control step the planner optimizes an H-step sequence of reference
increments a = {dx, dq} with the hybrid solver, executes the first action for
one control interval, and replans warm-started from the shifted solution.
The stage cost pulls the end effector toward the goal, rewards moving away
from the step's start state (escaping local minima), and hinges on contact
force above the permitted bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import sim
from .control import MODE_DIRECT_TORQUE, MODE_IDS, MODE_OPERATIONAL_PLUS_NULL, \
    MODE_REFERENCE_POSTURE, ControlGains
from .robot import RobotModel
from .sim import (
    ACTION_BOUNDS_LIN,
    ACTION_BOUNDS_NULL,
    ACTION_BOUNDS_ROT,
    CONTROL_INTERVAL,
    PHYSICS_DT,
    SUBSTEPS_PER_INTERVAL,
    WorldState,
    action_bounds,
    rollout_batch,
)
from .solver import SolverConfig, optimize
from .spatial import Pose, translational_distance


class SolverFailure(RuntimeError):
    """Every candidate rollout diverged; the episode cannot continue."""


BLOWUP_COST = 1.0e9


@dataclass(frozen=True)
class Action:
    """One planner decision: operational increment dx and null increment dq."""

    dx: np.ndarray  # (6,) 3 m + 3 rad
    dq: np.ndarray  # (n,) rad

    def __post_init__(self):
        dx = np.asarray(self.dx, dtype=float).reshape(6)
        dq = np.asarray(self.dq, dtype=float)
        tol = 1e-9
        if np.any(np.abs(dx[:3]) > ACTION_BOUNDS_LIN + tol):
            raise ValueError("dx linear component exceeds bounds")
        if np.any(np.abs(dx[3:]) > ACTION_BOUNDS_ROT + tol):
            raise ValueError("dx rotational component exceeds bounds")
        if np.any(np.abs(dq) > ACTION_BOUNDS_NULL + tol):
            raise ValueError("dq exceeds bounds")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dq", dq)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.dx, self.dq])

    @staticmethod
    def from_vector(v: np.ndarray) -> "Action":
        v = np.asarray(v, dtype=float)
        return Action(dx=v[:6], dq=v[6:])

    @staticmethod
    def zero(n: int = 7) -> "Action":
        return Action(dx=np.zeros(6), dq=np.zeros(n))


@dataclass
class PlannerConfig:
    """Receding-horizon parameters (defaults are the benchmark constants)."""

    horizon: int = 3
    lambda1: float = 1.0
    lambda2: float = 0.2
    lambda3: float = 5.0
    epsilon: float = 10.0  # N, permitted contact force
    delta: float = 0.01  # m, success radius
    max_episode_time: float = 60.0  # s
    plan_solver_steps: int = 8  # per-replan solver budget (warm starts stagnate fast)
    # internal model resolution for planning rollouts; execution always runs
    # at PHYSICS_DT, the planner may predict on a coarser (cheaper) grid
    plan_dt: float = 0.01
    torque_bound: float = 40.0  # N m, box for the direct-torque planning mode

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if min(self.lambda1, self.lambda2, self.lambda3) <= 0.0:
            raise ValueError("cost weights must be positive")
        steps = CONTROL_INTERVAL / self.plan_dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("plan_dt must divide the control interval")

    @property
    def plan_substeps(self) -> int:
        return int(round(CONTROL_INTERVAL / self.plan_dt))


@dataclass
class TrajectoryLog:
    """Per-control-interval log plus the substep force profile."""

    times: list = field(default_factory=list)  # interval start times
    q: list = field(default_factory=list)  # (n,) at interval end
    ee: list = field(default_factory=list)  # (3,) at interval end
    max_force: list = field(default_factory=list)  # per interval
    actions: list = field(default_factory=list)  # executed flat actions
    profile_t: list = field(default_factory=list)  # substep times
    profile_f: list = field(default_factory=list)  # substep forces

    def as_arrays(self) -> dict:
        return {
            "times": np.asarray(self.times),
            "q": np.asarray(self.q),
            "ee": np.asarray(self.ee),
            "max_force": np.asarray(self.max_force),
            "profile_t": np.asarray(self.profile_t),
            "profile_f": np.asarray(self.profile_f),
        }


@dataclass
class EpisodeMetrics:
    """Table-style episode outcome."""

    success: bool
    completion_time: float  # s; max_episode_time on failure
    max_contact_force: float  # N over the whole episode
    trajectory: TrajectoryLog
    failure_reason: str = ""

    def __post_init__(self):
        if self.success and self.trajectory.ee:
            pass  # invariant (final distance <= delta) is enforced by the runner


def stage_cost(s_next: WorldState, s_k: WorldState, s_goal: Pose, max_force: float,
               cfg: PlannerConfig) -> float:
    """One horizon stage of the penalty-form objective."""
    d_goal = translational_distance(s_next.ee_pose, s_goal)
    d_start = translational_distance(s_next.ee_pose, s_k.ee_pose)
    hinge = max(0.0, max_force - cfg.epsilon)
    return cfg.lambda1 * d_goal - cfg.lambda2 * d_start + cfg.lambda3 * hinge


def _decision_width(mode: str, n: int) -> int:
    if mode == MODE_REFERENCE_POSTURE:
        return 6
    if mode == MODE_DIRECT_TORQUE:
        return n
    return 6 + n


def _decision_bounds(mode: str, n: int, cfg: PlannerConfig) -> np.ndarray:
    if mode == MODE_DIRECT_TORQUE:
        return np.full(n, cfg.torque_bound)
    full = action_bounds(n)
    return full[:6] if mode == MODE_REFERENCE_POSTURE else full


def _embed_actions(flat: np.ndarray, mode: str, n: int, H: int) -> np.ndarray:
    """(B, H*width) decision matrix -> (B, H, 13) kernel action array."""
    B = flat.shape[0]
    width = _decision_width(mode, n)
    acts = np.zeros((B, H, 6 + n))
    block = flat.reshape(B, H, width)
    if mode == MODE_DIRECT_TORQUE:
        acts[:, :, :n] = block
    else:
        acts[:, :, :width] = block
    return acts


class _Objective:
    """Batched rollout cost L(A) for the solver; tracks blowup statistics."""

    def __init__(self, model: RobotModel, world: WorldState, goal: Pose,
                 cfg: PlannerConfig, gains: ControlGains, mode: str,
                 dt: float = PHYSICS_DT, substeps: int = SUBSTEPS_PER_INTERVAL):
        self.model = model
        self.world = world
        self.goal_pos = goal.translation
        self.cfg = cfg
        self.gains = gains
        self.mode = mode
        self.mode_id = MODE_IDS[mode]
        self.dt = dt
        self.substeps = substeps
        self.start_ee = world.ee_pose.translation
        self.evaluations = 0
        self.blowups = 0

    def __call__(self, A: np.ndarray) -> np.ndarray:
        A = np.atleast_2d(np.asarray(A, dtype=float))
        H = self.cfg.horizon
        acts = _embed_actions(A, self.mode, self.model.n, H)
        g = self.gains
        batch = rollout_batch(self.model, self.world, acts, self.mode_id,
                              g.kp, g.kd, g.kqp, g.kqd, dt=self.dt,
                              substeps=self.substeps)
        d_goal = np.linalg.norm(batch.ee_positions - self.goal_pos[None, None, :], axis=-1)
        d_start = np.linalg.norm(batch.ee_positions - self.start_ee[None, None, :], axis=-1)
        hinge = np.maximum(0.0, batch.max_forces - self.cfg.epsilon)
        cost = np.sum(self.cfg.lambda1 * d_goal - self.cfg.lambda2 * d_start
                      + self.cfg.lambda3 * hinge, axis=1)
        blown = batch.blown_up
        cost = np.where(blown, BLOWUP_COST, cost)
        self.evaluations += len(cost)
        self.blowups += int(blown.sum())
        return cost

    def gradient(self, m: np.ndarray, h_rel: float = 1e-4) -> np.ndarray:
        """Central finite differences with per-coordinate step h_rel * bound."""
        bounds = np.tile(_decision_bounds(self.mode, self.model.n, self.cfg),
                         self.cfg.horizon)
        steps = h_rel * bounds
        D = len(m)
        pop = np.repeat(m[None, :], 2 * D, axis=0)
        idx = np.arange(D)
        pop[2 * idx, idx] += steps
        pop[2 * idx + 1, idx] -= steps
        vals = self(pop)
        return (vals[0::2] - vals[1::2]) / (2.0 * steps)


@dataclass
class PlanResult:
    actions: np.ndarray  # (H, width) decision blocks
    cost_history: np.ndarray
    initial_mean: np.ndarray  # warm-start mean actually used (flat)
    best_cost: float


def plan_step(world: WorldState, goal: Pose, cfg: PlannerConfig,
              solver_cfg: Optional[SolverConfig], model: RobotModel,
              gains: ControlGains, mode: str = MODE_OPERATIONAL_PLUS_NULL,
              warm_start: Optional[np.ndarray] = None, seed=0,
              solver_steps: Optional[int] = None) -> PlanResult:
    """Optimize one H-step action sequence from the current state.

    warm_start is the previous plan (H, width); it is shifted left one action
    and zero-padded to form the initial solver mean. solver_steps caps the
    solver budget for this replan (None uses cfg.plan_solver_steps; 0 keeps
    the solver config untouched). Raises SolverFailure if every rollout of
    the search diverged.
    """
    n = model.n
    width = _decision_width(mode, n)
    H = cfg.horizon
    bounds = np.tile(_decision_bounds(mode, n, cfg), H)
    if solver_cfg is None:
        solver_cfg = SolverConfig(bounds=bounds)
    elif solver_cfg.bounds.shape != (H * width,):
        raise ValueError("solver bounds do not match the decision dimension")
    if solver_steps is None:
        solver_steps = cfg.plan_solver_steps
    if solver_steps and solver_steps > 0:
        from dataclasses import replace as _replace

        solver_cfg = _replace(solver_cfg, max_step=solver_steps)

    if warm_start is None:
        m0 = np.zeros(H * width)
    else:
        warm = np.asarray(warm_start, dtype=float).reshape(H, width)
        shifted = np.vstack([warm[1:], np.zeros((1, width))])
        m0 = shifted.reshape(-1)

    objective = _Objective(model, world, goal, cfg, gains, mode,
                           dt=cfg.plan_dt, substeps=cfg.plan_substeps)
    result = optimize(objective, objective.gradient, solver_cfg, seed=seed, m0=m0)
    if result.best_cost >= BLOWUP_COST:
        raise SolverFailure("all candidate rollouts diverged")
    return PlanResult(
        actions=result.best.reshape(H, width),
        cost_history=result.cost_history,
        initial_mean=m0,
        best_cost=result.best_cost,
    )


def execute_interval(world: WorldState, model: RobotModel, gains: ControlGains,
                     mode: str, action_row: np.ndarray,
                     dt: float = PHYSICS_DT,
                     substeps: int = SUBSTEPS_PER_INTERVAL):
    """Run one control interval of the first planned action (B=1 rollout)."""
    acts = _embed_actions(action_row[None, None, :] if action_row.ndim == 1
                          else action_row[None], mode, model.n, 1)
    g = gains
    batch = rollout_batch(model, world, acts, MODE_IDS[mode], g.kp, g.kd, g.kqp,
                          g.kqd, dt=dt, substeps=substeps)
    if batch.blown_up[0]:
        raise sim.NumericalBlowup("executed interval diverged")
    new_world = sim._state_from_batch(world, batch, 0, 0, substeps, dt)
    return new_world, batch


def run_episode(env, cfg: PlannerConfig, solver_cfg: Optional[SolverConfig],
                controller_mode: str = MODE_OPERATIONAL_PLUS_NULL,
                gains: Optional[ControlGains] = None,
                seed: Optional[int] = None) -> EpisodeMetrics:
    """Plan/execute/replan until the goal is inside delta or time runs out."""
    model = env.model
    gains = gains or ControlGains.defaults(model.n)
    base_seed = env.seed if seed is None else seed
    world = env.world0.copy()
    if world.ee_pose is None:
        from .robot import forward_kinematics

        world.ee_pose = forward_kinematics(model, world.joints.q)
    goal = env.goal
    log = TrajectoryLog()
    max_force = 0.0
    warm = None

    if translational_distance(world.ee_pose, goal) <= cfg.delta:
        return EpisodeMetrics(success=True, completion_time=0.0,
                              max_contact_force=0.0, trajectory=log)

    n_intervals = int(np.ceil(cfg.max_episode_time / (SUBSTEPS_PER_INTERVAL * PHYSICS_DT)))
    for step_idx in range(n_intervals):
        plan_seed = np.random.SeedSequence((base_seed, step_idx)).generate_state(1)[0]
        try:
            plan = plan_step(world, goal, cfg, solver_cfg, model, gains,
                             mode=controller_mode, warm_start=warm, seed=plan_seed)
        except SolverFailure:
            return EpisodeMetrics(success=False, completion_time=cfg.max_episode_time,
                                  max_contact_force=max_force, trajectory=log,
                                  failure_reason="solver_failure")
        t_start = world.time
        try:
            new_world, batch = execute_interval(world, model, gains, controller_mode,
                                                plan.actions[0])
        except sim.NumericalBlowup:
            return EpisodeMetrics(success=False, completion_time=cfg.max_episode_time,
                                  max_contact_force=max_force, trajectory=log,
                                  failure_reason="numerical_blowup")
        warm = plan.actions

        profile = batch.force_profile[0]
        ee_prof = batch.ee_profile[0]
        sub_t = t_start + PHYSICS_DT * np.arange(len(profile))
        log.times.append(t_start)
        log.q.append(new_world.joints.q.copy())
        log.ee.append(new_world.ee_pose.translation.copy())
        log.max_force.append(float(profile.max()))
        log.actions.append(plan.actions[0].copy())
        log.profile_t.extend(sub_t.tolist())
        log.profile_f.extend(profile.tolist())
        max_force = max(max_force, float(profile.max()))

        # success at substep resolution: ee_prof[s] is the state at t_start + s*dt
        dists = np.linalg.norm(ee_prof - goal.translation[None, :], axis=1)
        hit = np.nonzero(dists <= cfg.delta)[0]
        if len(hit):
            t_hit = t_start + PHYSICS_DT * int(hit[0])
            return EpisodeMetrics(success=True, completion_time=float(t_hit),
                                  max_contact_force=max_force, trajectory=log)
        world = new_world
        if translational_distance(world.ee_pose, goal) <= cfg.delta:
            return EpisodeMetrics(success=True, completion_time=float(world.time),
                                  max_contact_force=max_force, trajectory=log)
        if world.time >= cfg.max_episode_time:
            break

    return EpisodeMetrics(success=False, completion_time=cfg.max_episode_time,
                          max_contact_force=max_force, trajectory=log,
                          failure_reason="timeout")
