"""Collision-free baseline: RRT* in joint space plus open-loop tracking.

The planner treats obstacles at their initial poses as rigid (wall nodes are
spheres, the ball a sphere, plus the ground plane) and connects the start
configuration to an IK goal set. The resulting waypoint path is tracked by
the impedance controller without replanning.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ik
from .control import MODE_OPERATIONAL_PLUS_NULL, ControlGains
from .planner import EpisodeMetrics, PlannerConfig, TrajectoryLog, execute_interval
from .robot import fk_chain
from .sim import NumericalBlowup, PHYSICS_DT, SUBSTEPS_PER_INTERVAL
from .spatial import Pose, translational_distance


class IKFailure(RuntimeError):
    """The goal position admits no IK solution at all."""


@dataclass
class JointPath:
    """Ordered joint-space waypoints; consecutive pairs within the steer step."""

    waypoints: list  # of (n,) arrays

    @property
    def total_length(self) -> float:
        if len(self.waypoints) < 2:
            return 0.0
        w = np.asarray(self.waypoints)
        return float(np.sum(np.linalg.norm(np.diff(w, axis=0), axis=1)))


def _obstacle_spheres(env) -> tuple:
    """Static sphere centers/radii seen by the collision checker."""
    packed = env.scene.pack()
    centers = []
    radii = []
    for s, (pose, _) in enumerate(env.world0.rigid_obstacles):
        centers.append(pose.translation)
        radii.append(packed["sph_radius"][s])
    if len(env.world0.node_positions):
        centers.extend(env.world0.node_positions)
        radii.extend(packed["node_radius"])
    if centers:
        return np.asarray(centers), np.asarray(radii)
    return np.zeros((0, 3)), np.zeros(0)


def collision_check_batch(env, Q: np.ndarray) -> np.ndarray:
    """Vectorized capsule-vs-obstacle intersection test for (B, n) configs."""
    Q = np.atleast_2d(Q)
    model = env.model
    chain = fk_chain(model, Q)
    a = chain.origin  # (B, L, 3)
    b = chain.tip
    u = b - a
    L2 = np.maximum(np.sum(u * u, axis=-1), 1e-16)  # (B, L)
    hit = np.zeros(Q.shape[0], dtype=bool)
    centers, radii = _obstacle_spheres(env)
    if len(centers):
        # closest point on each capsule segment to each sphere center
        diff = centers[None, None, :, :] - a[:, :, None, :]  # (B, L, S, 3)
        t = np.clip(np.einsum("blsx,blx->bls", diff, u) / L2[:, :, None], 0.0, 1.0)
        closest = a[:, :, None, :] + t[..., None] * u[:, :, None, :]
        dist = np.linalg.norm(centers[None, None, :, :] - closest, axis=-1)
        pen = (model.capsule_radii[None, :, None] + radii[None, None, :]) - dist
        hit |= np.any(pen > 0.0, axis=(1, 2))
    if env.scene.ground:
        lowest = np.minimum(a[..., 2], b[..., 2])
        hit |= np.any(lowest < model.capsule_radii[None, :], axis=1)
    return hit


def collision_check(env, q: np.ndarray) -> bool:
    """True iff any robot capsule intersects any obstacle primitive at q."""
    return bool(collision_check_batch(env, np.asarray(q, dtype=float)[None, :])[0])


def _edge_free(env, q_a: np.ndarray, q_b: np.ndarray, resolution: float) -> bool:
    dist = float(np.linalg.norm(q_b - q_a))
    steps = max(2, int(np.ceil(dist / resolution)) + 1)
    line = q_a[None, :] + np.linspace(0.0, 1.0, steps)[:, None] * (q_b - q_a)[None, :]
    return not collision_check_batch(env, line).any()


def rrt_star_plan(
    env,
    q_start: np.ndarray,
    goal: Pose,
    max_iters: int = 4000,
    rng: Optional[np.random.Generator] = None,
    steer_step: float = 0.2,
    goal_bias: float = 0.1,
    gamma_rrt: float = 2.0,
    resolution: float = 0.05,
    ik_restarts: int = 50,
) -> Optional[JointPath]:
    """Asymptotically optimal joint-space planning toward an IK goal set.

    Returns the best path found within the iteration budget, or None when no
    collision-free connection exists (the expected wall-environment outcome).
    Raises IKFailure when the goal position is kinematically unreachable.
    """
    rng = rng or np.random.default_rng(0)
    model = env.model
    n = model.n
    q_start = np.asarray(q_start, dtype=float)

    goal_sols = ik.random_ik_solutions(
        model, goal.translation, rng, restarts=ik_restarts,
        max_solutions=8, tol=min(5e-3, 0.5 * 0.01), seed_q=q_start,
    )
    if not goal_sols:
        raise IKFailure("goal position unreachable for the arm")
    goal_free = [q for q in goal_sols if not collision_check(env, q)]
    if not goal_free:
        return None  # every goal configuration collides: no collision-free plan
    goal_set = np.asarray(goal_free)

    if collision_check(env, q_start):
        return None

    nodes = np.empty((max_iters + 1, n))
    parent = np.full(max_iters + 1, -1, dtype=np.int64)
    cost = np.zeros(max_iters + 1)
    nodes[0] = q_start
    count = 1

    best_goal_cost = np.inf
    best_goal_node = -1
    best_goal_q = None
    lim = model.joint_limits

    for it in range(max_iters):
        if rng.uniform() < goal_bias:
            q_rand = goal_set[rng.integers(len(goal_set))]
        else:
            q_rand = rng.uniform(-lim, lim)
        d2 = np.sum((nodes[:count] - q_rand[None, :]) ** 2, axis=1)
        near_i = int(np.argmin(d2))
        q_near = nodes[near_i]
        delta = q_rand - q_near
        dist = float(np.linalg.norm(delta))
        if dist < 1e-9:
            continue
        q_new = q_rand if dist <= steer_step else q_near + delta * (steer_step / dist)
        if collision_check(env, q_new):
            continue

        radius = min(steer_step * 2.5,
                     gamma_rrt * (np.log(count + 1) / (count + 1)) ** (1.0 / n))
        d_new = np.linalg.norm(nodes[:count] - q_new[None, :], axis=1)
        neighbors = np.nonzero(d_new <= max(radius, steer_step + 1e-12))[0]

        # choose the cheapest valid parent
        best_parent, best_cost = -1, np.inf
        order = np.argsort(cost[neighbors] + d_new[neighbors], kind="stable")
        for j in neighbors[order]:
            c = cost[j] + d_new[j]
            if c >= best_cost:
                break
            if _edge_free(env, nodes[j], q_new, resolution):
                best_parent, best_cost = int(j), float(c)
                break
        if best_parent < 0:
            continue
        nodes[count] = q_new
        parent[count] = best_parent
        cost[count] = best_cost
        new_i = count
        count += 1

        # rewire neighbors through the new node
        for j in neighbors:
            c_through = best_cost + d_new[j]
            if c_through + 1e-12 < cost[j] and _edge_free(env, q_new, nodes[j], resolution):
                parent[j] = new_i
                cost[j] = c_through

        # try connecting to the goal set
        d_goal = np.linalg.norm(goal_set - q_new[None, :], axis=1)
        g = int(np.argmin(d_goal))
        if d_goal[g] <= steer_step and best_cost + d_goal[g] < best_goal_cost:
            if _edge_free(env, q_new, goal_set[g], resolution):
                best_goal_cost = best_cost + d_goal[g]
                best_goal_node = new_i
                best_goal_q = goal_set[g]

    if best_goal_node < 0:
        return None
    path = [best_goal_q]
    i = best_goal_node
    while i >= 0:
        path.append(nodes[i].copy())
        i = parent[i]
    path.reverse()
    return JointPath(waypoints=path)


def track_path(env, path: JointPath, gains: Optional[ControlGains] = None,
               cfg: Optional[PlannerConfig] = None,
               waypoint_tol: float = 0.05) -> EpisodeMetrics:
    """Track the waypoints open loop (no replanning) with the impedance law.

    Each waypoint becomes an operational target (its FK pose) plus a
    null-space target; the tracker advances when the joint error drops below
    waypoint_tol and stops at the episode time limit.
    """
    from .robot import forward_kinematics
    from .spatial import quat_conjugate, quat_log, quat_multiply, quat_to_matrix

    model = env.model
    cfg = cfg or PlannerConfig()
    gains = gains or ControlGains.defaults(model.n)
    world = env.world0.copy()
    if world.ee_pose is None:
        world.ee_pose = forward_kinematics(model, world.joints.q)
    goal = env.goal
    log = TrajectoryLog()
    max_force = 0.0

    if translational_distance(world.ee_pose, goal) <= cfg.delta:
        return EpisodeMetrics(success=True, completion_time=0.0,
                              max_contact_force=0.0, trajectory=log)

    waypoints = [np.asarray(w, dtype=float) for w in path.waypoints]
    wp_poses = [forward_kinematics(model, w) for w in waypoints]
    idx = 0
    n_intervals = int(np.ceil(cfg.max_episode_time / (SUBSTEPS_PER_INTERVAL * PHYSICS_DT)))
    for _ in range(n_intervals):
        target_q = waypoints[idx]
        target_pose = wp_poses[idx]
        # express the absolute reference as the delta the tracker consumes
        dx_lin = target_pose.translation - world.ee_pose.translation
        rel = quat_multiply(quat_conjugate(world.ee_pose.rotation), target_pose.rotation)
        dx_rot = quat_log(rel)
        dq = target_q - world.joints.q
        action = np.concatenate([dx_lin, dx_rot, dq])
        t_start = world.time
        try:
            new_world, batch = execute_interval(world, model, gains,
                                                MODE_OPERATIONAL_PLUS_NULL, action)
        except NumericalBlowup:
            return EpisodeMetrics(success=False, completion_time=cfg.max_episode_time,
                                  max_contact_force=max_force, trajectory=log,
                                  failure_reason="numerical_blowup")
        profile = batch.force_profile[0]
        ee_prof = batch.ee_profile[0]
        log.times.append(t_start)
        log.q.append(new_world.joints.q.copy())
        log.ee.append(new_world.ee_pose.translation.copy())
        log.max_force.append(float(profile.max()))
        log.actions.append(action.copy())
        log.profile_t.extend((t_start + PHYSICS_DT * np.arange(len(profile))).tolist())
        log.profile_f.extend(profile.tolist())
        max_force = max(max_force, float(profile.max()))

        world = new_world
        if idx == len(waypoints) - 1:
            dists = np.linalg.norm(ee_prof - goal.translation[None, :], axis=1)
            hit = np.nonzero(dists <= cfg.delta)[0]
            if len(hit):
                t_hit = t_start + PHYSICS_DT * int(hit[0])
                return EpisodeMetrics(success=True, completion_time=float(t_hit),
                                      max_contact_force=max_force, trajectory=log)
            if translational_distance(world.ee_pose, goal) <= cfg.delta:
                return EpisodeMetrics(success=True, completion_time=float(world.time),
                                      max_contact_force=max_force, trajectory=log)
        elif np.max(np.abs(world.joints.q - target_q)) < waypoint_tol:
            idx += 1
        if world.time >= cfg.max_episode_time:
            break

    return EpisodeMetrics(success=False, completion_time=cfg.max_episode_time,
                          max_contact_force=max_force, trajectory=log,
                          failure_reason="timeout")


def run_baseline_episode(env, cfg: Optional[PlannerConfig] = None,
                         max_iters: int = 4000,
                         seed: Optional[int] = None) -> EpisodeMetrics:
    """Plan with RRT* once and track the result; Fail when no plan exists."""
    cfg = cfg or PlannerConfig()
    rng = np.random.default_rng(env.seed if seed is None else seed)
    try:
        path = rrt_star_plan(env, env.home_q, env.goal, max_iters=max_iters, rng=rng)
    except IKFailure:
        path = None
    if path is None:
        return EpisodeMetrics(success=False, completion_time=cfg.max_episode_time,
                              max_contact_force=0.0, trajectory=TrajectoryLog(),
                              failure_reason="no_collision_free_path")
    return track_path(env, path, cfg=cfg)
