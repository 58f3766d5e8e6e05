"""Numeric position-only inverse kinematics (damped least squares).

The benchmark's success criterion is translational, so IK solves for the
end-effector position and spends the arm's redundancy on staying close to a
pull configuration inside the joint limits.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .robot import RobotModel, fk_chain, ee_jacobian


def solve_position_ik(
    model: RobotModel,
    target_pos: np.ndarray,
    q0: np.ndarray,
    tol: float = 1e-4,
    max_iters: int = 200,
    pull: Optional[np.ndarray] = None,
    damping: float = 1e-3,
    step_limit: float = 0.4,
) -> Optional[np.ndarray]:
    """Return a joint configuration whose EE position is within tol of the
    target, or None if the iteration fails to converge."""
    target = np.asarray(target_pos, dtype=float)
    q = np.asarray(q0, dtype=float).copy()
    pull_q = np.asarray(pull, dtype=float) if pull is not None else q0.copy()
    lim = model.joint_limits
    for _ in range(max_iters):
        chain = fk_chain(model, q[None, :])
        err = target - chain.ee_pos[0]
        err_norm = np.linalg.norm(err)
        if err_norm < tol:
            return q
        Jp = ee_jacobian(chain)[0][:3]
        A = Jp @ Jp.T + damping * np.eye(3)
        dq = Jp.T @ np.linalg.solve(A, err)
        if err_norm > 0.02:
            # redundancy resolution only while far out; the damped projector
            # leaks task error, which would stall the final millimetres
            null = np.eye(model.n) - Jp.T @ np.linalg.solve(A, Jp)
            dq = dq + 0.15 * (null @ (pull_q - q))
        norm = np.linalg.norm(dq)
        if norm > step_limit:
            dq *= step_limit / norm
        q = np.clip(q + dq, -lim, lim)
    return None


def random_ik_solutions(
    model: RobotModel,
    target_pos: np.ndarray,
    rng: np.random.Generator,
    restarts: int = 30,
    max_solutions: int = 8,
    tol: float = 1e-3,
    seed_q: Optional[np.ndarray] = None,
) -> list:
    """Collect distinct IK solutions from random restarts within joint limits."""
    sols = []
    lim = model.joint_limits
    starts = []
    if seed_q is not None:
        starts.append(np.asarray(seed_q, dtype=float))
    for _ in range(restarts):
        starts.append(rng.uniform(-0.8, 0.8, model.n) * lim)
    for q0 in starts:
        q = solve_position_ik(model, target_pos, q0, tol=tol)
        if q is None:
            continue
        if all(np.linalg.norm(q - s) > 0.2 for s in sols):
            sols.append(q)
        if len(sols) >= max_solutions:
            break
    return sols
