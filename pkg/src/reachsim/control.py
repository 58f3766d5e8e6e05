"""Operational-space impedance control with null-space projection.

Maps reference signals (a desired end-effector pose and a desired joint
posture) to joint torques: computed-torque operational control, a joint-space
PD projected through the dynamically consistent null space, and their sum.
The reference-posture variant is the same law with the desired posture pinned
to zero; direct torque mode passes raw torques through.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _kernels
from .robot import JointState, RobotModel, dynamics_batch
from .spatial import Pose, quat_log, quat_multiply, quat_conjugate, quat_rotate

MODE_OPERATIONAL_PLUS_NULL = "operational_plus_null"
MODE_REFERENCE_POSTURE = "reference_posture"
MODE_DIRECT_TORQUE = "direct_torque"

MODE_IDS = {
    MODE_OPERATIONAL_PLUS_NULL: _kernels.MODE_OP_NULL,
    MODE_REFERENCE_POSTURE: _kernels.MODE_REF_POSTURE,
    MODE_DIRECT_TORQUE: _kernels.MODE_DIRECT_TORQUE,
}


@dataclass(frozen=True)
class ControlGains:
    """Diagonal PD gains: operational (6) and joint-space (n) stiffness/damping."""

    kp: np.ndarray
    kd: np.ndarray
    kqp: np.ndarray
    kqd: np.ndarray

    def __post_init__(self):
        for name in ("kp", "kd", "kqp", "kqd"):
            v = np.asarray(getattr(self, name), dtype=float)
            if np.any(v < 0.0):
                raise ValueError(f"{name} must be nonnegative")
            object.__setattr__(self, name, v)

    @property
    def Kp(self) -> np.ndarray:
        return np.diag(self.kp)

    @property
    def Kd(self) -> np.ndarray:
        return np.diag(self.kd)

    @property
    def Kqp(self) -> np.ndarray:
        return np.diag(self.kqp)

    @property
    def Kqd(self) -> np.ndarray:
        return np.diag(self.kqd)

    @staticmethod
    def defaults(n: int = 7) -> "ControlGains":
        """Benchmark constants: Kp=880 I, Kd=100 I, Kqp=30 I, Kqd=I."""
        return ControlGains(
            kp=np.full(6, 880.0), kd=np.full(6, 100.0),
            kqp=np.full(n, 30.0), kqd=np.full(n, 1.0),
        )


@dataclass(frozen=True)
class ControlReferences:
    """Reference signals read by the control law (per the active mode)."""

    x_d: Optional[Pose] = None
    q_d: Optional[np.ndarray] = None
    raw_tau: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ControlLaw:
    """Mode + gains; references are supplied per call or per planned action."""

    mode: str
    gains: ControlGains
    references: Optional[ControlReferences] = None

    def __post_init__(self):
        if self.mode not in MODE_IDS:
            raise ValueError(f"unknown control mode {self.mode!r}")


def _world_pose_error(model: RobotModel, dyn, x_d: Pose) -> np.ndarray:
    """6-vector pose error with the angular part expressed in the world frame."""
    err = np.empty(6)
    err[:3] = dyn.chain.ee_pos[0] - x_d.translation
    from .spatial import matrix_to_quat

    q_ee = matrix_to_quat(dyn.chain.R_ee[0])
    rel = quat_multiply(quat_conjugate(x_d.rotation), q_ee)
    err[3:] = quat_rotate(x_d.rotation, quat_log(rel))
    return err


def operational_torque(model: RobotModel, joints: JointState, x_d: Pose,
                       gains: ControlGains) -> np.ndarray:
    """Computed-torque operational law: J^T Lambda (-Kp dx - Kd xdot) + C + g."""
    dyn = dynamics_batch(model, joints.q[None, :], joints.qdot[None, :])
    J, lam = dyn.J[0], dyn.lam[0]
    err = _world_pose_error(model, dyn, x_d)
    xdot = J @ joints.qdot
    wrench = lam @ (-gains.kp * err - gains.kd * xdot)
    return J.T @ wrench + dyn.bias[0] + dyn.gravity[0]


def null_torque(model: RobotModel, joints: JointState, q_d: np.ndarray,
                gains: ControlGains) -> np.ndarray:
    """Joint-space PD projected through N^T so it cannot move the end effector."""
    dyn = dynamics_batch(model, joints.q[None, :], joints.qdot[None, :])
    J, lam, Minv = dyn.J[0], dyn.lam[0], dyn.Minv[0]
    v = -gains.kqp * (joints.q - np.asarray(q_d, dtype=float)) - gains.kqd * joints.qdot
    return v - J.T @ (lam @ (J @ (Minv @ v)))


def control_torque(model: RobotModel, joints: JointState,
                   references: ControlReferences, gains: ControlGains,
                   mode: str = MODE_OPERATIONAL_PLUS_NULL) -> np.ndarray:
    """Combined control output for the given mode.

    operational_plus_null tracks (x_d, q_d); reference_posture is the same law
    with q_d = 0; direct_torque passes references.raw_tau through unchanged.
    """
    if mode == MODE_DIRECT_TORQUE:
        return np.asarray(references.raw_tau, dtype=float).copy()
    if mode == MODE_REFERENCE_POSTURE:
        q_d = np.zeros(model.n)
    else:
        q_d = np.asarray(references.q_d, dtype=float)
    dyn = dynamics_batch(model, joints.q[None, :], joints.qdot[None, :])
    J, lam, Minv = dyn.J[0], dyn.lam[0], dyn.Minv[0]
    err = _world_pose_error(model, dyn, references.x_d)
    xdot = J @ joints.qdot
    wrench = lam @ (-gains.kp * err - gains.kd * xdot)
    tau_op = J.T @ wrench + dyn.bias[0] + dyn.gravity[0]
    v = -gains.kqp * (joints.q - q_d) - gains.kqd * joints.qdot
    tau_null = v - J.T @ (lam @ (J @ (Minv @ v)))
    return tau_op + tau_null
