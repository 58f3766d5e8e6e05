"""Kinematics and rigid-body dynamics of a serial revolute chain with capsule links.

The chain is described by per-joint origin offsets and rotation axes (all link
frames axis-aligned at the zero configuration), link masses, and capsule
geometry; link inertias are those of uniform solid cylinders spanning each
link segment. Every quantity is computed batched over a leading axis so a
population of rollout candidates shares one numpy call per operation.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass
from importlib import resources
from typing import NamedTuple

import numpy as np

from .spatial import Pose, matrix_to_quat

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SINGULARITY_THRESHOLD = 1e-4
SINGULARITY_DAMPING = 1e-4


@dataclass(frozen=True)
class RobotModel:
    """Immutable kinematic/dynamic description of the arm.

    joint_offsets[i] is the origin of joint i in its parent frame (base frame
    for i = 0); link_tips[i] is the far end of link i's capsule segment in
    link i's own frame (the next joint origin, or the tool tip for the last
    link). Axes are unit vectors in the parent frame.
    """

    name: str
    joint_offsets: np.ndarray  # (n, 3) m
    joint_axes: np.ndarray  # (n, 3)
    joint_limits: np.ndarray  # (n,) rad, symmetric
    link_masses: np.ndarray  # (n,) kg
    link_tips: np.ndarray  # (n, 3) m
    capsule_radii: np.ndarray  # (n,) m
    gravity: np.ndarray  # (3,) m/s^2
    link_inertias: np.ndarray  # (n, 3, 3) about COM, link frame
    link_coms: np.ndarray  # (n, 3) link frame

    @property
    def n(self) -> int:
        return self.joint_offsets.shape[0]

    @staticmethod
    def build(
        name: str,
        joint_offsets,
        joint_axes,
        joint_limits,
        link_masses,
        link_tips,
        capsule_radii,
        gravity=(0.0, 0.0, -9.81),
    ) -> "RobotModel":
        offsets = np.asarray(joint_offsets, dtype=float)
        axes = np.asarray(joint_axes, dtype=float)
        axes = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
        limits = np.asarray(joint_limits, dtype=float)
        masses = np.asarray(link_masses, dtype=float)
        tips = np.asarray(link_tips, dtype=float)
        radii = np.asarray(capsule_radii, dtype=float)
        n = offsets.shape[0]
        if not (axes.shape == (n, 3) and tips.shape == (n, 3) and masses.shape == (n,)):
            raise ValueError("inconsistent model array shapes")
        if np.any(masses <= 0.0):
            raise ValueError("link masses must be positive")
        if np.any(radii <= 0.0):
            raise ValueError("capsule radii must be positive")
        inertias = np.empty((n, 3, 3))
        for i in range(n):
            inertias[i] = _cylinder_inertia(masses[i], radii[i], tips[i])
        return RobotModel(
            name=name,
            joint_offsets=offsets,
            joint_axes=axes,
            joint_limits=limits,
            link_masses=masses,
            link_tips=tips,
            capsule_radii=radii,
            gravity=np.asarray(gravity, dtype=float),
            link_inertias=inertias,
            link_coms=0.5 * tips,
        )


def _cylinder_inertia(mass: float, radius: float, tip: np.ndarray) -> np.ndarray:
    """Inertia about the COM of a uniform solid cylinder spanning 0 -> tip."""
    length = float(np.linalg.norm(tip))
    axial = 0.5 * mass * radius**2
    perp = mass * (3.0 * radius**2 + length**2) / 12.0
    if length < 1e-9:
        return np.eye(3) * axial
    d = tip / length
    outer = np.outer(d, d)
    return axial * outer + perp * (np.eye(3) - outer)


def load_robot_model(path=None) -> RobotModel:
    """Load a RobotModel from a TOML model file (default: bundled 7-DOF arm).

    Schema: top-level name, gravity, capsule_radius, ee_offset, then one
    [[joints]] table per joint with offset, axis, limit, and mass. See
    README for the documented field meanings.
    """
    if path is None:
        with resources.files("reachsim").joinpath("data/iiwa14.toml").open("rb") as fh:
            raw = tomllib.load(fh)
    else:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    joints = raw["joints"]
    n = len(joints)
    offsets = np.array([j["offset"] for j in joints], dtype=float)
    axes = np.array([j["axis"] for j in joints], dtype=float)
    limits = np.array([j["limit"] for j in joints], dtype=float)
    masses = np.array([j["mass"] for j in joints], dtype=float)
    tips = np.empty((n, 3))
    tips[:-1] = offsets[1:]
    tips[-1] = np.asarray(raw["ee_offset"], dtype=float)
    radius = float(raw.get("capsule_radius", 0.06))
    return RobotModel.build(
        name=raw.get("name", "arm"),
        joint_offsets=offsets,
        joint_axes=axes,
        joint_limits=limits,
        link_masses=masses,
        link_tips=tips,
        capsule_radii=np.full(n, radius),
        gravity=raw.get("gravity", (0.0, 0.0, -9.81)),
    )


@dataclass
class JointState:
    """Joint positions (rad) and velocities (rad/s)."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.qdot = np.asarray(self.qdot, dtype=float)
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qdot))):
            raise ValueError("joint state must be finite")

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.qdot.copy())


class Chain(NamedTuple):
    """Batched forward-kinematics products shared by dynamics, control, contacts."""

    R: np.ndarray  # (B, n, 3, 3) world link rotations
    origin: np.ndarray  # (B, n, 3) world joint origins
    axis: np.ndarray  # (B, n, 3) world joint axes
    com: np.ndarray  # (B, n, 3) world link COMs
    tip: np.ndarray  # (B, n, 3) world capsule far endpoints
    ee_pos: np.ndarray  # (B, 3)
    R_ee: np.ndarray  # (B, 3, 3)


class Dynamics(NamedTuple):
    """Everything one simulation substep needs, batched."""

    chain: Chain
    J: np.ndarray  # (B, 6, n) end-effector Jacobian [linear; angular]
    M: np.ndarray  # (B, n, n)
    Minv: np.ndarray  # (B, n, n)
    bias: np.ndarray  # (B, n) Coriolis/centrifugal
    gravity: np.ndarray  # (B, n)
    lam: np.ndarray  # (B, 6, 6) operational-space inertia (damped if near singular)
    sigma_min: np.ndarray  # (B,) smallest singular value of J
    near_singular: np.ndarray  # (B,) bool


def fk_chain(model: RobotModel, q: np.ndarray) -> Chain:
    """Batched forward kinematics; q has shape (B, n)."""
    q = np.atleast_2d(q)
    B, n = q.shape
    R = np.empty((B, n, 3, 3))
    origin = np.empty((B, n, 3))
    axis = np.empty((B, n, 3))
    R_prev = np.broadcast_to(np.eye(3), (B, 3, 3))
    o_prev = np.zeros((B, 3))
    for j in range(n):
        a = model.joint_axes[j]
        K = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
        K2 = K @ K
        s = np.sin(q[:, j])[:, None, None]
        c = (1.0 - np.cos(q[:, j]))[:, None, None]
        R_local = np.eye(3) + s * K + c * K2
        o_j = o_prev + R_prev @ model.joint_offsets[j]
        z_j = R_prev @ a
        R_j = R_prev @ R_local
        R[:, j] = R_j
        origin[:, j] = o_j
        axis[:, j] = z_j
        R_prev, o_prev = R_j, o_j
    com = origin + np.einsum("bjxy,jy->bjx", R, model.link_coms)
    tip = origin + np.einsum("bjxy,jy->bjx", R, model.link_tips)
    ee_pos = tip[:, -1]
    return Chain(R=R, origin=origin, axis=axis, com=com, tip=tip, ee_pos=ee_pos, R_ee=R[:, -1])


def _lower_mask(n: int) -> np.ndarray:
    # mask[i, j] = 1 where joint j moves link i (j <= i)
    return np.tril(np.ones((n, n)))


def _com_jacobians(model: RobotModel, chain: Chain) -> np.ndarray:
    """Linear COM Jacobians, (B, link i, joint j, 3)."""
    n = model.n
    mask = _lower_mask(n)
    diff = chain.com[:, :, None, :] - chain.origin[:, None, :, :]
    jc = np.cross(chain.axis[:, None, :, :], diff)
    return jc * mask[None, :, :, None]


def ee_jacobian(chain: Chain) -> np.ndarray:
    """End-effector Jacobian (B, 6, n): rows are [linear; angular] maps."""
    diff = chain.ee_pos[:, None, :] - chain.origin
    lin = np.cross(chain.axis, diff)
    J = np.concatenate([lin, chain.axis], axis=-1)  # (B, n, 6)
    return np.swapaxes(J, 1, 2)


def dynamics_batch(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> Dynamics:
    """One-pass batched computation of FK, Jacobian, M, bias, gravity and lambda."""
    q = np.atleast_2d(q)
    qdot = np.atleast_2d(qdot)
    B, n = q.shape
    chain = fk_chain(model, q)
    mask = _lower_mask(n)
    m = model.link_masses

    # world COM Jacobians and angular Jacobians
    Jc = _com_jacobians(model, chain)  # (B, i, j, 3)
    Jw = np.broadcast_to(chain.axis[:, None, :, :], (B, n, n, 3)) * mask[None, :, :, None]
    Iw = np.einsum("bixy,iyz,bivz->bixv", chain.R, model.link_inertias, chain.R)

    M = np.einsum("i,bijx,bikx->bjk", m, Jc, Jc) + np.einsum("bijx,bixy,biky->bjk", Jw, Iw, Jw)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))

    # velocity products for the bias vector
    omega = np.cumsum(qdot[:, :, None] * chain.axis, axis=1)  # (B, j, 3) link angular vel
    zdot = np.cross(omega, chain.axis)
    diff_o = chain.origin[:, :, None, :] - chain.origin[:, None, :, :]  # o_k - o_j
    v_o = np.einsum("bkjx,bj,kj->bkx", np.cross(chain.axis[:, None, :, :], diff_o), qdot, mask)
    v_c = np.einsum("bijx,bj->bix", Jc, qdot)
    diff_c = chain.com[:, :, None, :] - chain.origin[:, None, :, :]
    acc_terms = np.cross(zdot[:, None, :, :], diff_c) + np.cross(
        chain.axis[:, None, :, :], v_c[:, :, None, :] - v_o[:, None, :, :]
    )
    a_c = np.einsum("bijx,bj,ij->bix", acc_terms, qdot, mask)
    omegadot = np.cumsum(qdot[:, :, None] * zdot, axis=1)
    h = np.einsum("bixy,biy->bix", Iw, omega)
    rot = np.einsum("bixy,biy->bix", Iw, omegadot) + np.cross(omega, h)
    bias = np.einsum("i,bijx,bix->bj", m, Jc, a_c) + np.einsum("bijx,bix->bj", Jw, rot)

    grav = -np.einsum("i,bijx,x->bj", m, Jc, model.gravity)

    J = ee_jacobian(chain)
    Minv = np.linalg.inv(M)
    A = J @ Minv @ np.swapaxes(J, 1, 2)
    A = 0.5 * (A + np.swapaxes(A, 1, 2))
    JJt = J @ np.swapaxes(J, 1, 2)
    eigs = np.linalg.eigvalsh(JJt)
    sigma_min = np.sqrt(np.clip(eigs[:, 0], 0.0, None))
    near = sigma_min < SINGULARITY_THRESHOLD
    if np.any(near):
        A = A + (SINGULARITY_DAMPING * near)[:, None, None] * np.eye(6)
    lam = np.linalg.inv(A)
    lam = 0.5 * (lam + np.swapaxes(lam, 1, 2))
    return Dynamics(
        chain=chain, J=J, M=M, Minv=Minv, bias=bias, gravity=grav, lam=lam,
        sigma_min=sigma_min, near_singular=near,
    )


# ---------------------------------------------------------------------------
# single-configuration API
# ---------------------------------------------------------------------------


def forward_kinematics(model: RobotModel, q: np.ndarray) -> Pose:
    """End-effector pose in the world frame."""
    chain = fk_chain(model, np.asarray(q, dtype=float)[None, :])
    return Pose(chain.ee_pos[0], matrix_to_quat(chain.R_ee[0]))


def jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """6 x n end-effector Jacobian: [linear velocity; angular velocity] = J qdot."""
    chain = fk_chain(model, np.asarray(q, dtype=float)[None, :])
    return ee_jacobian(chain)[0]


def mass_matrix(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Joint-space inertia matrix (symmetric positive definite)."""
    q = np.asarray(q, dtype=float)[None, :]
    chain = fk_chain(model, q)
    n = model.n
    mask = _lower_mask(n)
    Jc = _com_jacobians(model, chain)
    Jw = np.broadcast_to(chain.axis[:, None, :, :], (1, n, n, 3)) * mask[None, :, :, None]
    Iw = np.einsum("bixy,iyz,bivz->bixv", chain.R, model.link_inertias, chain.R)
    M = np.einsum("i,bijx,bikx->bjk", model.link_masses, Jc, Jc)
    M = M + np.einsum("bijx,bixy,biky->bjk", Jw, Iw, Jw)
    M = 0.5 * (M + np.swapaxes(M, 1, 2))
    return M[0]


def bias_forces(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> np.ndarray:
    """Coriolis/centrifugal generalized forces (gravity excluded)."""
    dyn = dynamics_batch(model, np.asarray(q, float)[None, :], np.asarray(qdot, float)[None, :])
    return dyn.bias[0]


def gravity_vector(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Generalized gravity torques, the gradient of potential energy."""
    dyn = dynamics_batch(model, np.asarray(q, float)[None, :], np.zeros((1, model.n)))
    return dyn.gravity[0]


def potential_energy(model: RobotModel, q: np.ndarray) -> float:
    chain = fk_chain(model, np.asarray(q, dtype=float)[None, :])
    return float(-np.sum(model.link_masses * (chain.com[0] @ model.gravity)))


def kinetic_energy(model: RobotModel, q: np.ndarray, qdot: np.ndarray) -> float:
    M = mass_matrix(model, q)
    qdot = np.asarray(qdot, dtype=float)
    return float(0.5 * qdot @ M @ qdot)


@dataclass(frozen=True)
class TaskSpaceQuantities:
    """Jacobian, operational-space inertia, its dynamically consistent inverse
    and the null-space projector for one configuration."""

    J: np.ndarray  # (6, n)
    Lambda: np.ndarray  # (6, 6)
    J_dagger: np.ndarray  # (n, 6)
    N: np.ndarray  # (n, n)
    near_singular: bool


def task_space_quantities(model: RobotModel, q: np.ndarray) -> TaskSpaceQuantities:
    """Compute J, Lambda = (J M^-1 J^T)^-1, J_dagger = M^-1 J^T Lambda, N = I - J_dagger J.

    Near a singular configuration (sigma_min(J) < 1e-4) the Lambda inversion is
    damped and the near_singular flag is set.
    """
    q = np.asarray(q, dtype=float)
    n = model.n
    J = jacobian(model, q)
    M = mass_matrix(model, q)
    sigma_min = float(np.linalg.svd(J, compute_uv=False)[-1])
    near = sigma_min < SINGULARITY_THRESHOLD
    # mass-weighted route: with Jw = J L^-T (M = L L^T), Lambda = (Jw Jw^T)^-1
    # and J_dagger = L^-T Jw^+; conditioning grows like kappa instead of
    # kappa^2, which keeps the projector identities tight
    L = np.linalg.cholesky(M)
    Jw = np.linalg.solve(L, J.T).T
    U, S, Vt = np.linalg.svd(Jw, full_matrices=False)
    damp = SINGULARITY_DAMPING if near else 0.0
    lam = (U / (S**2 + damp)) @ U.T
    J_dagger = np.linalg.solve(L.T, Vt.T @ np.diag(S / (S**2 + damp)) @ U.T)
    N = np.eye(n) - J_dagger @ J
    return TaskSpaceQuantities(
        J=J, Lambda=0.5 * (lam + lam.T), J_dagger=J_dagger, N=N, near_singular=near
    )
