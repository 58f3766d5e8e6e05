"""Forward dynamics with penalty contact: the transfer function of the system.

A WorldState bundles the robot joint state with rigid-sphere obstacles and
mass-spring deformable walls; step/rollout advance it under joint torques or
a tracked action sequence. All stepping is pure (new states out, inputs
untouched) so populations of rollouts evaluate concurrently and
deterministically.

Rigid spheres and wall nodes do not feel gravity unless flagged (the ball
obstacle floats; walls are anchored along their bottom edge). The ball and
walls never co-occur in the benchmark scenes, so obstacle-obstacle contact is
not modelled.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import _kernels
from .robot import JointState, RobotModel
from .spatial import Pose, matrix_to_quat

PHYSICS_DT = 0.005  # s, default physics substep
CONTROL_INTERVAL = 0.2  # s, one planned action is held this long
SUBSTEPS_PER_INTERVAL = int(round(CONTROL_INTERVAL / PHYSICS_DT))

CONTACT_STIFFNESS = 2000.0  # N/m
CONTACT_DAMPING = 10.0  # N s/m


class NumericalBlowup(RuntimeError):
    """Simulation state exceeded sane bounds (unstable stiffness/dt pairing)."""


class InvalidTessellation(ValueError):
    """Wall node spacing does not divide the wall dimensions."""


@dataclass(frozen=True)
class RigidSphere:
    """A rigid spherical obstacle. Floating unless gravity is set."""

    radius: float
    mass: float
    gravity: bool = False
    drag: float = 0.0


@dataclass(frozen=True)
class DeformableWall:
    """Mass-spring wall: grid nodes joined by springs, bottom edge anchorable."""

    nodes: np.ndarray  # (N, 3) rest positions, world frame
    node_mass: float
    node_radius: float
    springs: np.ndarray  # (E, 2) node index pairs
    rest_lengths: np.ndarray  # (E,)
    stiffness: np.ndarray  # (E,) N/m
    damping: np.ndarray  # (E,) N s/m
    anchors: np.ndarray  # (N,) bool


def build_deformable_wall(
    dims,
    node_spacing: float,
    stiffness: float,
    damping: float,
    node_mass: float,
    node_radius: float,
    anchor_spec: str = "bottom",
    origin=(0.0, 0.0, 0.0),
) -> DeformableWall:
    """Tessellate an axis-aligned box into a grid of nodes and springs.

    Springs run along grid edges and across face and volume diagonals; rest
    lengths equal the initial node distances, so the rest configuration is in
    equilibrium. anchor_spec 'bottom' pins the lowest node layer, 'none' pins
    nothing.
    """
    dims = np.asarray(dims, dtype=float)
    counts = dims / node_spacing
    if np.any(np.abs(counts - np.round(counts)) > 1e-9):
        raise InvalidTessellation(f"spacing {node_spacing} does not divide dims {dims}")
    nx, ny, nz = (int(round(c)) + 1 for c in counts)
    origin = np.asarray(origin, dtype=float)
    grid = np.stack(
        np.meshgrid(
            origin[0] + node_spacing * np.arange(nx),
            origin[1] + node_spacing * np.arange(ny),
            origin[2] + node_spacing * np.arange(nz),
            indexing="ij",
        ),
        axis=-1,
    )
    nodes = grid.reshape(-1, 3)

    def nid(i, j, k):
        return (i * ny + j) * nz + k

    offsets = []
    for di in (0, 1):
        for dj in (-1, 0, 1):
            for dk in (-1, 0, 1):
                if (di, dj, dk) == (0, 0, 0):
                    continue
                # keep one representative of each +/- pair
                if di == 0 and (dj < 0 or (dj == 0 and dk < 0)):
                    continue
                offsets.append((di, dj, dk))
    springs = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for di, dj, dk in offsets:
                    i2, j2, k2 = i + di, j + dj, k + dk
                    if 0 <= i2 < nx and 0 <= j2 < ny and 0 <= k2 < nz:
                        springs.append((nid(i, j, k), nid(i2, j2, k2)))
    springs = np.asarray(springs, dtype=np.int64)
    rest = np.linalg.norm(nodes[springs[:, 1]] - nodes[springs[:, 0]], axis=1)

    if anchor_spec == "bottom":
        anchors = np.abs(nodes[:, 2] - nodes[:, 2].min()) < 1e-12
    elif anchor_spec == "none":
        anchors = np.zeros(len(nodes), dtype=bool)
    else:
        anchors = np.asarray(anchor_spec, dtype=bool)
        if anchors.shape != (len(nodes),):
            raise ValueError("anchor mask length mismatch")
    E = len(springs)
    return DeformableWall(
        nodes=nodes,
        node_mass=float(node_mass),
        node_radius=float(node_radius),
        springs=springs,
        rest_lengths=rest,
        stiffness=np.full(E, float(stiffness)),
        damping=np.full(E, float(damping)),
        anchors=anchors,
    )


@dataclass(frozen=True)
class SceneSpec:
    """Static obstacle description shared (immutably) by all rollouts."""

    ground: bool = False
    spheres: tuple = ()
    walls: tuple = ()
    contact_stiffness: float = CONTACT_STIFFNESS
    contact_damping: float = CONTACT_DAMPING

    def pack(self) -> dict:
        """Concatenated arrays consumed by the simulation kernels."""
        S = len(self.spheres)
        sph_radius = np.array([s.radius for s in self.spheres], dtype=float)
        sph_mass = np.array([s.mass for s in self.spheres], dtype=float)
        sph_grav = np.array([1 if s.gravity else 0 for s in self.spheres], dtype=np.int64)
        sph_drag = np.array([s.drag for s in self.spheres], dtype=float)
        if self.walls:
            node_rest = np.concatenate([w.nodes for w in self.walls])
            node_mass = np.concatenate([np.full(len(w.nodes), w.node_mass) for w in self.walls])
            node_radius = np.concatenate(
                [np.full(len(w.nodes), w.node_radius) for w in self.walls]
            )
            anchors = np.concatenate([w.anchors for w in self.walls]).astype(np.int64)
            edges, rest, ks, cs = [], [], [], []
            base = 0
            for w in self.walls:
                edges.append(w.springs + base)
                rest.append(w.rest_lengths)
                ks.append(w.stiffness)
                cs.append(w.damping)
                base += len(w.nodes)
            edges = np.concatenate(edges)
            rest = np.concatenate(rest)
            ks = np.concatenate(ks)
            cs = np.concatenate(cs)
        else:
            node_rest = np.zeros((0, 3))
            node_mass = np.zeros(0)
            node_radius = np.zeros(0)
            anchors = np.zeros(0, dtype=np.int64)
            edges = np.zeros((0, 2), dtype=np.int64)
            rest = np.zeros(0)
            ks = np.zeros(0)
            cs = np.zeros(0)
        return dict(
            ground=1 if self.ground else 0,
            kc=float(self.contact_stiffness),
            cc=float(self.contact_damping),
            sph_radius=sph_radius,
            sph_mass=sph_mass,
            sph_grav=sph_grav,
            sph_drag=sph_drag,
            node_rest=node_rest,
            node_mass=node_mass,
            node_radius=node_radius,
            anchors=anchors,
            edges=edges,
            rest=rest,
            ks=ks,
            cs=cs,
            n_spheres=S,
        )


_PACK_CACHE: dict = {}


def _packed(scene: SceneSpec) -> dict:
    key = id(scene)
    hit = _PACK_CACHE.get(key)
    if hit is None or hit[0] is not scene:
        _PACK_CACHE[key] = (scene, scene.pack())
        hit = _PACK_CACHE[key]
    return hit[1]


@dataclass
class WorldState:
    """Full simulation state: robot joints, obstacle poses, wall node states."""

    joints: JointState
    rigid_obstacles: list  # [(Pose, 6-vector velocity), ...]
    node_positions: np.ndarray  # (N, 3)
    node_velocities: np.ndarray  # (N, 3)
    time: float
    scene: SceneSpec
    limit_clamped: bool = False
    ee_pose: Optional[Pose] = None  # cached FK of joints.q

    @property
    def deformable_nodes(self):
        return list(zip(self.node_positions, self.node_velocities))

    def copy(self) -> "WorldState":
        return WorldState(
            joints=self.joints.copy(),
            rigid_obstacles=[(Pose(p.translation.copy(), p.rotation.copy()), v.copy())
                             for p, v in self.rigid_obstacles],
            node_positions=self.node_positions.copy(),
            node_velocities=self.node_velocities.copy(),
            time=self.time,
            scene=self.scene,
            limit_clamped=self.limit_clamped,
            ee_pose=self.ee_pose,
        )


def initial_world(scene: SceneSpec, q: np.ndarray, sphere_centers=(),
                  model: Optional[RobotModel] = None) -> WorldState:
    """Assemble a rest-state world for a scene."""
    from .robot import forward_kinematics

    packed = _packed(scene)
    obstacles = [
        (Pose(np.asarray(c, dtype=float)), np.zeros(6)) for c in sphere_centers
    ]
    if len(obstacles) != packed["n_spheres"]:
        raise ValueError("sphere center count does not match scene spheres")
    q = np.asarray(q, dtype=float)
    return WorldState(
        joints=JointState(q, np.zeros(len(q))),
        rigid_obstacles=obstacles,
        node_positions=packed["node_rest"].copy(),
        node_velocities=np.zeros_like(packed["node_rest"]),
        time=0.0,
        scene=scene,
        ee_pose=forward_kinematics(model, q) if model is not None else None,
    )


@dataclass(frozen=True)
class Contact:
    link: int
    body: str
    normal: np.ndarray
    force: float
    penetration: float


@dataclass(frozen=True)
class ContactReport:
    """All robot-body contacts of one step; max_force is 0 when empty."""

    contacts: tuple

    @property
    def max_force(self) -> float:
        return max((c.force for c in self.contacts), default=0.0)


def contact_force(report: ContactReport) -> float:
    """Maximum contact force magnitude over all robot-body contacts (N)."""
    return report.max_force


# ---------------------------------------------------------------------------
# batched engine
# ---------------------------------------------------------------------------


@dataclass
class BatchRollout:
    """Raw arrays from a batched rollout (see rollout() for the B=1 view)."""

    ee_positions: np.ndarray  # (B, H, 3)
    ee_rotations: np.ndarray  # (B, H, 3, 3)
    max_forces: np.ndarray  # (B, H)
    force_profile: np.ndarray  # (B, H*substeps), per-substep max contact force
    ee_profile: np.ndarray  # (B, H*substeps, 3), EE position at substep start
    q: np.ndarray  # (B, H, n)
    qd: np.ndarray  # (B, H, n)
    sph: np.ndarray  # (B, H, S, 6)
    node: np.ndarray  # (B, H, N, 6)
    clamped: np.ndarray  # (B,)
    blown_up: np.ndarray  # (B,) bool


def _model_args(model: RobotModel):
    return (
        model.joint_axes, model.joint_offsets, model.link_coms, model.link_tips,
        model.link_inertias, model.link_masses, model.capsule_radii,
        model.joint_limits, model.gravity,
    )


def rollout_batch(
    model: RobotModel,
    world: WorldState,
    actions: np.ndarray,
    mode: int,
    kp6: np.ndarray,
    kd6: np.ndarray,
    kqp: np.ndarray,
    kqd: np.ndarray,
    dt: float = PHYSICS_DT,
    substeps: int = SUBSTEPS_PER_INTERVAL,
) -> BatchRollout:
    """Roll a (B, H, width) population of action sequences from one start state."""
    packed = _packed(world.scene)
    actions = np.ascontiguousarray(actions, dtype=float)
    B, H = actions.shape[0], actions.shape[1]
    n = model.n
    S = packed["n_spheres"]
    N = len(packed["node_rest"])

    q = np.tile(world.joints.q, (B, 1))
    qd = np.tile(world.joints.qdot, (B, 1))
    if S:
        sp = np.stack([p.translation for p, _ in world.rigid_obstacles])
        sv = np.stack([v[:3] for _, v in world.rigid_obstacles])
    else:
        sp = np.zeros((0, 3))
        sv = np.zeros((0, 3))
    sph_p = np.tile(sp, (B, 1, 1))
    sph_v = np.tile(sv, (B, 1, 1))
    node_p = np.tile(world.node_positions, (B, 1, 1))
    node_v = np.tile(world.node_velocities, (B, 1, 1))

    ee_pos = np.zeros((B, H, 3))
    ee_R = np.zeros((B, H, 3, 3))
    max_f = np.zeros((B, H))
    profile = np.zeros((B, H * substeps))
    ee_prof = np.zeros((B, H * substeps, 3))
    q_traj = np.zeros((B, H, n))
    qd_traj = np.zeros((B, H, n))
    sph_traj = np.zeros((B, H, S, 6))
    node_traj = np.zeros((B, H, N, 6))
    clamped = np.zeros(B, dtype=np.int64)
    blowup = np.zeros(B, dtype=np.int64)

    _kernels.rollout_kernel(
        *_model_args(model),
        packed["ground"], packed["kc"], packed["cc"],
        packed["sph_radius"], packed["sph_mass"], packed["sph_grav"], packed["sph_drag"],
        packed["node_rest"], packed["node_mass"], packed["node_radius"], packed["anchors"],
        packed["edges"], packed["rest"], packed["ks"], packed["cs"],
        q, qd, sph_p, sph_v, node_p, node_v,
        actions, mode, kp6, kd6, kqp, kqd,
        ACTION_BOUNDS_LIN, ACTION_BOUNDS_ROT,
        dt, substeps,
        ee_pos, ee_R, max_f, profile, ee_prof,
        q_traj, qd_traj, sph_traj, node_traj,
        clamped, blowup,
    )
    return BatchRollout(
        ee_positions=ee_pos, ee_rotations=ee_R, max_forces=max_f, force_profile=profile,
        ee_profile=ee_prof,
        q=q_traj, qd=qd_traj, sph=sph_traj, node=node_traj,
        clamped=clamped, blown_up=blowup.astype(bool),
    )


def _state_from_batch(world: WorldState, batch: BatchRollout, b: int, h: int,
                      substeps: int, dt: float) -> WorldState:
    packed = _packed(world.scene)
    S = packed["n_spheres"]
    obstacles = []
    for s in range(S):
        pose = Pose(batch.sph[b, h, s, :3].copy(),
                    world.rigid_obstacles[s][0].rotation.copy())
        vel = np.zeros(6)
        vel[:3] = batch.sph[b, h, s, 3:]
        obstacles.append((pose, vel))
    return WorldState(
        joints=JointState(batch.q[b, h].copy(), batch.qd[b, h].copy()),
        rigid_obstacles=obstacles,
        node_positions=batch.node[b, h, :, :3].copy(),
        node_velocities=batch.node[b, h, :, 3:].copy(),
        time=world.time + (h + 1) * substeps * dt,
        scene=world.scene,
        limit_clamped=bool(batch.clamped[b]),
        ee_pose=Pose(batch.ee_positions[b, h].copy(),
                     matrix_to_quat(batch.ee_rotations[b, h])),
    )


@dataclass
class RolloutResult:
    """Per-action outcome of a single tracked rollout."""

    ee_poses: list  # [Pose] per action
    max_forces: np.ndarray  # (H,)
    force_profile: np.ndarray  # (H*substeps,)
    states: list  # [WorldState] per action

    @property
    def max_force(self) -> float:
        return float(self.max_forces.max()) if len(self.max_forces) else 0.0


def step(world: WorldState, model: RobotModel, tau: np.ndarray, dt: float = PHYSICS_DT):
    """Advance one physics substep under raw joint torques.

    Returns the successor WorldState and a ContactReport of all robot-body
    contacts active during the step. Raises NumericalBlowup when the state
    leaves sane bounds.
    """
    tau = np.asarray(tau, dtype=float)
    report = _contact_report(world, model)
    batch = rollout_batch(
        model, world, tau[None, None, :], _kernels.MODE_DIRECT_TORQUE,
        np.zeros(6), np.zeros(6), np.zeros(model.n), np.zeros(model.n),
        dt=dt, substeps=1,
    )
    if batch.blown_up[0]:
        raise NumericalBlowup(f"state exceeded bounds at t={world.time + dt:.4f}s")
    return _state_from_batch(world, batch, 0, 0, 1, dt), report


def rollout(world: WorldState, model: RobotModel, controller, actions: Sequence,
            dt: float = PHYSICS_DT, substeps: int = SUBSTEPS_PER_INTERVAL) -> RolloutResult:
    """Track an action sequence: each action's references are held for one
    control interval while the control law runs every substep."""
    from .control import MODE_IDS  # local import to avoid a cycle

    arr = np.stack([a.as_vector() for a in actions])[None, :, :]
    mode = MODE_IDS[controller.mode]
    g = controller.gains
    batch = rollout_batch(model, world, arr, mode, g.kp, g.kd, g.kqp, g.kqd,
                          dt=dt, substeps=substeps)
    if batch.blown_up[0]:
        raise NumericalBlowup("rollout diverged")
    H = arr.shape[1]
    states = [_state_from_batch(world, batch, 0, h, substeps, dt) for h in range(H)]
    poses = [Pose(batch.ee_positions[0, h].copy(), matrix_to_quat(batch.ee_rotations[0, h]))
             for h in range(H)]
    return RolloutResult(
        ee_poses=poses,
        max_forces=batch.max_forces[0].copy(),
        force_profile=batch.force_profile[0].copy(),
        states=states,
    )


ACTION_BOUNDS_LIN = 0.01  # m per coordinate
ACTION_BOUNDS_ROT = 0.2  # rad
ACTION_BOUNDS_NULL = 0.2  # rad


def action_bounds(n: int) -> np.ndarray:
    """Per-coordinate box bounds for one action (dx_lin, dx_rot, dq)."""
    return np.concatenate([
        np.full(3, ACTION_BOUNDS_LIN),
        np.full(3, ACTION_BOUNDS_ROT),
        np.full(n, ACTION_BOUNDS_NULL),
    ])


def rollout_cost_gradient(
    world: WorldState,
    model: RobotModel,
    controller,
    actions: Sequence,
    cost: Callable[[RolloutResult], float],
    dt: float = PHYSICS_DT,
    substeps: int = SUBSTEPS_PER_INTERVAL,
    h_rel: float = 1e-4,
) -> np.ndarray:
    """Gradient of a scalar rollout cost w.r.t. the flattened action sequence.

    Central finite differences, per-coordinate step h = h_rel * bound. Returns
    an (H, width) array matching the action layout.
    """
    from .control import MODE_IDS

    base = np.stack([a.as_vector() for a in actions])
    H, width = base.shape
    bounds = action_bounds(model.n)[:width]
    steps = h_rel * np.tile(bounds, H)
    D = H * width
    flat = base.reshape(-1)
    pop = np.repeat(flat[None, :], 2 * D, axis=0)
    for i in range(D):
        pop[2 * i, i] += steps[i]
        pop[2 * i + 1, i] -= steps[i]
    mode = MODE_IDS[controller.mode]
    g = controller.gains
    batch = rollout_batch(model, world, pop.reshape(2 * D, H, width), mode,
                          g.kp, g.kd, g.kqp, g.kqd, dt=dt, substeps=substeps)
    costs = np.empty(2 * D)
    for r in range(2 * D):
        res = RolloutResult(
            ee_poses=[Pose(batch.ee_positions[r, h].copy(),
                           matrix_to_quat(batch.ee_rotations[r, h])) for h in range(H)],
            max_forces=batch.max_forces[r],
            force_profile=batch.force_profile[r],
            states=None,
        )
        if batch.blown_up[r]:
            raise NumericalBlowup("gradient probe rollout diverged")
        costs[r] = cost(res)
    grad = (costs[0::2] - costs[1::2]) / (2.0 * steps)
    return grad.reshape(H, width)


# ---------------------------------------------------------------------------
# contact detail pass (numpy; mirrors the kernel force model exactly)
# ---------------------------------------------------------------------------


def _contact_report(world: WorldState, model: RobotModel) -> ContactReport:
    from .robot import fk_chain

    packed = _packed(world.scene)
    chain = fk_chain(model, world.joints.q[None, :])
    o = chain.origin[0]
    tip = chain.tip[0]
    z = chain.axis[0]
    qd = world.joints.qdot
    kc, cc = packed["kc"], packed["cc"]
    contacts = []

    def point_velocity(link, p):
        v = np.zeros(3)
        for j in range(link + 1):
            v += qd[j] * np.cross(z[j], p - o[j])
        return v

    def capsule_sphere(link, center, vel, rs, body):
        a, b = o[link], tip[link]
        u = b - a
        L2 = float(u @ u)
        t = float(np.clip(((center - a) @ u) / L2, 0.0, 1.0)) if L2 > 1e-16 else 0.0
        p = a + t * u
        d = center - p
        dist = float(np.linalg.norm(d))
        pen = model.capsule_radii[link] + rs - dist
        if pen <= 0.0 or dist < 1e-12:
            return
        nrm = d / dist
        ddot = -float((vel - point_velocity(link, p)) @ nrm)
        f = kc * pen + cc * ddot
        if f > 0.0:
            contacts.append(Contact(link=link, body=body, normal=nrm, force=f, penetration=pen))

    for s, (pose, vel) in enumerate(world.rigid_obstacles):
        for link in range(model.n):
            capsule_sphere(link, pose.translation, vel[:3], packed["sph_radius"][s],
                           f"sphere{s}")
    for nd in range(len(world.node_positions)):
        for link in range(model.n):
            capsule_sphere(link, world.node_positions[nd], world.node_velocities[nd],
                           packed["node_radius"][nd], f"node{nd}")
    if packed["ground"]:
        up = np.array([0.0, 0.0, 1.0])
        for link in range(model.n):
            for p in (o[link], tip[link]):
                pen = model.capsule_radii[link] - p[2]
                if pen <= 0.0:
                    continue
                f = kc * pen + cc * (-point_velocity(link, p)[2])
                if f > 0.0:
                    contacts.append(Contact(link=link, body="ground", normal=up.copy(),
                                            force=f, penetration=pen))
    return ContactReport(contacts=tuple(contacts))
