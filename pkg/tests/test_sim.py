import numpy as np
import pytest

from reachsim.control import ControlGains, ControlLaw, MODE_OPERATIONAL_PLUS_NULL
from reachsim.planner import Action
from reachsim.robot import RobotModel, kinetic_energy, potential_energy
from reachsim.sim import (
    DeformableWall,
    InvalidTessellation,
    NumericalBlowup,
    RigidSphere,
    SceneSpec,
    build_deformable_wall,
    contact_force,
    initial_world,
    rollout,
    rollout_cost_gradient,
    step,
)

HOME = np.array([0.0, 0.1028, 0.0, 1.6403, 0.0, 0.8768, 0.0])


@pytest.fixture(scope="module")
def gains():
    return ControlGains.defaults()


@pytest.fixture(scope="module")
def law(gains):
    return ControlLaw(mode=MODE_OPERATIONAL_PLUS_NULL, gains=gains)


def _zero_gravity(model):
    return RobotModel.build(
        name="zg",
        joint_offsets=model.joint_offsets,
        joint_axes=model.joint_axes,
        joint_limits=model.joint_limits,
        link_masses=model.link_masses,
        link_tips=model.link_tips,
        capsule_radii=model.capsule_radii,
        gravity=(0.0, 0.0, 0.0),
    )


def test_equilibrium_without_forces(model):
    zg = _zero_gravity(model)
    world = initial_world(SceneSpec(ground=False), HOME, model=zg)
    w = world
    for _ in range(100):
        w, _ = step(w, zg, np.zeros(zg.n))
    assert np.abs(w.joints.q - HOME).max() < 1e-12
    assert np.abs(w.joints.qdot).max() < 1e-12


def test_free_fall_matches_ballistic_arc(model):
    scene = SceneSpec(ground=False,
                      spheres=(RigidSphere(radius=0.05, mass=0.3, gravity=True),))
    z0 = 3.0
    world = initial_world(scene, HOME, sphere_centers=[(2.0, 2.0, z0)], model=model)
    dt = 2e-4
    w = world
    for _ in range(int(round(1.0 / dt))):
        w, _ = step(w, model, np.zeros(model.n), dt)
    z = w.rigid_obstacles[0][0].translation[2]
    assert abs(z - (z0 - 0.5 * 9.81 * 1.0**2)) < 1e-3


def test_penalty_force_is_stiffness_times_penetration(model):
    # park a sphere penetrating the forearm capsule mid-segment, offset
    # perpendicular to the link axis so the depth is exact
    from reachsim.robot import fk_chain

    link = 4
    chain = fk_chain(model, HOME[None, :])
    a, b = chain.origin[0, link], chain.tip[0, link]
    mid = 0.5 * (a + b)
    u = (b - a) / np.linalg.norm(b - a)
    v = np.cross(u, [0.0, 0.0, 1.0])
    v /= np.linalg.norm(v)
    r_s = 0.04
    pen = 0.01
    center = mid + (model.capsule_radii[link] + r_s - pen) * v
    scene = SceneSpec(ground=False, spheres=(RigidSphere(radius=r_s, mass=1.0),))
    world = initial_world(scene, HOME, sphere_centers=[center], model=model)
    _, report = step(world, model, np.zeros(model.n))
    assert len(report.contacts) == 1
    assert report.contacts[0].link == link
    expected = scene.contact_stiffness * pen
    assert abs(report.contacts[0].force - expected) < 1e-6 * expected
    assert abs(report.contacts[0].penetration - pen) < 1e-9
    assert contact_force(report) == report.contacts[0].force


def test_contact_force_reports_maximum():
    from reachsim.sim import Contact, ContactReport

    up = np.array([0.0, 0.0, 1.0])
    report = ContactReport(contacts=(
        Contact(link=1, body="sphere0", normal=up, force=3.2, penetration=1e-3),
        Contact(link=2, body="node4", normal=up, force=7.9, penetration=2e-3),
    ))
    assert contact_force(report) == 7.9


def test_contact_report_empty_and_max(model):
    world = initial_world(SceneSpec(ground=False), HOME, model=model)
    _, report = step(world, model, np.zeros(model.n))
    assert report.contacts == ()
    assert contact_force(report) == 0.0


def test_hold_position_rollout(model, law):
    world = initial_world(SceneSpec(ground=False), HOME, model=model)
    actions = [Action.zero(model.n)] * 3
    res = rollout(world, model, law, actions)
    start = world.ee_pose.translation
    for pose in res.ee_poses:
        assert np.linalg.norm(pose.translation - start) < 1e-3
    assert res.max_force == 0.0


def test_rollout_determinism(model, law, rng):
    world = initial_world(SceneSpec(ground=False), HOME, model=model)
    actions = [Action(dx=rng.uniform(-0.01, 0.01, 6) * [1, 1, 1, 10, 10, 10],
                      dq=rng.uniform(-0.2, 0.2, model.n)) for _ in range(3)]
    r1 = rollout(world, model, law, actions)
    r2 = rollout(world, model, law, actions)
    for a, b in zip(r1.states, r2.states):
        assert np.array_equal(a.joints.q, b.joints.q)
        assert np.array_equal(a.joints.qdot, b.joints.qdot)
    assert np.array_equal(r1.force_profile, r2.force_profile)


def test_single_action_tracks_translation(model, law):
    world = initial_world(SceneSpec(ground=False), HOME, model=model)
    act = Action(dx=np.array([0.01, 0, 0, 0, 0, 0]), dq=np.zeros(model.n))
    res = rollout(world, model, law, [act])
    disp = res.ee_poses[0].translation - world.ee_pose.translation
    assert abs(disp[0] - 0.01) < 0.002  # within 20 % of the commanded step
    assert np.abs(disp[1:]).max() < 0.004


def test_rollout_blowup_detection(model, gains):
    from reachsim.control import MODE_DIRECT_TORQUE

    world = initial_world(SceneSpec(ground=False), HOME, model=model)
    law = ControlLaw(mode=MODE_DIRECT_TORQUE, gains=gains)

    class Raw:
        def as_vector(self):
            v = np.zeros(13)
            v[:7] = 1e9
            return v

    with pytest.raises(NumericalBlowup):
        rollout(world, model, law, [Raw()] * 3)


def test_gradient_constant_cost_is_zero(model, law):
    world = initial_world(SceneSpec(ground=False), HOME, model=model)
    actions = [Action.zero(model.n)] * 2
    g = rollout_cost_gradient(world, model, law, actions, lambda res: 7.5)
    assert np.array_equal(g, np.zeros_like(g))


def test_gradient_agrees_with_coarser_finite_differences(model, law):
    world = initial_world(SceneSpec(ground=False), HOME, model=model)
    actions = [Action(dx=np.array([0.005, 0, 0, 0, 0, 0]), dq=np.zeros(model.n))] * 2
    target = world.ee_pose.translation + np.array([0.05, 0.02, -0.03])

    def cost(res):
        return float(sum(np.linalg.norm(p.translation - target) for p in res.ee_poses))

    g1 = rollout_cost_gradient(world, model, law, actions, cost, h_rel=1e-4)
    g2 = rollout_cost_gradient(world, model, law, actions, cost, h_rel=2e-4)
    cos = float(g1.ravel() @ g2.ravel()
                / (np.linalg.norm(g1) * np.linalg.norm(g2)))
    assert cos > 0.99


def test_energy_conservation_free_dynamics(model):
    # limit-free variant: the hard joint-limit clamp is a non-conservative
    # mechanism by design, so the swing must stay away from it
    free = RobotModel.build(
        name="free", joint_offsets=model.joint_offsets, joint_axes=model.joint_axes,
        joint_limits=np.full(model.n, 1e9), link_masses=model.link_masses,
        link_tips=model.link_tips, capsule_radii=model.capsule_radii,
        gravity=model.gravity,
    )
    # gentle oscillation about the hanging equilibrium: velocities stay
    # moderate, so drift measures the integrator rather than chaotic whip
    hang = np.array([0.0, np.pi, 0.0, 0.0, 0.0, 0.0, 0.0])
    world = initial_world(SceneSpec(ground=False), hang, model=free)
    world.joints.qdot = np.array([0.3, 0.4, -0.3, 0.5, -0.4, 0.6, -0.5])
    energy = lambda s: (kinetic_energy(free, s.joints.q, s.joints.qdot)
                        + potential_energy(free, s.joints.q))
    e0 = energy(world)
    w = world
    dt = 1e-3
    for _ in range(1000):
        w, _ = step(w, free, np.zeros(free.n), dt)
    assert not w.limit_clamped
    assert abs(energy(w) - e0) < 0.01 * max(abs(e0), 1.0)


# ---------------------------------------------------------------------------
# deformable walls
# ---------------------------------------------------------------------------


def test_wall_grid_shape_and_rest_lengths():
    wall = build_deformable_wall((1.0, 0.1, 0.2), 0.1, 60.0, 1.5, 0.08, 0.03)
    assert len(wall.nodes) == 11 * 2 * 3
    d = np.linalg.norm(wall.nodes[wall.springs[:, 1]] - wall.nodes[wall.springs[:, 0]],
                       axis=1)
    assert np.allclose(d, wall.rest_lengths)
    # bottom layer anchored
    bottom = np.isclose(wall.nodes[:, 2], wall.nodes[:, 2].min())
    assert np.array_equal(wall.anchors, bottom)


def test_wall_invalid_tessellation():
    with pytest.raises(InvalidTessellation):
        build_deformable_wall((1.0, 0.1, 0.2), 0.03, 60.0, 1.5, 0.08, 0.03)


def test_wall_rest_configuration_is_equilibrium(model):
    wall = build_deformable_wall((0.3, 0.1, 0.2), 0.1, 60.0, 1.5, 0.08, 0.03,
                                 origin=(1.5, 1.5, 0.0))
    scene = SceneSpec(ground=True, walls=(wall,))
    world = initial_world(scene, HOME, model=model)
    w = world
    for _ in range(200):
        w, _ = step(w, model, np.zeros(model.n))
    assert np.abs(w.node_positions - world.node_positions).max() < 1e-15


def test_single_spring_restoring_force():
    nodes = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0]])
    wall = DeformableWall(
        nodes=nodes, node_mass=0.05, node_radius=0.01,
        springs=np.array([[0, 1]]), rest_lengths=np.array([0.1]),
        stiffness=np.array([50.0]), damping=np.array([0.0]),
        anchors=np.array([True, False]),
    )
    scene = SceneSpec(ground=False, walls=(wall,))
    model = RobotModel.build("stub", [[0, 0, 5.0]], [[0, 0, 1]], [3.14], [1.0],
                             [[0, 0, 0.1]], [0.01])
    world = initial_world(scene, np.zeros(1), model=model)
    stretch = 0.04
    world.node_positions[1, 0] += stretch
    dt = 1e-4
    w, _ = step(world, model, np.zeros(1), dt)
    a = (w.node_velocities[1] - 0.0) / dt
    f = a * 0.05
    assert abs(f[0] + 50.0 * stretch) < 1e-6  # pulls back toward rest
    assert np.allclose(f[1:], 0.0, atol=1e-9)


def test_anchored_nodes_never_move(model):
    # park the wall around the arm so pushing happens, anchors must hold
    wall = build_deformable_wall((0.1, 0.6, 0.2), 0.1, 60.0, 1.5, 0.08, 0.03,
                                 origin=(0.45, -0.3, 0.0))
    scene = SceneSpec(ground=True, walls=(wall,))
    world = initial_world(scene, HOME, model=model)
    law = ControlLaw(mode=MODE_OPERATIONAL_PLUS_NULL, gains=ControlGains.defaults())
    push = Action(dx=np.array([0.01, 0, -0.008, 0, 0, 0]), dq=np.zeros(model.n))
    res = rollout(world, model, law, [push] * 3)
    anchored = wall.anchors
    end = res.states[-1].node_positions
    assert np.array_equal(end[anchored], world.node_positions[anchored])


def test_scene_validation(model):
    scene = SceneSpec(ground=False, spheres=(RigidSphere(radius=0.1, mass=0.2),))
    with pytest.raises(ValueError):
        initial_world(scene, HOME, sphere_centers=[], model=model)
