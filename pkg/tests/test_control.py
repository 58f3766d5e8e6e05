import numpy as np
import pytest

from reachsim.control import (
    ControlGains,
    ControlLaw,
    ControlReferences,
    MODE_DIRECT_TORQUE,
    MODE_OPERATIONAL_PLUS_NULL,
    MODE_REFERENCE_POSTURE,
    control_torque,
    null_torque,
    operational_torque,
)
from reachsim.robot import JointState, forward_kinematics, mass_matrix, dynamics_batch
from reachsim.sim import SceneSpec, initial_world, step
from reachsim.spatial import Pose, translational_distance

from conftest import random_configs

HOME = np.array([0.0, 0.1028, 0.0, 1.6403, 0.0, 0.8768, 0.0])


@pytest.fixture(scope="module")
def gains():
    return ControlGains.defaults()


def test_zero_error_reduces_to_bias_plus_gravity(model, gains, rng):
    for q in random_configs(model, rng, 10):
        joints = JointState(q, np.zeros(model.n))
        x_d = forward_kinematics(model, q)
        tau = operational_torque(model, joints, x_d, gains)
        dyn = dynamics_batch(model, q[None], np.zeros((1, model.n)))
        assert np.allclose(tau, dyn.bias[0] + dyn.gravity[0], atol=1e-9)


def test_doubling_kp_doubles_feedback_term(model, gains, rng):
    q = random_configs(model, rng, 1)[0]
    joints = JointState(q, np.zeros(model.n))
    pose = forward_kinematics(model, q)
    x_d = Pose(pose.translation + np.array([0.03, -0.02, 0.01]), pose.rotation)
    dyn = dynamics_batch(model, q[None], np.zeros((1, model.n)))
    ff = dyn.bias[0] + dyn.gravity[0]
    tau1 = operational_torque(model, joints, x_d, gains) - ff
    gains2 = ControlGains(kp=2 * gains.kp, kd=gains.kd, kqp=gains.kqp, kqd=gains.kqd)
    tau2 = operational_torque(model, joints, x_d, gains2) - ff
    assert np.allclose(tau2, 2.0 * tau1, rtol=1e-9, atol=1e-12)


def _closed_loop(model, gains, q0, x_d, q_d, seconds, mode=MODE_OPERATIONAL_PLUS_NULL,
                 dt=0.005):
    scene = SceneSpec(ground=False)
    world = initial_world(scene, q0, model=model)
    refs = ControlReferences(x_d=x_d, q_d=q_d)
    steps = int(round(seconds / dt))
    for _ in range(steps):
        tau = control_torque(model, world.joints, refs, gains, mode)
        world, _ = step(world, model, tau, dt)
    return world


def test_closed_loop_converges_from_offset(model, gains):
    pose = forward_kinematics(model, HOME)
    x_d = Pose(pose.translation + np.array([0.05, 0.0, 0.0]), pose.rotation)
    world = _closed_loop(model, gains, HOME, x_d, HOME, seconds=2.0)
    final = forward_kinematics(model, world.joints.q)
    assert translational_distance(final, x_d) < 0.01


def test_gravity_compensation_keeps_robot_stationary(model, gains):
    pose = forward_kinematics(model, HOME)
    world = _closed_loop(model, gains, HOME, pose, HOME, seconds=1.0)
    final = forward_kinematics(model, world.joints.q)
    assert translational_distance(final, pose) < 1e-3


def test_null_torque_zero_at_reference(model, gains, rng):
    q = random_configs(model, rng, 1)[0]
    joints = JointState(q, np.zeros(model.n))
    assert np.allclose(null_torque(model, joints, q, gains), 0.0, atol=1e-12)


def test_null_torque_does_not_accelerate_end_effector(model, gains, rng):
    for q in random_configs(model, rng, 30):
        from reachsim.robot import jacobian

        J = jacobian(model, q)
        if np.linalg.svd(J, compute_uv=False)[-1] < 1e-3:
            continue
        joints = JointState(q, rng.uniform(-0.5, 0.5, model.n))
        q_d = q + rng.uniform(-0.3, 0.3, model.n)
        tau_n = null_torque(model, joints, q_d, gains)
        Minv = np.linalg.inv(mass_matrix(model, q))
        acc = J @ Minv @ tau_n
        assert np.abs(acc).max() < 1e-6 * max(1.0, np.abs(tau_n).max())


def test_pure_null_reference_barely_moves_end_effector(model, gains):
    pose = forward_kinematics(model, HOME)
    q_d = HOME + np.array([0.0, 0.1, 0.2, -0.1, 0.3, 0.0, 0.2])
    world = _closed_loop(model, gains, HOME, pose, q_d, seconds=1.0)
    final = forward_kinematics(model, world.joints.q)
    # the posture moved, the end effector did not
    assert np.abs(world.joints.q - HOME).max() > 0.01
    assert translational_distance(final, pose) < 0.002


def test_reference_posture_equals_combined_law_at_zero_posture(model, gains, rng):
    for q in random_configs(model, rng, 10):
        joints = JointState(q, rng.uniform(-0.5, 0.5, model.n))
        x_d = forward_kinematics(model, q)
        refs0 = ControlReferences(x_d=x_d, q_d=np.zeros(model.n))
        tau_a = control_torque(model, joints, refs0, gains, MODE_OPERATIONAL_PLUS_NULL)
        tau_b = control_torque(model, joints, refs0, gains, MODE_REFERENCE_POSTURE)
        assert np.array_equal(tau_a, tau_b)


def test_zero_joint_gains_reduce_to_operational_law(model, gains, rng):
    q = random_configs(model, rng, 1)[0]
    joints = JointState(q, rng.uniform(-0.5, 0.5, model.n))
    pose = forward_kinematics(model, q)
    x_d = Pose(pose.translation + np.array([0.01, 0.02, -0.01]), pose.rotation)
    g0 = ControlGains(kp=gains.kp, kd=gains.kd, kqp=np.zeros(model.n),
                      kqd=np.zeros(model.n))
    refs = ControlReferences(x_d=x_d, q_d=q + 0.3)
    tau = control_torque(model, joints, refs, g0, MODE_OPERATIONAL_PLUS_NULL)
    assert np.allclose(tau, operational_torque(model, joints, x_d, g0), atol=1e-12)


def test_torques_finite_on_random_states(model, gains, rng):
    for q in random_configs(model, rng, 20):
        joints = JointState(q, rng.uniform(-2.0, 2.0, model.n))
        pose = forward_kinematics(model, q)
        x_d = Pose(pose.translation + rng.uniform(-0.05, 0.05, 3), pose.rotation)
        refs = ControlReferences(x_d=x_d, q_d=q + rng.uniform(-0.2, 0.2, model.n))
        for mode in (MODE_OPERATIONAL_PLUS_NULL, MODE_REFERENCE_POSTURE):
            tau = control_torque(model, joints, refs, gains, mode)
            assert np.all(np.isfinite(tau))


def test_direct_torque_mode_passes_through(model, gains, rng):
    q = random_configs(model, rng, 1)[0]
    joints = JointState(q, np.zeros(model.n))
    raw = rng.normal(size=model.n)
    refs = ControlReferences(raw_tau=raw)
    assert np.array_equal(control_torque(model, joints, refs, gains,
                                         MODE_DIRECT_TORQUE), raw)


def test_gains_validation():
    with pytest.raises(ValueError):
        ControlGains(kp=-np.ones(6), kd=np.ones(6), kqp=np.ones(7), kqd=np.ones(7))
    with pytest.raises(ValueError):
        ControlLaw(mode="bogus", gains=ControlGains.defaults())
    g = ControlGains.defaults()
    assert np.allclose(np.diag(g.Kp), 880.0)
    assert np.allclose(np.diag(g.Kqd), 1.0)
