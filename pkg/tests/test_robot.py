import numpy as np
import pytest

from reachsim import _kernels
from reachsim.robot import (
    RobotModel,
    bias_forces,
    dynamics_batch,
    forward_kinematics,
    gravity_vector,
    jacobian,
    load_robot_model,
    mass_matrix,
    potential_energy,
    task_space_quantities,
)

from conftest import random_configs
from reference_dynamics import bias_ref, gravity_ref, mass_matrix_ref


def test_fk_zero_configuration_stacks_link_offsets(model):
    pose = forward_kinematics(model, np.zeros(model.n))
    expected_height = model.joint_offsets[:, 2].sum() + model.link_tips[-1][2]
    assert np.allclose(pose.translation, [0.0, 0.0, expected_height], atol=1e-12)


def test_base_joint_rotation_preserves_height(model, rng):
    q = random_configs(model, rng, 1)[0]
    z1 = forward_kinematics(model, q).translation[2]
    for theta in (-1.0, 0.5, 2.0):
        q2 = q.copy()
        q2[0] = theta
        z2 = forward_kinematics(model, q2).translation[2]
        assert abs(z1 - z2) < 1e-12


def test_jacobian_matches_finite_differences(model, rng):
    h = 1e-6
    worst = 0.0
    for q in random_configs(model, rng, 100):
        J = jacobian(model, q)
        for j in range(model.n):
            dq = np.zeros(model.n)
            dq[j] = h
            p_plus = forward_kinematics(model, q + dq).translation
            p_minus = forward_kinematics(model, q - dq).translation
            worst = max(worst, np.abs(J[:3, j] - (p_plus - p_minus) / (2 * h)).max())
    assert worst < 1e-5


def test_jacobian_singular_at_stretched_configuration(model):
    # fully stretched along the base axis: translational rank collapses
    s = np.linalg.svd(jacobian(model, np.zeros(model.n)), compute_uv=False)
    assert s[-1] < 1e-3


def test_mass_matrix_symmetric_positive_definite(model, rng):
    for q in random_configs(model, rng, 100):
        M = mass_matrix(model, q)
        assert np.abs(M - M.T).max() < 1e-10
        assert np.linalg.eigvalsh(M)[0] > 0.0


def _rod_model(length=0.7, mass=2.0, radius=1e-6):
    return RobotModel.build(
        name="rod",
        joint_offsets=[[0.0, 0.0, 0.0]],
        joint_axes=[[0.0, 1.0, 0.0]],
        joint_limits=[np.pi],
        link_masses=[mass],
        link_tips=[[0.0, 0.0, length]],
        capsule_radii=[radius],
        gravity=(0.0, 0.0, 0.0),
    )


def test_mass_matrix_reduces_to_uniform_rod_pendulum():
    length, mass = 0.7, 2.0
    rod = _rod_model(length, mass)
    M = mass_matrix(rod, np.array([0.3]))
    assert abs(M[0, 0] - mass * length**2 / 3.0) < 1e-9


def test_bias_forces_zero_velocity_and_quadratic_scaling(model, rng):
    for q in random_configs(model, rng, 10):
        assert np.allclose(bias_forces(model, q, np.zeros(model.n)), 0.0, atol=1e-12)
        qd = rng.uniform(-1.0, 1.0, model.n)
        c1 = bias_forces(model, q, qd)
        c2 = bias_forces(model, q, 2.0 * qd)
        assert np.allclose(c2, 4.0 * c1, rtol=1e-9, atol=1e-12)


def test_bias_forces_power_balance_against_fd_mass_matrix(model, rng):
    # qdot^T Mdot qdot = 2 qdot^T C(q, qdot) with Mdot from finite differences
    h = 1e-6
    for q in random_configs(model, rng, 10):
        qd = rng.uniform(-1.0, 1.0, model.n)
        Mdot = (mass_matrix(model, q + h * qd) - mass_matrix(model, q - h * qd)) / (2 * h)
        lhs = qd @ Mdot @ qd
        rhs = 2.0 * qd @ bias_forces(model, q, qd)
        assert abs(lhs - rhs) < 1e-5 * max(1.0, abs(lhs))


def test_gravity_vector_zero_gravity_model(rng):
    rod = _rod_model()
    assert np.allclose(gravity_vector(rod, np.array([0.4])), 0.0, atol=1e-15)


def test_gravity_vector_matches_potential_energy_gradient(model, rng):
    h = 1e-6
    for q in random_configs(model, rng, 20):
        g = gravity_vector(model, q)
        for j in range(model.n):
            dq = np.zeros(model.n)
            dq[j] = h
            fd = (potential_energy(model, q + dq) - potential_energy(model, q - dq)) / (2 * h)
            assert abs(g[j] - fd) < 1e-5


def test_gravity_vector_vanishes_along_gravity_axis(model):
    # stretched along the vertical axis, every COM sits on the base axis
    assert np.allclose(gravity_vector(model, np.zeros(model.n)), 0.0, atol=1e-10)


def test_dynamics_agree_with_spatial_algebra_reference(model, rng):
    for q in random_configs(model, rng, 30):
        qd = rng.uniform(-1.5, 1.5, model.n)
        assert np.abs(mass_matrix(model, q) - mass_matrix_ref(model, q)).max() < 1e-9
        assert np.abs(bias_forces(model, q, qd) - bias_ref(model, q, qd)).max() < 1e-9
        assert np.abs(gravity_vector(model, q) - gravity_ref(model, q)).max() < 1e-9


def test_task_space_identities(model, rng):
    count = 0
    for q in random_configs(model, rng, 100):
        tsq = task_space_quantities(model, q)
        if tsq.near_singular:
            continue
        count += 1
        assert np.abs(tsq.J @ tsq.J_dagger - np.eye(6)).max() < 1e-8
        assert np.abs(tsq.N @ tsq.N - tsq.N).max() < 1e-8
        Minv = np.linalg.inv(mass_matrix(model, q))
        assert np.abs(tsq.J @ Minv @ tsq.N.T).max() < 1e-8
    assert count > 90


def test_null_torque_produces_zero_operational_acceleration(model, rng):
    for q in random_configs(model, rng, 100):
        tsq = task_space_quantities(model, q)
        if tsq.near_singular:
            continue
        Minv = np.linalg.inv(mass_matrix(model, q))
        tau = rng.normal(size=model.n)
        acc = tsq.J @ Minv @ tsq.N.T @ tau
        assert np.abs(acc).max() < 1e-8 * max(1.0, np.abs(tau).max())


def test_near_singular_flag_and_damping(model):
    tsq = task_space_quantities(model, np.zeros(model.n))
    assert tsq.near_singular
    assert np.all(np.isfinite(tsq.Lambda))


def test_kernel_dynamics_match_reference_implementation(model, rng):
    for q in random_configs(model, rng, 20):
        qd = rng.uniform(-1.0, 1.0, model.n)
        J, M, bias, gvec, ee, _ = _kernels.dynamics_probe(
            model.joint_axes, model.joint_offsets, model.link_coms, model.link_tips,
            model.link_inertias, model.link_masses, model.gravity, q, qd)
        dyn = dynamics_batch(model, q[None], qd[None])
        assert np.abs(J - dyn.J[0]).max() < 1e-12
        assert np.abs(M - dyn.M[0]).max() < 1e-12
        assert np.abs(bias - dyn.bias[0]).max() < 1e-12
        assert np.abs(gvec - dyn.gravity[0]).max() < 1e-12
        assert np.abs(ee - dyn.chain.ee_pos[0]).max() < 1e-12


def test_model_loader_defaults(model):
    assert model.n == 7
    assert np.all(model.link_masses > 0)
    for I in model.link_inertias:
        assert np.allclose(I, I.T)
        assert np.linalg.eigvalsh(I)[0] > 0.0
    assert np.all(model.capsule_radii > 0)


def test_model_build_rejects_bad_inputs():
    with pytest.raises(ValueError):
        RobotModel.build("bad", [[0, 0, 0.1]], [[0, 0, 1]], [1.0], [-1.0],
                         [[0, 0, 0.1]], [0.05])
    with pytest.raises(ValueError):
        RobotModel.build("bad", [[0, 0, 0.1]], [[0, 0, 1]], [1.0], [1.0],
                         [[0, 0, 0.1]], [0.0])
