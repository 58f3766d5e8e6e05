"""Independent rigid-body dynamics oracle for the test suite.

Recursive Newton-Euler in 6D spatial-vector algebra (Featherstone
conventions, angular components on top), deliberately sharing no code with
reachsim.robot. The mass matrix is recovered column-wise from RNEA with unit
joint accelerations rather than from Jacobian composition.
"""

import numpy as np


def _skew(v):
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _rot(axis, angle):
    K = _skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def _joint_transform(model, j, qj):
    """Plucker motion transform child <- parent for joint j at angle qj."""
    E = _rot(model.joint_axes[j], qj).T
    t = model.joint_offsets[j]
    X = np.zeros((6, 6))
    X[:3, :3] = E
    X[3:, 3:] = E
    X[3:, :3] = -E @ _skew(t)
    return X


def _spatial_inertia(model, j):
    m = model.link_masses[j]
    c = model.link_coms[j]
    C = _skew(c)
    I = np.zeros((6, 6))
    I[:3, :3] = model.link_inertias[j] + m * (C @ C.T)
    I[:3, 3:] = m * C
    I[3:, :3] = m * C.T
    I[3:, 3:] = m * np.eye(3)
    return I


def _cross_motion(v):
    out = np.zeros((6, 6))
    out[:3, :3] = _skew(v[:3])
    out[3:, 3:] = _skew(v[:3])
    out[3:, :3] = _skew(v[3:])
    return out


def _cross_force(v):
    return -_cross_motion(v).T


def rnea(model, q, qdot, qddot, with_gravity=True):
    """Inverse dynamics: tau = M(q) qddot + C(q, qdot) + g(q) (g only if enabled)."""
    n = model.n
    X = [_joint_transform(model, j, q[j]) for j in range(n)]
    S = [np.concatenate([model.joint_axes[j], np.zeros(3)]) for j in range(n)]
    v = np.zeros((n, 6))
    a = np.zeros((n, 6))
    f = np.zeros((n, 6))
    a_base = np.zeros(6)
    if with_gravity:
        a_base[3:] = -model.gravity
    for j in range(n):
        vp = v[j - 1] if j > 0 else np.zeros(6)
        ap = a[j - 1] if j > 0 else a_base
        v[j] = X[j] @ vp + S[j] * qdot[j]
        a[j] = X[j] @ ap + S[j] * qddot[j] + _cross_motion(v[j]) @ (S[j] * qdot[j])
        I = _spatial_inertia(model, j)
        f[j] = I @ a[j] + _cross_force(v[j]) @ (I @ v[j])
    tau = np.zeros(n)
    for j in range(n - 1, -1, -1):
        tau[j] = S[j] @ f[j]
        if j > 0:
            f[j - 1] += X[j].T @ f[j]
    return tau


def mass_matrix_ref(model, q):
    n = model.n
    M = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        M[:, j] = rnea(model, q, np.zeros(n), e, with_gravity=False)
    return M


def bias_ref(model, q, qdot):
    return rnea(model, q, qdot, np.zeros(model.n), with_gravity=False)


def gravity_ref(model, q):
    return rnea(model, q, np.zeros(model.n), np.zeros(model.n), with_gravity=True)
