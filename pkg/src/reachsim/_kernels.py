"""Numba-compiled simulation hot path.

One `rollout_kernel` call advances a whole population of candidate rollouts
(leading batch axis, prange-parallel) through H control intervals of physics
substeps, computing arm dynamics, the impedance control law, penalty contacts
and mass-spring wall forces per substep. Members are fully independent, so
results are bitwise deterministic regardless of thread count.

The pure-numpy implementations in robot.py define the semantics; the test
suite asserts this module agrees with them to machine precision.
"""

from __future__ import annotations

import numpy as np
from numba import njit, prange

# control-law modes
MODE_OP_NULL = 0
MODE_REF_POSTURE = 1
MODE_DIRECT_TORQUE = 2

BLOWUP_LIMIT = 1.0e6
SING_THRESH_SQ = 1.0e-8  # sigma_min(J) < 1e-4
SING_DAMPING = 1.0e-4


@njit(cache=True, fastmath=True)
def _rodrigues(axis, angle, out):
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    x, y, z = axis[0], axis[1], axis[2]
    out[0, 0] = c + x * x * t
    out[0, 1] = x * y * t - z * s
    out[0, 2] = x * z * t + y * s
    out[1, 0] = x * y * t + z * s
    out[1, 1] = c + y * y * t
    out[1, 2] = y * z * t - x * s
    out[2, 0] = x * z * t - y * s
    out[2, 1] = y * z * t + x * s
    out[2, 2] = c + z * z * t


@njit(cache=True, fastmath=True)
def _mat_log3(R, out):
    """Rotation matrix logarithm as a rotation vector (angle <= pi)."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    c = 0.5 * (tr - 1.0)
    if c > 1.0:
        c = 1.0
    if c < -1.0:
        c = -1.0
    angle = np.arccos(c)
    ax = R[2, 1] - R[1, 2]
    ay = R[0, 2] - R[2, 0]
    az = R[1, 0] - R[0, 1]
    if angle < 1e-8:
        out[0] = 0.5 * ax
        out[1] = 0.5 * ay
        out[2] = 0.5 * az
        return
    if angle > np.pi - 1e-6:
        # near-pi: use the symmetric part for a stable axis
        xx = np.sqrt(max(0.0, (R[0, 0] + 1.0) * 0.5))
        yy = np.sqrt(max(0.0, (R[1, 1] + 1.0) * 0.5))
        zz = np.sqrt(max(0.0, (R[2, 2] + 1.0) * 0.5))
        if ax < 0.0:
            xx = -xx
        if ay < 0.0:
            yy = -yy
        if az < 0.0:
            zz = -zz
        nrm = np.sqrt(xx * xx + yy * yy + zz * zz)
        if nrm < 1e-12:
            out[0] = angle
            out[1] = 0.0
            out[2] = 0.0
            return
        out[0] = angle * xx / nrm
        out[1] = angle * yy / nrm
        out[2] = angle * zz / nrm
        return
    k = 0.5 * angle / np.sin(angle)
    out[0] = k * ax
    out[1] = k * ay
    out[2] = k * az


@njit(cache=True, fastmath=True)
def _chol_factor(A, n, L):
    """Cholesky of SPD A into L (lower). Returns False if not PD."""
    for i in range(n):
        for j in range(i + 1):
            s = A[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            if i == j:
                if s <= 0.0:
                    return False
                L[i, i] = np.sqrt(s)
            else:
                L[i, j] = s / L[j, j]
    return True


@njit(cache=True, fastmath=True)
def _chol_solve(L, n, b, out):
    for i in range(n):
        s = b[i]
        for k in range(i):
            s -= L[i, k] * out[k]
        out[i] = s / L[i, i]
    for i in range(n - 1, -1, -1):
        s = out[i]
        for k in range(i + 1, n):
            s -= L[k, i] * out[k]
        out[i] = s / L[i, i]


@njit(cache=True, fastmath=True)
def _fk(axes, offsets, coms, tips, q, R, o, z, com, tip):
    """Forward kinematics for one member; fills world-frame chain arrays."""
    n = q.shape[0]
    Rl = np.empty((3, 3))
    Rprev = np.eye(3)
    oprev = np.zeros(3)
    for j in range(n):
        _rodrigues(axes[j], q[j], Rl)
        for r in range(3):
            o[j, r] = oprev[r]
            z[j, r] = 0.0
            for k in range(3):
                o[j, r] += Rprev[r, k] * offsets[j, k]
                z[j, r] += Rprev[r, k] * axes[j, k]
        for r in range(3):
            for cc_ in range(3):
                s = 0.0
                for k in range(3):
                    s += Rprev[r, k] * Rl[k, cc_]
                R[j, r, cc_] = s
        for r in range(3):
            oprev[r] = o[j, r]
            com[j, r] = o[j, r]
            tip[j, r] = o[j, r]
            for k in range(3):
                com[j, r] += R[j, r, k] * coms[j, k]
                tip[j, r] += R[j, r, k] * tips[j, k]
        Rprev = R[j]


@njit(cache=True, fastmath=True)
def _dynamics(axes, offsets, coms, tips, inertias, masses, gravity,
              q, qd, R, o, z, com, tip, Jc, Iw, J, M, bias, gvec):
    """Mass matrix, bias, gravity and EE Jacobian for one member.

    Jc (n,n,3) holds masked COM Jacobians; Iw (n,3,3) world link inertias.
    """
    n = q.shape[0]
    _fk(axes, offsets, coms, tips, q, R, o, z, com, tip)

    # world link inertias Iw = R I R^T
    for i in range(n):
        for r in range(3):
            for cc_ in range(3):
                s = 0.0
                for a in range(3):
                    ria = R[i, r, a]
                    for b in range(3):
                        s += ria * inertias[i, a, b] * R[i, cc_, b]
                Iw[i, r, cc_] = s

    # COM jacobians Jc[i, j] = z_j x (com_i - o_j) for j <= i
    for i in range(n):
        for j in range(n):
            if j <= i:
                dx = com[i, 0] - o[j, 0]
                dy = com[i, 1] - o[j, 1]
                dz = com[i, 2] - o[j, 2]
                Jc[i, j, 0] = z[j, 1] * dz - z[j, 2] * dy
                Jc[i, j, 1] = z[j, 2] * dx - z[j, 0] * dz
                Jc[i, j, 2] = z[j, 0] * dy - z[j, 1] * dx
            else:
                Jc[i, j, 0] = 0.0
                Jc[i, j, 1] = 0.0
                Jc[i, j, 2] = 0.0

    # M = sum_i m_i Jc_i^T Jc_i + Jw_i^T Iw_i Jw_i
    for a in range(n):
        for b2 in range(n):
            M[a, b2] = 0.0
    for i in range(n):
        m = masses[i]
        for a in range(i + 1):
            for b2 in range(a + 1):
                s = m * (Jc[i, a, 0] * Jc[i, b2, 0] + Jc[i, a, 1] * Jc[i, b2, 1]
                         + Jc[i, a, 2] * Jc[i, b2, 2])
                # z_a^T Iw_i z_b
                for r in range(3):
                    t = Iw[i, r, 0] * z[b2, 0] + Iw[i, r, 1] * z[b2, 1] + Iw[i, r, 2] * z[b2, 2]
                    s += z[a, r] * t
                M[a, b2] += s
    for a in range(n):
        for b2 in range(a):
            M[b2, a] = M[a, b2]

    # velocity products
    omega = np.zeros((n, 3))
    zdot = np.empty((n, 3))
    acc = np.zeros(3)
    for j in range(n):
        for r in range(3):
            acc[r] = (omega[j - 1, r] if j > 0 else 0.0) + qd[j] * z[j, r]
            omega[j, r] = acc[r]
        zdot[j, 0] = omega[j, 1] * z[j, 2] - omega[j, 2] * z[j, 1]
        zdot[j, 1] = omega[j, 2] * z[j, 0] - omega[j, 0] * z[j, 2]
        zdot[j, 2] = omega[j, 0] * z[j, 1] - omega[j, 1] * z[j, 0]

    v_o = np.zeros((n, 3))
    for k in range(n):
        for j in range(k + 1):
            dx = o[k, 0] - o[j, 0]
            dy = o[k, 1] - o[j, 1]
            dz = o[k, 2] - o[j, 2]
            v_o[k, 0] += qd[j] * (z[j, 1] * dz - z[j, 2] * dy)
            v_o[k, 1] += qd[j] * (z[j, 2] * dx - z[j, 0] * dz)
            v_o[k, 2] += qd[j] * (z[j, 0] * dy - z[j, 1] * dx)

    v_c = np.zeros((n, 3))
    for i in range(n):
        for j in range(i + 1):
            for r in range(3):
                v_c[i, r] += qd[j] * Jc[i, j, r]

    # bias torques
    for j in range(n):
        bias[j] = 0.0
        gvec[j] = 0.0
    a_c = np.empty(3)
    omdot = np.zeros((n, 3))
    for i in range(n):
        for r in range(3):
            omdot[i, r] = (omdot[i - 1, r] if i > 0 else 0.0) + qd[i] * zdot[i, r]
    for i in range(n):
        a_c[0] = 0.0
        a_c[1] = 0.0
        a_c[2] = 0.0
        for j in range(i + 1):
            dx = com[i, 0] - o[j, 0]
            dy = com[i, 1] - o[j, 1]
            dz = com[i, 2] - o[j, 2]
            # zdot_j x (com_i - o_j)
            t0 = zdot[j, 1] * dz - zdot[j, 2] * dy
            t1 = zdot[j, 2] * dx - zdot[j, 0] * dz
            t2 = zdot[j, 0] * dy - zdot[j, 1] * dx
            # z_j x (v_c_i - v_o_j)
            wx = v_c[i, 0] - v_o[j, 0]
            wy = v_c[i, 1] - v_o[j, 1]
            wz = v_c[i, 2] - v_o[j, 2]
            t0 += z[j, 1] * wz - z[j, 2] * wy
            t1 += z[j, 2] * wx - z[j, 0] * wz
            t2 += z[j, 0] * wy - z[j, 1] * wx
            a_c[0] += qd[j] * t0
            a_c[1] += qd[j] * t1
            a_c[2] += qd[j] * t2
        # rotational torque: Iw omdot + omega x (Iw omega)
        h0 = Iw[i, 0, 0] * omega[i, 0] + Iw[i, 0, 1] * omega[i, 1] + Iw[i, 0, 2] * omega[i, 2]
        h1 = Iw[i, 1, 0] * omega[i, 0] + Iw[i, 1, 1] * omega[i, 1] + Iw[i, 1, 2] * omega[i, 2]
        h2 = Iw[i, 2, 0] * omega[i, 0] + Iw[i, 2, 1] * omega[i, 1] + Iw[i, 2, 2] * omega[i, 2]
        r0 = (Iw[i, 0, 0] * omdot[i, 0] + Iw[i, 0, 1] * omdot[i, 1] + Iw[i, 0, 2] * omdot[i, 2]
              + omega[i, 1] * h2 - omega[i, 2] * h1)
        r1 = (Iw[i, 1, 0] * omdot[i, 0] + Iw[i, 1, 1] * omdot[i, 1] + Iw[i, 1, 2] * omdot[i, 2]
              + omega[i, 2] * h0 - omega[i, 0] * h2)
        r2 = (Iw[i, 2, 0] * omdot[i, 0] + Iw[i, 2, 1] * omdot[i, 1] + Iw[i, 2, 2] * omdot[i, 2]
              + omega[i, 0] * h1 - omega[i, 1] * h0)
        m = masses[i]
        for j in range(i + 1):
            bias[j] += m * (Jc[i, j, 0] * a_c[0] + Jc[i, j, 1] * a_c[1] + Jc[i, j, 2] * a_c[2])
            bias[j] += z[j, 0] * r0 + z[j, 1] * r1 + z[j, 2] * r2
            gvec[j] -= m * (Jc[i, j, 0] * gravity[0] + Jc[i, j, 1] * gravity[1]
                            + Jc[i, j, 2] * gravity[2])

    # end-effector jacobian
    ee0 = tip[n - 1, 0]
    ee1 = tip[n - 1, 1]
    ee2 = tip[n - 1, 2]
    for j in range(n):
        dx = ee0 - o[j, 0]
        dy = ee1 - o[j, 1]
        dz = ee2 - o[j, 2]
        J[0, j] = z[j, 1] * dz - z[j, 2] * dy
        J[1, j] = z[j, 2] * dx - z[j, 0] * dz
        J[2, j] = z[j, 0] * dy - z[j, 1] * dx
        J[3, j] = z[j, 0]
        J[4, j] = z[j, 1]
        J[5, j] = z[j, 2]


@njit(cache=True, fastmath=True)
def _control_torque(n, mode, J, M, bias, gvec, qd, R_ee, ee, xd_pos, xd_R,
                    q, qd_des, raw_tau, kp6, kd6, kqp, kqd, LM, Lam, tau):
    """Eq. 1-3 control law for one member. LM is the Cholesky factor of M."""
    if mode == MODE_DIRECT_TORQUE:
        for j in range(n):
            tau[j] = raw_tau[j]
        return True

    # pose error: linear world offset; angular = world-frame log of R_ee R_d^T
    err = np.empty(6)
    err[0] = ee[0] - xd_pos[0]
    err[1] = ee[1] - xd_pos[1]
    err[2] = ee[2] - xd_pos[2]
    Rrel = np.empty((3, 3))
    for r in range(3):
        for c in range(3):
            s = 0.0
            for k in range(3):
                s += R_ee[r, k] * xd_R[c, k]  # R_ee @ R_d^T
            Rrel[r, c] = s
    ang = np.empty(3)
    _mat_log3(Rrel, ang)
    err[3] = ang[0]
    err[4] = ang[1]
    err[5] = ang[2]

    # task velocity xdot = J qd
    xdot = np.empty(6)
    for r in range(6):
        s = 0.0
        for j in range(n):
            s += J[r, j] * qd[j]
        xdot[r] = s

    # A = J M^-1 J^T via columns of M^-1 J^T
    X = np.empty((n, 6))
    colb = np.empty(n)
    colx = np.empty(n)
    for r in range(6):
        for j in range(n):
            colb[j] = J[r, j]
        _chol_solve(LM, n, colb, colx)
        for j in range(n):
            X[j, r] = colx[j]
    A = np.empty((6, 6))
    for r in range(6):
        for c in range(r + 1):
            s = 0.0
            for j in range(n):
                s += J[r, j] * X[j, c]
            A[r, c] = s
            A[c, r] = s

    # singularity check: chol(J J^T - thresh I) fails iff sigma_min^2 < thresh
    JJt = np.empty((6, 6))
    for r in range(6):
        for c in range(r + 1):
            s = 0.0
            for j in range(n):
                s += J[r, j] * J[c, j]
            JJt[r, c] = s - (SING_THRESH_SQ if r == c else 0.0)
            JJt[c, r] = JJt[r, c]
    Ltmp = np.zeros((6, 6))
    if not _chol_factor(JJt, 6, Ltmp):
        for r in range(6):
            A[r, r] += SING_DAMPING

    LA = np.zeros((6, 6))
    if not _chol_factor(A, 6, LA):
        return False

    # F = Lambda (-Kp err - Kd xdot)
    w = np.empty(6)
    for r in range(6):
        w[r] = -kp6[r] * err[r] - kd6[r] * xdot[r]
    F = np.empty(6)
    _chol_solve(LA, 6, w, F)

    # null-space torque: v - J^T Lambda J M^-1 v
    v = np.empty(n)
    for j in range(n):
        v[j] = -kqp[j] * (q[j] - qd_des[j]) - kqd[j] * qd[j]
    _chol_solve(LM, n, v, colx)  # colx = M^-1 v
    t6 = np.empty(6)
    for r in range(6):
        s = 0.0
        for j in range(n):
            s += J[r, j] * colx[j]
        t6[r] = s
    lamt = np.empty(6)
    _chol_solve(LA, 6, t6, lamt)

    for j in range(n):
        s = bias[j] + gvec[j] + v[j]
        for r in range(6):
            s += J[r, j] * (F[r] - lamt[r])
        tau[j] = s
    # Lam output kept for probes
    for r in range(6):
        for c in range(6):
            Lam[r, c] = A[r, c]
    return True


@njit(cache=True, fastmath=True)
def _point_velocity(n, link, p, z, o, qd, out):
    out[0] = 0.0
    out[1] = 0.0
    out[2] = 0.0
    for j in range(link + 1):
        dx = p[0] - o[j, 0]
        dy = p[1] - o[j, 1]
        dz = p[2] - o[j, 2]
        out[0] += qd[j] * (z[j, 1] * dz - z[j, 2] * dy)
        out[1] += qd[j] * (z[j, 2] * dx - z[j, 0] * dz)
        out[2] += qd[j] * (z[j, 0] * dy - z[j, 1] * dx)


@njit(cache=True, fastmath=True)
def _apply_robot_contact(n, link, p, nrm, f, z, o, tau_c):
    """Reaction -f*nrm on the robot at point p of the given link."""
    for j in range(link + 1):
        dx = p[0] - o[j, 0]
        dy = p[1] - o[j, 1]
        dz = p[2] - o[j, 2]
        jx = z[j, 1] * dz - z[j, 2] * dy
        jy = z[j, 2] * dx - z[j, 0] * dz
        jz = z[j, 0] * dy - z[j, 1] * dx
        tau_c[j] -= f * (jx * nrm[0] + jy * nrm[1] + jz * nrm[2])


@njit(cache=True, fastmath=True)
def _capsule_sphere_contacts(n, nsph, o, tip, z, qd, radii, kc, cc,
                             centers, vels, sradius, tau_c, sforce, fmax):
    """Penalty contacts between every robot capsule and a set of spheres."""
    p = np.empty(3)
    vp = np.empty(3)
    nrm = np.empty(3)
    for s in range(nsph):
        cx = centers[s, 0]
        cy = centers[s, 1]
        cz = centers[s, 2]
        rs = sradius[s]
        for l in range(n):
            ax, ay, az = o[l, 0], o[l, 1], o[l, 2]
            ux = tip[l, 0] - ax
            uy = tip[l, 1] - ay
            uz = tip[l, 2] - az
            # cheap reject against segment midpoint bounding sphere
            mx = ax + 0.5 * ux - cx
            my = ay + 0.5 * uy - cy
            mz = az + 0.5 * uz - cz
            L2 = ux * ux + uy * uy + uz * uz
            reach = 0.5 * np.sqrt(L2) + radii[l] + rs
            if mx * mx + my * my + mz * mz > reach * reach:
                continue
            if L2 > 1e-16:
                t = ((cx - ax) * ux + (cy - ay) * uy + (cz - az) * uz) / L2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            p[0] = ax + t * ux
            p[1] = ay + t * uy
            p[2] = az + t * uz
            dx = cx - p[0]
            dy = cy - p[1]
            dz = cz - p[2]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            pen = radii[l] + rs - dist
            if pen <= 0.0 or dist < 1e-12:
                continue
            nrm[0] = dx / dist
            nrm[1] = dy / dist
            nrm[2] = dz / dist
            _point_velocity(n, l, p, z, o, qd, vp)
            # ddot = -(v_sphere - v_point) . n
            ddot = -((vels[s, 0] - vp[0]) * nrm[0] + (vels[s, 1] - vp[1]) * nrm[1]
                     + (vels[s, 2] - vp[2]) * nrm[2])
            f = kc * pen + cc * ddot
            if f <= 0.0:
                continue
            sforce[s, 0] += f * nrm[0]
            sforce[s, 1] += f * nrm[1]
            sforce[s, 2] += f * nrm[2]
            _apply_robot_contact(n, l, p, nrm, f, z, o, tau_c)
            if f > fmax[0]:
                fmax[0] = f


@njit(cache=True, fastmath=True)
def _capsule_node_contacts(n, nnode, o, tip, z, qd, radii, kc, cc,
                           node_p, node_v, node_radius, tau_c, nforce, fmax):
    """Like _capsule_sphere_contacts but prunes links against the node AABB.

    Returns the number of active contacts so the caller can wake the wall.
    """
    if nnode == 0:
        return 0
    rmax = 0.0
    lox = np.inf
    loy = np.inf
    loz = np.inf
    hix = -np.inf
    hiy = -np.inf
    hiz = -np.inf
    for nd in range(nnode):
        if node_radius[nd] > rmax:
            rmax = node_radius[nd]
        x, y, zz = node_p[nd, 0], node_p[nd, 1], node_p[nd, 2]
        if x < lox:
            lox = x
        if x > hix:
            hix = x
        if y < loy:
            loy = y
        if y > hiy:
            hiy = y
        if zz < loz:
            loz = zz
        if zz > hiz:
            hiz = zz
    hits = 0
    p = np.empty(3)
    vp = np.empty(3)
    nrm = np.empty(3)
    for l in range(n):
        pad = radii[l] + rmax
        ax, ay, az = o[l, 0], o[l, 1], o[l, 2]
        bx, by, bz = tip[l, 0], tip[l, 1], tip[l, 2]
        if max(ax, bx) < lox - pad or min(ax, bx) > hix + pad:
            continue
        if max(ay, by) < loy - pad or min(ay, by) > hiy + pad:
            continue
        if max(az, bz) < loz - pad or min(az, bz) > hiz + pad:
            continue
        ux = bx - ax
        uy = by - ay
        uz = bz - az
        L2 = ux * ux + uy * uy + uz * uz
        for s in range(nnode):
            cx = node_p[s, 0]
            cy = node_p[s, 1]
            cz = node_p[s, 2]
            rs = node_radius[s]
            if L2 > 1e-16:
                t = ((cx - ax) * ux + (cy - ay) * uy + (cz - az) * uz) / L2
                if t < 0.0:
                    t = 0.0
                elif t > 1.0:
                    t = 1.0
            else:
                t = 0.0
            p[0] = ax + t * ux
            p[1] = ay + t * uy
            p[2] = az + t * uz
            dx = cx - p[0]
            dy = cy - p[1]
            dz = cz - p[2]
            dist = np.sqrt(dx * dx + dy * dy + dz * dz)
            pen = radii[l] + rs - dist
            if pen <= 0.0 or dist < 1e-12:
                continue
            nrm[0] = dx / dist
            nrm[1] = dy / dist
            nrm[2] = dz / dist
            _point_velocity(n, l, p, z, o, qd, vp)
            ddot = -((node_v[s, 0] - vp[0]) * nrm[0] + (node_v[s, 1] - vp[1]) * nrm[1]
                     + (node_v[s, 2] - vp[2]) * nrm[2])
            f = kc * pen + cc * ddot
            if f <= 0.0:
                continue
            hits += 1
            nforce[s, 0] += f * nrm[0]
            nforce[s, 1] += f * nrm[1]
            nforce[s, 2] += f * nrm[2]
            _apply_robot_contact(n, l, p, nrm, f, z, o, tau_c)
            if f > fmax[0]:
                fmax[0] = f
    return hits


@njit(cache=True, fastmath=True)
def _capsule_ground_contacts(n, o, tip, z, qd, radii, kc, cc, tau_c, fmax):
    p = np.empty(3)
    vp = np.empty(3)
    nrm = np.empty(3)
    nrm[0] = 0.0
    nrm[1] = 0.0
    nrm[2] = 1.0
    for l in range(n):
        for e in range(2):
            if e == 0:
                p[0], p[1], p[2] = o[l, 0], o[l, 1], o[l, 2]
            else:
                p[0], p[1], p[2] = tip[l, 0], tip[l, 1], tip[l, 2]
            pen = radii[l] - p[2]
            if pen <= 0.0:
                continue
            _point_velocity(n, l, p, z, o, qd, vp)
            f = kc * pen + cc * (-vp[2])
            if f <= 0.0:
                continue
            # upward force on robot link: reaction of ground, normal +z toward robot
            _apply_robot_contact(n, l, p, nrm, -f, z, o, tau_c)
            if f > fmax[0]:
                fmax[0] = f


@njit(cache=True, fastmath=True)
def _spring_forces(node_p, node_v, edges, rest, ks, cs, force):
    E = edges.shape[0]
    for e in range(E):
        i = edges[e, 0]
        j = edges[e, 1]
        dx = node_p[j, 0] - node_p[i, 0]
        dy = node_p[j, 1] - node_p[i, 1]
        dz = node_p[j, 2] - node_p[i, 2]
        ln = np.sqrt(dx * dx + dy * dy + dz * dz)
        if ln < 1e-12:
            continue
        inv = 1.0 / ln
        ex = dx * inv
        ey = dy * inv
        ez = dz * inv
        vrel = ((node_v[j, 0] - node_v[i, 0]) * ex + (node_v[j, 1] - node_v[i, 1]) * ey
                + (node_v[j, 2] - node_v[i, 2]) * ez)
        f = ks[e] * (ln - rest[e]) + cs[e] * vrel
        fx = f * ex
        fy = f * ey
        fz = f * ez
        force[i, 0] += fx
        force[i, 1] += fy
        force[i, 2] += fz
        force[j, 0] -= fx
        force[j, 1] -= fy
        force[j, 2] -= fz


@njit(cache=True, fastmath=True)
def _member_rollout(
    axes, offsets, lcoms, ltips, inertias, masses, radii, limits, gravity,
    ground, kc, cc,
    sph_radius, sph_mass, sph_grav, sph_drag,
    node_rest, node_mass, node_radius, anchors, edges, rest, ks, cs,
    q, qd, sph_p, sph_v, node_p, node_v,
    actions, mode, kp6, kd6, kqp, kqd,
    ref_lin_max, ref_rot_max,
    dt, substeps,
    ee_pos_out, ee_R_out, max_f_out, profile_out, ee_prof_out,
    q_traj, qd_traj, sph_traj, node_traj,
    clamped_out, blowup_out,
):
    """Advance one member through all actions; returns nothing (writes outputs).

    The applied operational reference displacement is saturated at
    ref_lin_max / ref_rot_max magnitude (the per-interval maximum
    end-effector movement); profile_out[s] is the max robot contact force
    during substep s; ee_prof_out[s] is the end-effector position at the
    START of substep s.
    """
    n = q.shape[0]
    H = actions.shape[0]
    nsph = sph_p.shape[0]
    nnode = node_p.shape[0]

    R = np.empty((n, 3, 3))
    o = np.empty((n, 3))
    z = np.empty((n, 3))
    com = np.empty((n, 3))
    tip = np.empty((n, 3))
    Jc = np.empty((n, n, 3))
    Iw = np.empty((n, 3, 3))
    J = np.empty((6, n))
    M = np.empty((n, n))
    bias = np.empty(n)
    gvec = np.empty(n)
    LM = np.zeros((n, n))
    Lam = np.empty((6, 6))
    tau = np.empty(n)
    tau_c = np.empty(n)
    rhs = np.empty(n)
    qdd = np.empty(n)
    fmax = np.empty(1)
    sforce = np.empty((nsph, 3))
    nforce = np.empty((max(nnode, 1), 3))
    xd_pos = np.empty(3)
    xd_R = np.empty((3, 3))
    qd_des = np.empty(n)
    raw_tau = np.empty(n)
    dxR = np.empty((3, 3))
    axis3 = np.empty(3)

    # wall asleep while its state is exactly the rest state: springs are then
    # zero and integration is the identity, so skipping them is exact
    wall_awake = 0
    for nd in range(nnode):
        if (node_v[nd, 0] != 0.0 or node_v[nd, 1] != 0.0 or node_v[nd, 2] != 0.0
                or node_p[nd, 0] != node_rest[nd, 0] or node_p[nd, 1] != node_rest[nd, 1]
                or node_p[nd, 2] != node_rest[nd, 2]):
            wall_awake = 1
            break

    for h in range(H):
        # references from the state at the start of the control interval
        _fk(axes, offsets, lcoms, ltips, q, R, o, z, com, tip)
        if mode == MODE_DIRECT_TORQUE:
            for j in range(n):
                raw_tau[j] = actions[h, j]
        else:
            lx, ly, lz = actions[h, 0], actions[h, 1], actions[h, 2]
            lmag = np.sqrt(lx * lx + ly * ly + lz * lz)
            if lmag > ref_lin_max and lmag > 0.0:
                scale = ref_lin_max / lmag
                lx *= scale
                ly *= scale
                lz *= scale
            xd_pos[0] = tip[n - 1, 0] + lx
            xd_pos[1] = tip[n - 1, 1] + ly
            xd_pos[2] = tip[n - 1, 2] + lz
            wx, wy, wz = actions[h, 3], actions[h, 4], actions[h, 5]
            ang = np.sqrt(wx * wx + wy * wy + wz * wz)
            if ang > ref_rot_max:
                scale = ref_rot_max / ang
                wx *= scale
                wy *= scale
                wz *= scale
                ang = ref_rot_max
            if ang < 1e-12:
                for r in range(3):
                    for c in range(3):
                        xd_R[r, c] = R[n - 1, r, c]
            else:
                axis3[0] = wx / ang
                axis3[1] = wy / ang
                axis3[2] = wz / ang
                _rodrigues(axis3, ang, dxR)
                for r in range(3):
                    for c in range(3):
                        s = 0.0
                        for k in range(3):
                            s += R[n - 1, r, k] * dxR[k, c]
                        xd_R[r, c] = s
            for j in range(n):
                if mode == MODE_REF_POSTURE:
                    qd_des[j] = 0.0
                else:
                    qd_des[j] = q[j] + actions[h, 6 + j]

        fint_max = 0.0
        for s_i in range(substeps):
            _dynamics(axes, offsets, lcoms, ltips, inertias, masses, gravity,
                      q, qd, R, o, z, com, tip, Jc, Iw, J, M, bias, gvec)
            ee_prof_out[h * substeps + s_i, 0] = tip[n - 1, 0]
            ee_prof_out[h * substeps + s_i, 1] = tip[n - 1, 1]
            ee_prof_out[h * substeps + s_i, 2] = tip[n - 1, 2]
            if not _chol_factor(M, n, LM):
                blowup_out[0] = 1
                return
            ok = _control_torque(n, mode, J, M, bias, gvec, qd, R[n - 1], tip[n - 1],
                                 xd_pos, xd_R, q, qd_des, raw_tau, kp6, kd6, kqp, kqd,
                                 LM, Lam, tau)
            if not ok:
                blowup_out[0] = 1
                return

            for j in range(n):
                tau_c[j] = 0.0
            fmax[0] = 0.0
            for s in range(nsph):
                sforce[s, 0] = 0.0
                sforce[s, 1] = 0.0
                sforce[s, 2] = 0.0
            if nsph > 0:
                _capsule_sphere_contacts(n, nsph, o, tip, z, qd, radii, kc, cc,
                                         sph_p, sph_v, sph_radius, tau_c, sforce, fmax)
            if nnode > 0:
                for nd in range(nnode):
                    nforce[nd, 0] = 0.0
                    nforce[nd, 1] = 0.0
                    nforce[nd, 2] = 0.0
                hits = _capsule_node_contacts(n, nnode, o, tip, z, qd, radii, kc, cc,
                                              node_p, node_v, node_radius, tau_c,
                                              nforce, fmax)
                if hits > 0:
                    wall_awake = 1
                if wall_awake == 1:
                    _spring_forces(node_p, node_v, edges, rest, ks, cs, nforce)
            if ground == 1:
                _capsule_ground_contacts(n, o, tip, z, qd, radii, kc, cc, tau_c, fmax)
                for s in range(nsph):
                    pen = sph_radius[s] - sph_p[s, 2]
                    if pen > 0.0:
                        f = kc * pen + cc * (-sph_v[s, 2])
                        if f > 0.0:
                            sforce[s, 2] += f
                if wall_awake == 1:
                    for nd in range(nnode):
                        if anchors[nd] == 1:
                            continue
                        pen = node_radius[nd] - node_p[nd, 2]
                        if pen > 0.0:
                            f = kc * pen + cc * (-node_v[nd, 2])
                            if f > 0.0:
                                nforce[nd, 2] += f

            # integrate robot; track the pre-clamp magnitude so the limit
            # clamp cannot mask a torque explosion
            for j in range(n):
                rhs[j] = tau[j] + tau_c[j] - bias[j] - gvec[j]
            _chol_solve(LM, n, rhs, qdd)
            bad = 0.0
            for j in range(n):
                qd[j] += qdd[j] * dt
                q[j] += qd[j] * dt
                bad = max(bad, abs(qd[j]), abs(q[j]))
                if q[j] > limits[j]:
                    q[j] = limits[j]
                    if qd[j] > 0.0:
                        qd[j] = 0.0
                    clamped_out[0] = 1
                elif q[j] < -limits[j]:
                    q[j] = -limits[j]
                    if qd[j] < 0.0:
                        qd[j] = 0.0
                    clamped_out[0] = 1

            # integrate obstacles
            for s in range(nsph):
                inv_m = 1.0 / sph_mass[s]
                for r in range(3):
                    a = sforce[s, r] * inv_m - sph_drag[s] * sph_v[s, r] * inv_m
                    if sph_grav[s] == 1:
                        a += gravity[r]
                    sph_v[s, r] += a * dt
                    sph_p[s, r] += sph_v[s, r] * dt
                    bad = max(bad, abs(sph_v[s, r]), abs(sph_p[s, r]))
            if wall_awake == 1:
                for nd in range(nnode):
                    if anchors[nd] == 1:
                        node_v[nd, 0] = 0.0
                        node_v[nd, 1] = 0.0
                        node_v[nd, 2] = 0.0
                        continue
                    inv_m = 1.0 / node_mass[nd]
                    for r in range(3):
                        node_v[nd, r] += nforce[nd, r] * inv_m * dt
                        node_p[nd, r] += node_v[nd, r] * dt
                        bad = max(bad, abs(node_v[nd, r]), abs(node_p[nd, r]))

            profile_out[h * substeps + s_i] = fmax[0]
            if fmax[0] > fint_max:
                fint_max = fmax[0]

            if bad > BLOWUP_LIMIT or bad != bad:
                blowup_out[0] = 1
                return

        # record per-action outputs
        _fk(axes, offsets, lcoms, ltips, q, R, o, z, com, tip)
        for r in range(3):
            ee_pos_out[h, r] = tip[n - 1, r]
            for c in range(3):
                ee_R_out[h, r, c] = R[n - 1, r, c]
        max_f_out[h] = fint_max
        for j in range(n):
            q_traj[h, j] = q[j]
            qd_traj[h, j] = qd[j]
        for s in range(nsph):
            for r in range(3):
                sph_traj[h, s, r] = sph_p[s, r]
                sph_traj[h, s, 3 + r] = sph_v[s, r]
        for nd in range(nnode):
            for r in range(3):
                node_traj[h, nd, r] = node_p[nd, r]
                node_traj[h, nd, 3 + r] = node_v[nd, r]


@njit(parallel=True, cache=True, fastmath=True)
def rollout_kernel(
    axes, offsets, lcoms, ltips, inertias, masses, radii, limits, gravity,
    ground, kc, cc,
    sph_radius, sph_mass, sph_grav, sph_drag,
    node_rest, node_mass, node_radius, anchors, edges, rest, ks, cs,
    q, qd, sph_p, sph_v, node_p, node_v,
    actions, mode, kp6, kd6, kqp, kqd,
    ref_lin_max, ref_rot_max,
    dt, substeps,
    ee_pos_out, ee_R_out, max_f_out, profile_out, ee_prof_out,
    q_traj, qd_traj, sph_traj, node_traj,
    clamped_out, blowup_out,
):
    """Batched rollouts; every member is independent (bitwise deterministic)."""
    B = q.shape[0]
    for b in prange(B):
        _member_rollout(
            axes, offsets, lcoms, ltips, inertias, masses, radii, limits, gravity,
            ground, kc, cc,
            sph_radius, sph_mass, sph_grav, sph_drag,
            node_rest, node_mass, node_radius, anchors, edges, rest, ks, cs,
            q[b], qd[b], sph_p[b], sph_v[b], node_p[b], node_v[b],
            actions[b], mode, kp6, kd6, kqp, kqd,
            ref_lin_max, ref_rot_max,
            dt, substeps,
            ee_pos_out[b], ee_R_out[b], max_f_out[b], profile_out[b], ee_prof_out[b],
            q_traj[b], qd_traj[b], sph_traj[b], node_traj[b],
            clamped_out[b:b + 1], blowup_out[b:b + 1],
        )


@njit(cache=True, fastmath=True)
def dynamics_probe(axes, offsets, lcoms, ltips, inertias, masses, gravity, q, qd):
    """Test hook: single-member dynamics quantities for cross-validation."""
    n = q.shape[0]
    R = np.empty((n, 3, 3))
    o = np.empty((n, 3))
    z = np.empty((n, 3))
    com = np.empty((n, 3))
    tip = np.empty((n, 3))
    Jc = np.empty((n, n, 3))
    Iw = np.empty((n, 3, 3))
    J = np.empty((6, n))
    M = np.empty((n, n))
    bias = np.empty(n)
    gvec = np.empty(n)
    _dynamics(axes, offsets, lcoms, ltips, inertias, masses, gravity,
              q, qd, R, o, z, com, tip, Jc, Iw, J, M, bias, gvec)
    return J, M, bias, gvec, tip[n - 1], R[n - 1]
