"""Rigid-body transform algebra: poses, pose errors, and distances.

Quaternions are stored in (w, x, y, z) order and kept unit-norm. All
quaternion helpers broadcast over leading batch axes so the simulator can
evaluate populations of rollouts without Python loops.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_QUAT_NORM_TOL = 1e-9


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    out = np.array(q, copy=True, dtype=float)
    out[..., 1:] *= -1.0
    return out


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, broadcasting over leading axes."""
    aw, ax, ay, az = (a[..., i] for i in range(4))
    bw, bx, by, bz = (b[..., i] for i in range(4))
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion(s) q."""
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_axis_angle(axis: np.ndarray, angle: np.ndarray) -> np.ndarray:
    angle = np.asarray(angle, dtype=float)
    half = 0.5 * angle
    s = np.sin(half)
    q = np.empty(angle.shape + (4,))
    q[..., 0] = np.cos(half)
    q[..., 1:] = s[..., None] * axis
    return q


def quat_from_rotvec(v: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to quaternion."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1)
    half = 0.5 * angle
    q = np.empty(v.shape[:-1] + (4,))
    q[..., 0] = np.cos(half)
    # sin(x)/x with series fallback near zero
    small = angle < 1e-8
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - angle**2 / 48.0, np.sin(half) / np.where(small, 1.0, angle))
    q[..., 1:] = k[..., None] * v
    return q


def quat_log(q: np.ndarray) -> np.ndarray:
    """Logarithmic map: quaternion to rotation vector with norm <= pi."""
    q = np.asarray(q, dtype=float)
    # enforce w >= 0 so the returned angle is the short way around
    q = np.where(q[..., :1] < 0.0, -q, q)
    s = np.linalg.norm(q[..., 1:], axis=-1)
    w = q[..., 0]
    angle = 2.0 * np.arctan2(s, w)
    small = s < 1e-9
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 2.0 / np.clip(w, 1e-12, None), angle / np.where(small, 1.0, s))
    return k[..., None] * q[..., 1:]


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    m[..., 0, 1] = 2.0 * (xy - wz)
    m[..., 0, 2] = 2.0 * (xz + wy)
    m[..., 1, 0] = 2.0 * (xy + wz)
    m[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    m[..., 1, 2] = 2.0 * (yz - wx)
    m[..., 2, 0] = 2.0 * (xz - wy)
    m[..., 2, 1] = 2.0 * (yz + wx)
    m[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return m


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Rotation matrix to quaternion, batched, branch-free via Shepperd's method."""
    m = np.asarray(m, dtype=float)
    batch = m.shape[:-2]
    q = np.empty(batch + (4,))
    t = np.einsum("...ii->...", m)
    # four candidate constructions; pick the numerically safest per element
    q0 = np.empty(batch + (4,))
    q0[..., 0] = 1.0 + t
    q0[..., 1] = m[..., 2, 1] - m[..., 1, 2]
    q0[..., 2] = m[..., 0, 2] - m[..., 2, 0]
    q0[..., 3] = m[..., 1, 0] - m[..., 0, 1]
    q1 = np.empty(batch + (4,))
    q1[..., 0] = m[..., 2, 1] - m[..., 1, 2]
    q1[..., 1] = 1.0 + m[..., 0, 0] - m[..., 1, 1] - m[..., 2, 2]
    q1[..., 2] = m[..., 0, 1] + m[..., 1, 0]
    q1[..., 3] = m[..., 0, 2] + m[..., 2, 0]
    q2 = np.empty(batch + (4,))
    q2[..., 0] = m[..., 0, 2] - m[..., 2, 0]
    q2[..., 1] = m[..., 0, 1] + m[..., 1, 0]
    q2[..., 2] = 1.0 - m[..., 0, 0] + m[..., 1, 1] - m[..., 2, 2]
    q2[..., 3] = m[..., 1, 2] + m[..., 2, 1]
    q3 = np.empty(batch + (4,))
    q3[..., 0] = m[..., 1, 0] - m[..., 0, 1]
    q3[..., 1] = m[..., 0, 2] + m[..., 2, 0]
    q3[..., 2] = m[..., 1, 2] + m[..., 2, 1]
    q3[..., 3] = 1.0 - m[..., 0, 0] - m[..., 1, 1] + m[..., 2, 2]
    cands = np.stack([q0, q1, q2, q3], axis=-2)
    diag = np.stack(
        [1.0 + t, 1.0 + 2.0 * m[..., 0, 0] - t, 1.0 + 2.0 * m[..., 1, 1] - t, 1.0 + 2.0 * m[..., 2, 2] - t],
        axis=-1,
    )
    best = np.argmax(diag, axis=-1)
    q = np.take_along_axis(cands, best[..., None, None].repeat(4, axis=-1), axis=-2)[..., 0, :]
    q = quat_normalize(q)
    return np.where(q[..., :1] < 0.0, -q, q)


@dataclass(frozen=True)
class Pose:
    """A rigid-body pose: world translation (m) and unit quaternion (w, x, y, z)."""

    translation: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=float).reshape(3)
        r = np.asarray(self.rotation, dtype=float).reshape(4)
        if not np.all(np.isfinite(t)):
            raise ValueError("pose translation must be finite")
        n = np.linalg.norm(r)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} too far from 1")
        if abs(n - 1.0) > _QUAT_NORM_TOL:
            r = r / n
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", r)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3))


@dataclass(frozen=True)
class PoseError:
    """Pose difference: linear offset (m) and axis-angle of the relative rotation (rad)."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float).reshape(3)
        ang = np.asarray(self.angular, dtype=float).reshape(3)
        if np.linalg.norm(ang) > np.pi + 1e-9:
            raise ValueError("angular error norm exceeds pi")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    @staticmethod
    def zero() -> "PoseError":
        return PoseError(np.zeros(3), np.zeros(3))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


def pose_error(x: Pose, x_d: Pose) -> PoseError:
    """Error of pose x relative to desired pose x_d.

    Linear part is the world-frame translation difference; angular part is the
    axis-angle of x_d.rotation^-1 * x.rotation (relative rotation expressed in
    the desired frame), so pose_error(x, x) vanishes.
    """
    rel = quat_multiply(quat_conjugate(x_d.rotation), x.rotation)
    return PoseError(x.translation - x_d.translation, quat_log(rel))


def integrate_pose(x: Pose, d: PoseError) -> Pose:
    """Displace pose x by error d, the right inverse of pose_error for small d."""
    rot = quat_multiply(x.rotation, quat_from_rotvec(d.angular))
    return Pose(x.translation + d.linear, quat_normalize(rot))


def translational_distance(a: Pose, b: Pose) -> float:
    """Euclidean distance between the translations of two poses (m)."""
    return float(np.linalg.norm(a.translation - b.translation))
