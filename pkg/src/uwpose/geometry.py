"""Quaternion and rigid-pose arithmetic.

Quaternions are float64 arrays in (w, x, y, z) order, scalar part first,
shape (4,) or batched (N, 4). Rotations follow the Hamilton convention:
``rotate(q, v)`` applies q v q*. A pose is a (position, quaternion) pair
mapping camera coordinates into the world frame.

All functions accept and return plain numpy arrays; nothing here touches
the autodiff tape.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateQuaternionError

_EPS = 1e-12


def normalize(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < _EPS):
        raise DegenerateQuaternionError(f"quaternion norm below {_EPS}")
    return q / n


def canonicalize(q):
    """Flip sign so the first nonzero component (w, then x, y, z) is positive.

    q and -q encode the same rotation; this picks one hemisphere so that
    equality comparisons and regression targets are unambiguous.
    """
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    qb = np.atleast_2d(q).copy()
    sign = np.zeros(qb.shape[0])
    for k in range(4):
        undecided = (sign == 0) & (qb[:, k] != 0)
        sign[undecided] = np.sign(qb[undecided, k])
    sign[sign == 0] = 1.0
    qb *= sign[:, None]
    return qb[0] if single else qb


def hamilton(a, b):
    """Quaternion product a o b (rotation b followed by rotation a)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def conjugate(q):
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def rotate(q, v):
    """Rotate vector(s) v by unit quaternion(s) q via the sandwich q v q*."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = np.concatenate([np.zeros(v.shape[:-1] + (1,)), v], axis=-1)
    return hamilton(hamilton(q, qv), conjugate(q))[..., 1:]


def quat_to_matrix(q):
    """Unit quaternion(s) to 3x3 rotation matrix (batched: (N,4) -> (N,3,3))."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    row0 = np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=-1)
    row1 = np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=-1)
    row2 = np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def from_axis_angle(axis, angle_rad):
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < _EPS:
        raise DegenerateQuaternionError("rotation axis has near-zero norm")
    axis = axis / n
    half = 0.5 * float(angle_rad)
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def angle_between_deg(a, b):
    """Geodesic separation of two unit quaternions, in degrees.

    Hemisphere-invariant: q and -q compare as identical rotations. Computed
    from the chord lengths |a-b| and |a+b| with atan2 rather than arccos of
    the dot product; arccos is ill-conditioned near 0 and 180 degrees and
    cannot return an exact zero for bit-identical inputs, while the chord
    form can and does.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    s = np.linalg.norm(a - b, axis=-1)
    t = np.linalg.norm(a + b, axis=-1)
    return np.degrees(4.0 * np.arctan2(np.minimum(s, t), np.maximum(s, t)))


def compose(pos_a, quat_a, pos_b, quat_b):
    """Pose composition: apply pose b, then pose a.

    Equivalent to multiplying the corresponding homogeneous matrices A @ B.
    """
    pos_a = np.asarray(pos_a, dtype=np.float64)
    pos_b = np.asarray(pos_b, dtype=np.float64)
    return pos_a + rotate(quat_a, pos_b), hamilton(quat_a, quat_b)


def right_camera_pose(position, quaternion, t_lr=None, q_lr=None):
    """Pose of the right stereo camera given the left camera pose.

    ``t_lr``/``q_lr`` place the right camera in the left camera's frame; the
    default is a pure 0.06 m shift along the camera x axis (no relative
    rotation). The returned quaternion is canonicalized.
    """
    if t_lr is None:
        t_lr = np.array([0.06, 0.0, 0.0])
    if q_lr is None:
        q_lr = np.array([1.0, 0.0, 0.0, 0.0])
    pos, quat = compose(position, quaternion, t_lr, q_lr)
    return pos, canonicalize(quat)
