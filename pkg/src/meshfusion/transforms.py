"""Unit quaternions and rigid transforms.

Quaternions are stored as (w, x, y, z) arrays. Rotations act on row vectors
of points, i.e. ``transform.apply(points)`` with points of shape (n, 3).
"""

import numpy as np

__all__ = [
    "quat_normalize",
    "quat_multiply",
    "quat_conjugate",
    "quat_to_matrix",
    "matrix_to_quat",
    "quat_rotate",
    "RigidTransform",
]


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion cannot be normalized")
    q = q / n
    # canonical sign: w >= 0 removes the double cover ambiguity
    if q[0] < 0:
        q = -q
    return q


def quat_multiply(q1, q2):
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q):
    """Rotation matrix of a unit quaternion (3x3, acts on column vectors)."""
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(R):
    """Unit quaternion of a rotation matrix (Shepperd's method)."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(R[i, i] - R[j, j] - R[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (R[k, j] - R[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (R[j, i] + R[i, j]) / s
        q[1 + k] = (R[k, i] + R[i, k]) / s
    return quat_normalize(q)


def quat_rotate(q, points):
    """Rotate points (n, 3) or (3,) by unit quaternion q."""
    R = quat_to_matrix(q)
    return np.asarray(points, dtype=float) @ R.T


def _axis_angle_quat(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


class RigidTransform:
    """SE(3) transform: x -> R x + t, rotation as a unit quaternion."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation=(1.0, 0.0, 0.0, 0.0), translation=(0.0, 0.0, 0.0)):
        self.rotation = quat_normalize(rotation)
        self.translation = np.asarray(translation, dtype=float).reshape(3).copy()

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, R, t):
        return cls(matrix_to_quat(R), t)

    @classmethod
    def from_axis_angle(cls, axis, angle, translation=(0.0, 0.0, 0.0)):
        return cls(_axis_angle_quat(axis, angle), translation)

    @property
    def matrix(self):
        return quat_to_matrix(self.rotation)

    def apply(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.matrix.T + self.translation

    def compose(self, other):
        """self after other: (self @ other)(x) = self(other(x))."""
        return RigidTransform(
            quat_multiply(self.rotation, other.rotation),
            self.apply(other.translation.reshape(1, 3))[0],
        )

    def inverse(self):
        Rinv = self.matrix.T
        return RigidTransform(quat_conjugate(self.rotation), -Rinv @ self.translation)

    def rotation_angle(self):
        """Magnitude of the rotation in radians."""
        w = min(1.0, abs(float(self.rotation[0])))
        return 2.0 * np.arccos(w)

    def __repr__(self):
        q = np.round(self.rotation, 6)
        t = np.round(self.translation, 6)
        return f"RigidTransform(rotation={q.tolist()}, translation={t.tolist()})"
