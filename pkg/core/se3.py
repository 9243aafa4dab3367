# core/se3.py
"""
SE(3) helpers: poses, twists, exponential / logarithm and the nine-point pose
encoding.

Twist convention
----------------
A twist is ``[w, v]`` (angular first). ``w`` is the angular velocity in world
axes, ``v`` the linear velocity of the frame origin (the TCP) in world axes.
``exp_twist`` integrates a constant twist about the frame's own origin, so
``apply_twist(T, xi, dt)`` rotates ``T`` in place by ``w*dt`` and shifts its
origin along the screw generated by ``v``. ``log_pose_error`` is its inverse:
``apply_twist(a, log_pose_error(a, b), 1) == b``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

SMALL_ANGLE = 1e-8
# angle above which the rotation axis of a log is numerically ambiguous
DEGENERATE_ANGLE = np.pi - 1e-6

_CUBE_HALF = 1.0
_CANONICAL_POINTS = np.array(
    [
        [-1, -1, -1], [1, -1, -1], [-1, 1, -1], [1, 1, -1],
        [-1, -1, 1], [1, -1, 1], [-1, 1, 1], [1, 1, 1],
        [0, 0, 0],
    ],
    dtype=float,
).T * _CUBE_HALF


# ---------- so(3) ----------

def hat(w: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix with ``hat(a) @ b == cross(a, b)``."""
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def exp_so3(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + K + 0.5 * K @ K
    a = np.sin(theta) / theta
    b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * K @ K


def log_so3(R: np.ndarray) -> tuple[np.ndarray, bool]:
    """Rotation vector of ``R`` and a flag set when the axis is ambiguous (angle ~ pi)."""
    phi = Rotation.from_matrix(R).as_rotvec()
    return phi, bool(np.linalg.norm(phi) > DEGENERATE_ANGLE)


def left_jacobian(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * K + K @ K / 6.0
    return (
        np.eye(3)
        + (1.0 - np.cos(theta)) / theta**2 * K
        + (theta - np.sin(theta)) / theta**3 * K @ K
    )


def left_jacobian_inverse(phi: np.ndarray) -> np.ndarray:
    theta = float(np.linalg.norm(phi))
    K = hat(phi)
    if theta < SMALL_ANGLE:
        return np.eye(3) - 0.5 * K + K @ K / 12.0
    c = (1.0 - theta * np.sin(theta) / (2.0 * (1.0 - np.cos(theta)))) / theta**2
    return np.eye(3) - 0.5 * K + c * K @ K


def orthonormalize(R: np.ndarray) -> np.ndarray:
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] *= -1
        out = U @ Vt
    return out


# ---------- Types ----------

@dataclass(frozen=True, eq=False)
class Pose:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        p = np.array(self.translation, dtype=float).reshape(3)
        R.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        T = np.asarray(T, dtype=float)
        return cls(T[:3, :3], T[:3, 3])

    @classmethod
    def from_xyz_rpy(cls, xyz, rpy=(0.0, 0.0, 0.0)) -> "Pose":
        """Fixed-axis roll/pitch/yaw, i.e. ``Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
        R = Rotation.from_euler("xyz", rpy).as_matrix()
        return cls(R, xyz)

    @classmethod
    def from_translation(cls, xyz) -> "Pose":
        return cls(np.eye(3), xyz)

    def as_matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose") -> "Pose":
        R = self.rotation @ other.rotation
        if abs(np.linalg.det(R) - 1.0) > 1e-12 or not np.allclose(R.T @ R, np.eye(3), atol=1e-12):
            R = orthonormalize(R)
        return Pose(R, self.rotation @ other.translation + self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map points of shape (..., 3) from this frame to the parent frame."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def is_valid(self, tol: float = 1e-9) -> bool:
        R = self.rotation
        return bool(
            np.allclose(R.T @ R, np.eye(3), atol=tol)
            and abs(np.linalg.det(R) - 1.0) <= tol
        )

    def __repr__(self) -> str:
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return f"Pose(p={np.round(self.translation, 4).tolist()}, rotvec={np.round(rv, 4).tolist()})"


@dataclass(frozen=True, eq=False)
class Twist:
    angular: np.ndarray
    linear: np.ndarray

    def __post_init__(self):
        w = np.array(self.angular, dtype=float).reshape(3)
        v = np.array(self.linear, dtype=float).reshape(3)
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(v))):
            raise ValueError("twist components must be finite")
        w.flags.writeable = False
        v.flags.writeable = False
        object.__setattr__(self, "angular", w)
        object.__setattr__(self, "linear", v)

    @classmethod
    def zero(cls) -> "Twist":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, xi) -> "Twist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.angular, self.linear])

    def scaled(self, s: float) -> "Twist":
        return Twist(self.angular * s, self.linear * s)

    def __add__(self, other: "Twist") -> "Twist":
        return Twist(self.angular + other.angular, self.linear + other.linear)

    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    def __repr__(self) -> str:
        return f"Twist(w={np.round(self.angular, 5).tolist()}, v={np.round(self.linear, 5).tolist()})"


# ---------- Exponential / logarithm ----------

def exp_twist(xi: Twist, dt: float) -> Pose:
    """
    Rigid displacement of a frame moving with constant twist ``xi`` for ``dt``.

    The displacement is taken about the frame's own origin, so
    ``exp_twist(xi, dt) @ pose`` is not the moved pose unless ``pose`` sits
    at the world origin. Use ``apply_twist``; it is the inverse of
    ``log_pose_error``: ``apply_twist(a, log_pose_error(a, b), 1.0) == b``.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    phi = xi.angular * dt
    rho = xi.linear * dt
    return Pose(exp_so3(phi), left_jacobian(phi) @ rho)


def apply_twist(pose: Pose, xi: Twist, dt: float) -> Pose:
    D = exp_twist(xi, dt)
    return Pose(D.rotation @ pose.rotation, pose.translation + D.translation)


def log_pose_error(current: Pose, target: Pose, *, with_flag: bool = False):
    """
    Twist that carries ``current`` onto ``target`` in unit time.

    Parameters
    ----------
    with_flag : bool
        Also return whether the rotation axis was numerically ambiguous
        (error angle close to pi).
    """
    phi, degenerate = log_so3(target.rotation @ current.rotation.T)
    v = left_jacobian_inverse(phi) @ (target.translation - current.translation)
    xi = Twist(phi, v)
    return (xi, degenerate) if with_flag else xi


def rotation_angle(R: np.ndarray) -> float:
    return float(np.linalg.norm(Rotation.from_matrix(R).as_rotvec()))


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(translation distance [m], rotation angle [rad]) between two poses."""
    return (
        float(np.linalg.norm(a.translation - b.translation)),
        rotation_angle(b.rotation @ a.rotation.T),
    )


def interpolate_pose(a: Pose, b: Pose, s: float) -> Pose:
    """Linear translation, geodesic rotation; ``s`` in [0, 1]."""
    phi, _ = log_so3(b.rotation @ a.rotation.T)
    R = exp_so3(phi * s) @ a.rotation
    return Pose(R, (1.0 - s) * a.translation + s * b.translation)


def encode_pose_points(pose: Pose) -> np.ndarray:
    """Corners of a 2 m cube attached to the hand plus its centre, as a 3x9 array."""
    return pose.rotation @ _CANONICAL_POINTS + pose.translation[:, None]
