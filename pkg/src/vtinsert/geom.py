"""SE(3) pose algebra: quaternions (wxyz), poses, bounded deltas, axis key-points."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_UNIT_TOL = 1e-9


class BoundViolation(ValueError):
    """A pose delta exceeds the configured per-step action bounds."""


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.sqrt(float(np.dot(q, q)))
    if n < 1e-12:
        raise ValueError("cannot normalize zero quaternion")
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    return np.array([
        [1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy)],
        [2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx)],
        [2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy)],
    ])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by quaternion q. v may be (3,) or (n, 3)."""
    return v @ quat_to_matrix(q).T


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Unit quaternion (wxyz) of a rotation matrix, largest-pivot branch."""
    tr = float(m[0, 0] + m[1, 1] + m[2, 2])
    if tr > 0.0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s])
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = np.array([(m[2, 1] - m[1, 2]) / s, 0.25 * s,
                      (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s])
    elif m[1, 1] >= m[2, 2]:
        s = np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = np.array([(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s,
                      0.25 * s, (m[1, 2] + m[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = np.array([(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s,
                      (m[1, 2] + m[2, 1]) / s, 0.25 * s])
    return quat_normalize(q if q[0] >= 0 else -q)


def axis_angle_to_quat(r: np.ndarray) -> np.ndarray:
    """Exponential map: axis-angle 3-vector -> unit quaternion (Taylor-stable near zero)."""
    theta2 = float(np.dot(r, r))
    if theta2 < 1e-16:
        # sin(t/2)/t ~ 1/2 - t^2/48
        half_sinc = 0.5 - theta2 / 48.0
        return quat_normalize(np.array([1.0 - theta2 / 8.0, *(half_sinc * r)]))
    theta = np.sqrt(theta2)
    s = np.sin(theta / 2.0) / theta
    return np.array([np.cos(theta / 2.0), *(s * r)])


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    """Log map: unit quaternion -> axis-angle 3-vector in (-pi, pi]."""
    q = q if q[0] >= 0 else -q
    w = min(float(q[0]), 1.0)
    v = q[1:]
    s = np.sqrt(max(1.0 - w * w, 0.0))
    if s < 1e-12:
        return 2.0 * v  # small-angle: q ~ (1, r/2)
    return (2.0 * np.arctan2(s, w) / s) * v


def quat_distance(a: np.ndarray, b: np.ndarray, *, literal: bool = False) -> float:
    """Euclidean quaternion distance min(|a-b|, |a+b|), correcting the double cover.

    With literal=True returns plain |a-b| (discontinuous at antipodes); kept for
    fidelity experiments. Non-unit inputs are normalized first.
    """
    a = quat_normalize(a)
    b = quat_normalize(b)
    d_minus = float(np.linalg.norm(a - b))
    if literal:
        return d_minus
    return min(d_minus, float(np.linalg.norm(a + b)))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: world position (m) + unit quaternion (wxyz)."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=quat_identity)

    def __post_init__(self):
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        q = np.asarray(self.orientation, dtype=float)
        if abs(float(np.dot(q, q)) - 1.0) > 2e-9:
            q = quat_normalize(q)
        object.__setattr__(self, "orientation", q)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose(np.array([x, y, z]), quat_identity())

    def matrix(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def transform_point(self, p: np.ndarray) -> np.ndarray:
        """Map body-frame point(s) (3,) or (n,3) into the world frame."""
        return quat_rotate(self.orientation, p) + self.position

    def inverse(self) -> "Pose":
        qi = quat_conj(self.orientation)
        return Pose(-quat_rotate(qi, self.position), qi)

    def as_vector(self) -> np.ndarray:
        """7-vector [position, quaternion] used by observation layouts."""
        return np.concatenate([self.position, self.orientation])


def compose(a: Pose, b: Pose) -> Pose:
    """a then b applied in a's frame: world <- a <- b."""
    return Pose(
        a.position + quat_rotate(a.orientation, b.position),
        quat_normalize(quat_mul(a.orientation, b.orientation)),
    )


@dataclass(frozen=True)
class DeltaPose:
    """Per-step pose change: world-frame translation (m) + axis-angle rotation (rad)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))

    @staticmethod
    def zero() -> "DeltaPose":
        return DeltaPose()

    @staticmethod
    def from_vector(v: np.ndarray) -> "DeltaPose":
        v = np.asarray(v, dtype=float)
        return DeltaPose(v[:3].copy(), v[3:6].copy())

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])

    def __neg__(self) -> "DeltaPose":
        return DeltaPose(-self.translation, -self.rotation)

    def clamped(self, max_translation: float, max_rotation: float) -> "DeltaPose":
        return DeltaPose(
            np.clip(self.translation, -max_translation, max_translation),
            np.clip(self.rotation, -max_rotation, max_rotation),
        )


def check_bounds(d: DeltaPose, max_translation: float, max_rotation: float) -> None:
    if np.any(np.abs(d.translation) > max_translation + 1e-12):
        raise BoundViolation(
            f"translation delta {d.translation} exceeds bound {max_translation}")
    if np.any(np.abs(d.rotation) > max_rotation + 1e-12):
        raise BoundViolation(
            f"rotation delta {d.rotation} exceeds bound {max_rotation}")


def apply_delta(p: Pose, d: DeltaPose,
                max_translation: float | None = None,
                max_rotation: float | None = None) -> Pose:
    """World-frame update: position += t, orientation = exp(r) * orientation.

    When bounds are given, an out-of-bound delta raises BoundViolation.
    """
    if max_translation is not None:
        check_bounds(d, max_translation, max_rotation if max_rotation is not None else np.inf)
    return Pose(
        p.position + d.translation,
        quat_normalize(quat_mul(axis_angle_to_quat(d.rotation), p.orientation)),
    )


def keypoints_along_axis(p: Pose, length: float, count: int = 4) -> np.ndarray:
    """`count` points evenly spaced on the body z-axis from base to base+length (world frame).

    Returns (count, 3). Spacing includes both endpoints.
    """
    if count < 2:
        raise ValueError(f"need at least 2 key-points, got {count}")
    if length <= 0:
        raise ValueError(f"key-point span must be positive, got {length}")
    z = np.linspace(0.0, length, count)
    body = np.zeros((count, 3))
    body[:, 2] = z
    return p.transform_point(body)
