"""SE(3) camera poses, path construction, and the 1D float signal form of a path.

Conventions (fixed for the whole package):
  - Camera frame is right-handed: +x right, +y up, -z forward.
  - A pose (R, t) maps camera coordinates to world coordinates,
    p_world = R @ p_cam + t.
  - A path's per-frame delta is expressed in the frame of the *previous*
    pose (camera-relative), so the same motion command yields the same
    signal regardless of where the camera starts or which way it faces.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ORTHONORMAL_TOL = 1e-9


def _hat(w: np.ndarray) -> np.ndarray:
    x, y, z = w
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]]) * 0.5


def rotation_from_axis_angle(w) -> np.ndarray:
    """Rodrigues: 3-vector (axis * angle, radians) to rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = float(np.linalg.norm(w))
    m = _hat(w)
    if theta < 1e-8:
        # second-order series; exact enough below the tolerance of interest
        return np.eye(3) + m + 0.5 * (m @ m)
    a = math.sin(theta) / theta
    b = (1.0 - math.cos(theta)) / (theta * theta)
    return np.eye(3) + a * m + b * (m @ m)


def axis_angle_from_rotation(r: np.ndarray) -> np.ndarray:
    """Log map: rotation matrix to axis * angle 3-vector."""
    c = min(1.0, max(-1.0, (float(np.trace(r)) - 1.0) * 0.5))
    theta = math.acos(c)
    if theta < 1e-7:
        # (R - R^T)/2 = sin(theta) K ~ theta K to first order
        return _vee(r - r.T) * 0.5
    if theta > math.pi - 1e-5:
        # Near pi the (R - R^T) route degenerates; recover the axis from the
        # dominant column of R + I instead.
        m = r + np.eye(3)
        col = m[:, int(np.argmax(np.linalg.norm(m, axis=0)))]
        axis = col / np.linalg.norm(col)
        return axis * theta
    return _vee(r - r.T) * (theta / (2.0 * math.sin(theta)))


@dataclass(frozen=True, eq=False)
class CameraPose:
    """Rigid transform of a pinhole camera: 3x3 rotation + 3-vector translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if np.max(np.abs(r.T @ r - np.eye(3))) >= ORTHONORMAL_TOL:
            raise ValueError("rotation is not orthonormal")
        if abs(float(np.linalg.det(r)) - 1.0) >= ORTHONORMAL_TOL:
            raise ValueError("rotation determinant is not +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "CameraPose":
        return CameraPose(np.eye(3), np.zeros(3))

    def inverse(self) -> "CameraPose":
        rt = self.rotation.T
        return CameraPose(rt, -(rt @ self.translation))

    def allclose(self, other: "CameraPose", tol: float = 1e-9) -> bool:
        return bool(
            np.max(np.abs(self.rotation - other.rotation)) < tol
            and np.max(np.abs(self.translation - other.translation)) < tol
        )


def compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """Rigid composition "apply b, then a": (R_a R_b, R_a t_b + t_a)."""
    return CameraPose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


@dataclass(frozen=True, eq=False)
class CameraPath:
    """Ordered camera poses, one per video frame."""

    poses: tuple

    def __post_init__(self):
        object.__setattr__(self, "poses", tuple(self.poses))
        if len(self.poses) < 1:
            raise ValueError("path needs at least one pose")

    @property
    def n(self) -> int:
        return len(self.poses)


class Direction(enum.Enum):
    """The 7 cardinal motion commands; enum value is the lambda constant."""

    LEFT = 1
    RIGHT = 2
    UP = 3
    DOWN = 4
    FORWARD = 5
    BACKWARD = 6
    STATIONARY = 7

    @property
    def lam(self) -> int:
        return self.value

    @property
    def axis(self) -> np.ndarray:
        """Unit motion axis in the camera frame (zero for STATIONARY)."""
        return _DIRECTION_AXES[self].copy()

    @staticmethod
    def from_name(name: str) -> "Direction":
        try:
            return Direction[name.strip().upper()]
        except KeyError:
            valid = ", ".join(d.name.lower() for d in Direction)
            raise ValueError(f"unknown direction {name!r}; valid: {valid}") from None


_DIRECTION_AXES = {
    Direction.LEFT: np.array([-1.0, 0.0, 0.0]),
    Direction.RIGHT: np.array([1.0, 0.0, 0.0]),
    Direction.UP: np.array([0.0, 1.0, 0.0]),
    Direction.DOWN: np.array([0.0, -1.0, 0.0]),
    Direction.FORWARD: np.array([0.0, 0.0, -1.0]),
    Direction.BACKWARD: np.array([0.0, 0.0, 1.0]),
    Direction.STATIONARY: np.array([0.0, 0.0, 0.0]),
}


def cardinal_path(start: CameraPose, d: Direction, n: int, speed: float) -> CameraPath:
    """Constant-velocity translation along one camera axis; rotation fixed.

    Frame i sits at start.t + i * speed * (start.R @ axis), i.e. the camera
    advances `speed` world units per frame along its own axis of `d`.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if speed < 0:
        raise ValueError("speed must be >= 0")
    step = start.rotation @ (speed * d.axis)
    poses = [CameraPose(start.rotation, start.translation + i * step) for i in range(n)]
    return CameraPath(poses)


def random_path(
    start: CameraPose,
    n: int,
    rng: int | np.random.Generator,
    speed_range: tuple = (0.02, 0.15),
    rot_cap: float = 0.0,
) -> CameraPath:
    """Evenly spaced path with a uniformly random direction and speed.

    Direction is uniform on the unit sphere; speed uniform in `speed_range`;
    an optional constant per-frame rotation with axis-angle magnitude up to
    `rot_cap` radians. The per-frame delta is constant in the camera frame.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(int(rng))
    vec = rng.normal(size=3)
    while np.linalg.norm(vec) < 1e-12:
        vec = rng.normal(size=3)
    direction = vec / np.linalg.norm(vec)
    speed = float(rng.uniform(*speed_range))
    if rot_cap > 0:
        rax = rng.normal(size=3)
        rax /= max(np.linalg.norm(rax), 1e-12)
        rot = rotation_from_axis_angle(rax * rng.uniform(0.0, rot_cap))
    else:
        rot = np.eye(3)
    delta = CameraPose(rot, speed * direction)
    poses = [start]
    for _ in range(n - 1):
        poses.append(compose(poses[-1], delta))
    return CameraPath(poses)


def path_to_signal(path: CameraPath) -> np.ndarray:
    """Flatten a path into the 1D float signal consumed by the camera codec.

    Six values per frame: translation delta (3, world units) and rotation
    delta (3, axis-angle radians), both relative to the previous pose and
    expressed in the previous pose's camera frame. Frame 1 contributes zeros,
    so the signal has length 6n and decodes given only the start pose.
    """
    n = path.n
    sig = np.zeros(6 * n)
    for i in range(1, n):
        prev, cur = path.poses[i - 1], path.poses[i]
        rt = prev.rotation.T
        sig[6 * i : 6 * i + 3] = rt @ (cur.translation - prev.translation)
        sig[6 * i + 3 : 6 * i + 6] = axis_angle_from_rotation(rt @ cur.rotation)
    return sig


def signal_to_path(sig: np.ndarray, start: CameraPose) -> CameraPath:
    """Integrate per-frame deltas from `start`; left-inverse of path_to_signal."""
    sig = np.asarray(sig, dtype=float).ravel()
    if sig.size % 6 != 0:
        raise ValueError(f"signal length {sig.size} is not divisible by 6")
    n = sig.size // 6
    poses = [start]
    for i in range(1, n):
        t_delta = sig[6 * i : 6 * i + 3]
        r_delta = rotation_from_axis_angle(sig[6 * i + 3 : 6 * i + 6])
        poses.append(compose(poses[-1], CameraPose(r_delta, t_delta)))
    return CameraPath(poses)


def sinusoid_signature(d: Direction, m: int) -> np.ndarray:
    """Discrete direction signature s[k] = sin(pi * lambda_d * k / (m - 1)).

    Distinct lambda constants give distinct frequencies over the m samples.
    Optional auxiliary channel; the delta signal is the primary encoding.
    """
    if m < 2:
        raise ValueError("m must be >= 2")
    k = np.arange(m)
    return np.sin(math.pi * d.lam * k / (m - 1))


def write_pose_file(path: str | Path, poses) -> None:
    """Write poses as text: 12 space-separated decimals per line, row-major [R|t]."""
    lines = []
    for p in poses:
        m = np.hstack([p.rotation, p.translation.reshape(3, 1)])
        lines.append(" ".join(f"{v:.17g}" for v in m.ravel()))
    Path(path).write_text("\n".join(lines) + "\n")


def read_pose_file(path: str | Path) -> list:
    """Read the pose text format; '#' comment lines and blank lines permitted."""
    poses = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 12:
            raise ValueError(f"{path}:{lineno}: expected 12 values, got {len(parts)}")
        m = np.array([float(v) for v in parts]).reshape(3, 4)
        poses.append(CameraPose(m[:, :3], m[:, 3]))
    return poses
