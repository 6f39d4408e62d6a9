"""Shared domain types and geometry conventions.

World frame is y-up; the ground plane is x-z and subject rotations are about
the world y axis. Cameras map world points through ``R @ X + t`` followed by
the canonical orthographic projection (drop the camera z coordinate).
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import DuplicateLabel, NonOrthonormalRotation

ORTHONORMAL_TOL = 1e-9
PROJECTION = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
PROJECTION.setflags(write=False)


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


def rotation_y(angle):
    """Rotation about the world up axis. Vectorised over ``angle``."""
    angle = np.asarray(angle, dtype=float)
    c, s = np.cos(angle), np.sin(angle)
    z, o = np.zeros_like(angle), np.ones_like(angle)
    return np.stack(
        [np.stack([c, z, s], -1), np.stack([z, o, z], -1), np.stack([-s, z, c], -1)], -2
    )


def as_pose3d(joints, num_joints=None):
    """Validate and freeze a ``(P, 3)`` pose array."""
    q = np.array(joints, dtype=float)
    if q.ndim != 2 or q.shape[1] != 3 or q.shape[0] < 1:
        raise ValueError(f"pose must have shape (P, 3), got {q.shape}")
    if num_joints is not None and q.shape[0] != num_joints:
        raise ValueError(f"expected {num_joints} joints, got {q.shape[0]}")
    if not np.all(np.isfinite(q)):
        raise ValueError("pose contains non-finite coordinates")
    q.setflags(write=False)
    return q


@dataclass(frozen=True, eq=False)
class Pose2D:
    """2D joint locations in one camera, with visibility and confidence."""

    joints: np.ndarray
    visible: np.ndarray = None
    confidence: np.ndarray = None

    def __post_init__(self):
        j = np.array(self.joints, dtype=float)
        if j.ndim != 2 or j.shape[1] != 2:
            raise ValueError(f"2D pose must have shape (P, 2), got {j.shape}")
        p = j.shape[0]
        vis = np.ones(p, bool) if self.visible is None else np.array(self.visible, dtype=bool)
        conf = np.ones(p) if self.confidence is None else np.array(self.confidence, dtype=float)
        if vis.shape != (p,) or conf.shape != (p,):
            raise ValueError("visibility/confidence must have one entry per joint")
        if not np.all(np.isfinite(j[vis])):
            raise ValueError("visible joints must have finite coordinates")
        if np.any(conf < 0) or np.any(conf > 1) or not np.all(np.isfinite(conf)):
            raise ValueError("confidences must lie in [0, 1]")
        object.__setattr__(self, "joints", _frozen(j))
        object.__setattr__(self, "visible", _frozen(vis, bool))
        object.__setattr__(self, "confidence", _frozen(conf))

    @property
    def num_joints(self):
        return self.joints.shape[0]

    @property
    def num_visible(self):
        return int(self.visible.sum())

    def __eq__(self, other):
        if not isinstance(other, Pose2D):
            return NotImplemented
        return (
            np.array_equal(self.joints, other.joints)
            and np.array_equal(self.visible, other.visible)
            and np.array_equal(self.confidence, other.confidence)
        )


@dataclass(frozen=True, eq=False)
class Camera:
    rotation: np.ndarray
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    label: str = "cam"

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("camera needs a 3x3 rotation and a 3-vector translation")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise ValueError(f"camera {self.label!r} has non-finite extrinsics")
        object.__setattr__(self, "rotation", _frozen(r))
        object.__setattr__(self, "translation", _frozen(t))

    @property
    def projection(self):
        """The 2x3 matrix ``Pi @ R``."""
        return self.rotation[:2]

    @property
    def optical_axis(self):
        """Viewing direction in world coordinates."""
        return self.rotation[2]

    def orthonormality_error(self):
        r = self.rotation
        return float(np.max(np.abs(r.T @ r - np.eye(3))))

    def project(self, points):
        points = np.asarray(points, dtype=float)
        return points @ self.rotation[:2].T + self.translation[:2]

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            self.label == other.label
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )

    @classmethod
    def from_yaw(cls, yaw, distance=4000.0, label=None):
        """Camera on a horizontal circle looking at the world origin.

        Yaw 0 sits on the -z axis looking along +z; the camera's orientation is
        the world-frame rotation ``rotation_y(yaw)`` applied to that one.
        """
        orient = rotation_y(yaw)
        return cls(orient.T, np.array([0.0, 0.0, distance]), label or f"cam{np.degrees(yaw):.0f}")


@dataclass(frozen=True, eq=False)
class CameraRig:
    cameras: tuple

    def __post_init__(self):
        object.__setattr__(self, "cameras", tuple(self.cameras))

    def __len__(self):
        return len(self.cameras)

    def __iter__(self):
        return iter(self.cameras)

    def __getitem__(self, i):
        return self.cameras[i]

    def __eq__(self, other):
        if not isinstance(other, CameraRig):
            return NotImplemented
        return len(self) == len(other) and all(a == b for a, b in zip(self, other))

    @property
    def labels(self):
        return [c.label for c in self.cameras]

    def subset(self, indices):
        return CameraRig(tuple(self.cameras[i] for i in indices))

    @classmethod
    def studio(cls, yaws_deg=(0.0, 90.0, 180.0, 270.0), distance=4000.0):
        return cls(tuple(
            Camera.from_yaw(np.radians(y), distance, label=f"cam{i}") for i, y in enumerate(yaws_deg)
        ))


def validate_rig(rig):
    """Raise if any camera is not a proper rotation or labels repeat."""
    if len(rig) < 1:
        raise ValueError("rig needs at least one camera")
    seen = set()
    for cam in rig:
        if cam.label in seen:
            raise DuplicateLabel(f"duplicate camera label {cam.label!r}")
        seen.add(cam.label)
        dev = cam.orthonormality_error()
        if dev > ORTHONORMAL_TOL:
            raise NonOrthonormalRotation(cam.label, dev)
        if np.linalg.det(cam.rotation) < 0:
            raise NonOrthonormalRotation(cam.label, abs(np.linalg.det(cam.rotation) - 1.0))
    return True


@dataclass(frozen=True, eq=False)
class PoseBasis:
    """Linear pose model: mean, orthonormal components and their std devs.

    ``reference_scale`` is the average size factor removed when the training
    poses were normalised (millimetres per normalised unit); the solvers use
    it to express the coefficient penalty in data units.
    """

    mean: np.ndarray
    components: np.ndarray
    sigmas: np.ndarray
    reference_scale: float = 1.0

    def __post_init__(self):
        mu = np.array(self.mean, dtype=float)
        e = np.array(self.components, dtype=float)
        sig = np.array(self.sigmas, dtype=float)
        if e.ndim != 3 or e.shape[1:] != mu.shape or mu.ndim != 2 or mu.shape[1] != 3:
            raise ValueError("components must have shape (B, P, 3) matching mean (P, 3)")
        if e.shape[0] < 1 or sig.shape != (e.shape[0],):
            raise ValueError("need B >= 1 components and one sigma per component")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(e)) and np.all(np.isfinite(sig))):
            raise ValueError("basis has non-finite values")
        if np.any(sig <= 0):
            raise ValueError("sigmas must be positive")
        if not (np.isfinite(self.reference_scale) and self.reference_scale > 0):
            raise ValueError("reference_scale must be positive")
        object.__setattr__(self, "mean", _frozen(mu))
        object.__setattr__(self, "components", _frozen(e))
        object.__setattr__(self, "sigmas", _frozen(sig))
        object.__setattr__(self, "reference_scale", float(self.reference_scale))

    @property
    def size(self):
        return self.components.shape[0]

    @property
    def num_joints(self):
        return self.mean.shape[0]

    def shape(self, coefficients):
        """``mu + a . e`` for a coefficient vector."""
        return self.mean + np.tensordot(np.asarray(coefficients, float), self.components, axes=1)

    def __eq__(self, other):
        if not isinstance(other, PoseBasis):
            return NotImplemented
        return (
            np.array_equal(self.mean, other.mean)
            and np.array_equal(self.components, other.components)
            and np.array_equal(self.sigmas, other.sigmas)
            and self.reference_scale == other.reference_scale
        )


@dataclass(frozen=True, eq=False)
class RotationGrid:
    angles: np.ndarray

    def __post_init__(self):
        a = np.array(self.angles, dtype=float)
        if a.ndim != 1 or a.size < 1:
            raise ValueError("rotation grid needs at least one angle")
        if a.size > 1 and np.any(np.diff(a) <= 0):
            raise ValueError("rotation angles must be strictly increasing")
        object.__setattr__(self, "angles", _frozen(a))

    @classmethod
    def uniform(cls, count=80):
        if count < 1:
            raise ValueError("count must be positive")
        return cls(2.0 * np.pi * np.arange(count) / count)

    def __len__(self):
        return self.angles.size

    @property
    def step(self):
        return 2.0 * np.pi / len(self)


class RobustMode(str, enum.Enum):
    FROBENIUS = "frobenius"
    HUBER = "huber"


class RotationMode(str, enum.Enum):
    ARGMIN = "argmin"
    MARGINALIZE = "marginalize"


@dataclass(frozen=True)
class LiftConfig:
    """Solver settings.

    ``huber_epsilon`` and ``rho`` may be ``None`` to request the per-frame
    adaptive defaults: ``eps`` is 1.4826 * MAD of the initial residuals at the
    best rotation, floored by ``epsilon_floor`` (input units), and
    ``rho = 1 / (2 n sigma^2)`` with ``sigma`` the same robust scale (no floor)
    of the final residuals at the best rotation and ``n`` the number of
    visible scalar residuals.
    """

    huber_epsilon: float | None = None
    lam: float = 1.0
    rho: float | None = None
    irls_iterations: int = 5
    rotation_count: int = 80
    robust_mode: RobustMode = RobustMode.HUBER
    rotation_mode: RotationMode = RotationMode.MARGINALIZE
    reg_weight: float = 1.0
    exact_a_penalty: bool = False
    epsilon_floor: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "robust_mode", RobustMode(self.robust_mode))
        object.__setattr__(self, "rotation_mode", RotationMode(self.rotation_mode))
        if self.huber_epsilon is not None and not self.huber_epsilon > 0:
            raise ValueError("huber_epsilon must be positive")
        if self.rho is not None and not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if int(self.irls_iterations) < 1 or int(self.rotation_count) < 1:
            raise ValueError("irls_iterations and rotation_count must be >= 1")
        if self.reg_weight < 0 or not self.epsilon_floor > 0:
            raise ValueError("reg_weight must be >= 0 and epsilon_floor > 0")

    def replace(self, **changes):
        from dataclasses import replace

        return replace(self, **changes)

    def to_dict(self):
        return {
            "huber_epsilon": self.huber_epsilon,
            "lam": self.lam,
            "rho": self.rho,
            "irls_iterations": int(self.irls_iterations),
            "rotation_count": int(self.rotation_count),
            "robust_mode": self.robust_mode.value,
            "rotation_mode": self.rotation_mode.value,
            "reg_weight": self.reg_weight,
            "exact_a_penalty": self.exact_a_penalty,
            "epsilon_floor": self.epsilon_floor,
        }

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def grid(self):
        return RotationGrid.uniform(int(self.rotation_count))
