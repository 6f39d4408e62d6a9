"""Synthetic multi-camera studio.

Generates planted ground truth from a pose basis, the four-camera right-angle
rig, and corrupted detections with a ledger of what was corrupted. Also ships
a small forward-kinematics pose sampler used to fit a default basis when no
motion-capture corpus is available.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
from scipy.spatial.transform import Rotation

from . import skeleton
from .basis import fit_basis
from .types import CameraRig, PoseBasis, Pose2D, rotation_y

STUDIO_SCALE_MM = 4000.0

# parent-relative rest offsets in mm, subject facing +z, y up
REST_OFFSETS = np.array([
    [0, 0, 0],
    [-130, 0, 0], [0, -440, 0], [0, -430, 0],
    [130, 0, 0], [0, -440, 0], [0, -430, 0],
    [0, 230, 10], [0, 250, 0], [0, 110, 60], [0, 100, -50],
    [150, -20, 0], [0, -280, 0], [0, -250, 0],
    [-150, -20, 0], [0, -280, 0], [0, -250, 0],
], dtype=float)

# xyz Euler ranges (degrees) for the local rotation at each joint
_JOINT_LIMITS = {
    0: ((-10, 10), (0, 0), (-10, 10)),
    1: ((-100, 30), (-20, 20), (-30, 10)),
    2: ((0, 130), (0, 0), (0, 0)),
    4: ((-100, 30), (-20, 20), (-10, 30)),
    5: ((0, 130), (0, 0), (0, 0)),
    7: ((-30, 15), (-25, 25), (-15, 15)),
    8: ((-10, 10), (-15, 15), (-10, 10)),
    9: ((-30, 30), (-40, 40), (0, 0)),
    11: ((-150, 50), (-30, 30), (0, 120)),
    12: ((-140, 0), (0, 0), (0, 0)),
    14: ((-150, 50), (-30, 30), (-120, 0)),
    15: ((-140, 0), (0, 0), (0, 0)),
}


def sample_pose(rng, size_jitter=0.1):
    """One random pose (P, 3) in mm by forward kinematics on the 17-joint skeleton."""
    p = skeleton.NUM_JOINTS
    glob = [None] * p
    pos = np.zeros((p, 3))
    body = 1.0 + rng.uniform(-size_jitter, size_jitter)
    for j in range(p):
        lim = _JOINT_LIMITS.get(j)
        local = np.eye(3)
        if lim is not None:
            angles = [rng.uniform(lo, hi) for lo, hi in lim]
            local = Rotation.from_euler("xyz", angles, degrees=True).as_matrix()
        parent = skeleton.PARENTS[j]
        if parent < 0:
            glob[j] = local
            continue
        pos[j] = pos[parent] + glob[parent] @ (body * REST_OFFSETS[j])
        glob[j] = glob[parent] @ local
    return pos


def sample_corpus(n, seed=0):
    rng = np.random.default_rng(seed)
    poses = np.stack([sample_pose(rng) for _ in range(n)])
    yaw = rng.uniform(0, 2 * np.pi, n)
    return np.einsum("nij,npj->npi", rotation_y(yaw), poses)


@lru_cache(maxsize=8)
def default_basis(size=10, corpus_size=3000, seed=0):
    return fit_basis(sample_corpus(corpus_size, seed), size)


@dataclass(frozen=True)
class SceneSpec:
    camera_yaws_deg: tuple = (0.0, 90.0, 180.0, 270.0)
    camera_distance: float = 4000.0
    basis: PoseBasis | None = None
    coef_scale: float = 1.0
    scale_range: tuple | None = None
    yaw_mode: str = "continuous"
    yaw_grid_count: int = 80
    out_of_span: float = 0.0
    root_spread: float = 0.0
    noise_px: float = 0.0
    outlier_rate: float = 0.0
    outlier_range: tuple = (20.0, 100.0)
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("outlier_rate", "missing_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_px < 0 or self.out_of_span < 0 or self.root_spread < 0:
            raise ValueError("noise_px, out_of_span and root_spread must be non-negative")
        lo, hi = self.outlier_range
        if not 0 <= lo <= hi:
            raise ValueError("outlier_range must satisfy 0 <= lo <= hi")
        if self.yaw_mode not in ("continuous", "grid"):
            raise ValueError("yaw_mode must be 'continuous' or 'grid'")

    def resolved_basis(self):
        return self.basis if self.basis is not None else default_basis()

    def resolved_scale_range(self):
        if self.scale_range is not None:
            return tuple(self.scale_range)
        ref = self.resolved_basis().reference_scale
        return (0.9 * ref, 1.1 * ref)

    def rig(self):
        return CameraRig.studio(self.camera_yaws_deg, self.camera_distance)

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "basis"}
        d["camera_yaws_deg"] = list(self.camera_yaws_deg)
        d["outlier_range"] = list(self.outlier_range)
        d["scale_range"] = None if self.scale_range is None else list(self.scale_range)
        return d

    @classmethod
    def from_dict(cls, d, basis=None):
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown scene keys: {sorted(unknown)}")
        for key in ("camera_yaws_deg", "outlier_range", "scale_range"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(basis=basis, **d)


@dataclass(frozen=True, eq=False)
class Frame:
    """One planted subject with its clean and corrupted observations.

    ``pose`` is the ground truth in world mm including ``root``;
    ``outliers``/``missing`` are (C, P) ledgers of the corruption applied and
    ``displacement`` (C, P, 2) the outlier offsets (zero elsewhere).
    """

    index: int
    pose: np.ndarray
    scale: float
    angle: float
    coefficients: np.ndarray
    perturbation: np.ndarray
    root: np.ndarray
    clean: np.ndarray
    detections: tuple
    outliers: np.ndarray
    missing: np.ndarray
    displacement: np.ndarray = None

    @property
    def clean_detections(self):
        return tuple(Pose2D(c) for c in self.clean)


def _orthogonal_direction(basis, rng):
    """Unit-RMS per-joint direction orthogonal to the mean and all components, root fixed."""
    p = basis.num_joints
    span = np.concatenate([basis.mean.reshape(1, -1), basis.components.reshape(basis.size, -1)])
    qm, _ = np.linalg.qr(span.T)
    v = rng.standard_normal((p, 3))
    v[skeleton.ROOT] = 0.0
    v = v.ravel()
    v -= qm @ (qm.T @ v)
    # re-zero root and project again so both constraints hold
    v = v.reshape(p, 3)
    v[skeleton.ROOT] = 0.0
    v = v.ravel()
    v -= qm @ (qm.T @ v)
    return v.reshape(p, 3) / np.sqrt(np.mean(np.sum(v.reshape(p, 3) ** 2, axis=1)))


def planted_pose(basis, coefficients, scale, angle, perturbation=None, root=None):
    shape = scale * basis.shape(coefficients)
    if perturbation is not None:
        shape = shape + perturbation
    pose = shape @ rotation_y(angle).T
    if root is not None:
        pose = pose + root
    return pose


def render(rig, pose):
    """Clean orthographic projections (C, P, 2)."""
    return np.stack([cam.project(pose) for cam in rig])


def corrupt(spec, clean, rng):
    """Apply noise, outliers and missingness.

    Returns ``(detections, outliers, missing, displacement)``.
    """
    c, p, _ = clean.shape
    noise = rng.standard_normal(clean.shape) * spec.noise_px
    out_mask = rng.random((c, p)) < spec.outlier_rate
    mag = rng.uniform(spec.outlier_range[0], spec.outlier_range[1], (c, p))
    phi = rng.uniform(0.0, 2 * np.pi, (c, p))
    miss = rng.random((c, p)) < spec.missing_rate
    disp = (mag * out_mask)[..., None] * np.stack([np.cos(phi), np.sin(phi)], -1)
    det = clean + noise + disp
    dets = tuple(Pose2D(det[i], visible=~miss[i]) for i in range(c))
    return dets, out_mask, miss, disp


def _frame(spec, rig, basis, index, coefficients, scale, angle, perturbation, root, rng):
    pose = planted_pose(basis, coefficients, scale, angle, perturbation, root)
    clean = render(rig, pose)
    dets, out_mask, miss, disp = corrupt(spec, clean, rng)
    return Frame(index, pose, float(scale), float(angle), np.asarray(coefficients, float),
                 perturbation, root, clean, dets, out_mask, miss, disp)


def generate(spec, n_frames):
    """Deterministic list of frames; frame ``i`` uses the seed sequence ``(seed, i)``."""
    basis = spec.resolved_basis()
    rig = spec.rig()
    lo, hi = spec.resolved_scale_range()
    frames = []
    for i in range(int(n_frames)):
        rng = np.random.default_rng([int(spec.seed), i])
        coeffs = rng.standard_normal(basis.size) * basis.sigmas * spec.coef_scale
        scale = rng.uniform(lo, hi)
        if spec.yaw_mode == "grid":
            angle = 2 * np.pi * rng.integers(spec.yaw_grid_count) / spec.yaw_grid_count
        else:
            angle = rng.uniform(0.0, 2 * np.pi)
        direction = _orthogonal_direction(basis, rng)
        perturbation = spec.out_of_span * direction
        root = np.zeros(3)
        spread = rng.uniform(-1.0, 1.0, 3) * spec.root_spread
        root[[0, 2]] = spread[[0, 2]]
        frames.append(_frame(spec, rig, basis, i, coeffs, scale, angle, perturbation, root, rng))
    return frames


def _shortest_arc(a, b, t):
    delta = (b - a + np.pi) % (2 * np.pi) - np.pi
    return (a + t * delta) % (2 * np.pi)


def interpolate_sequence(spec, frame_a, frame_b, steps):
    """Frames linearly interpolating coefficients, scale, root, perturbation and yaw.

    Yaw follows the shortest arc. The two endpoints are returned unchanged;
    interior frames get fresh corruption drawn from ``spec`` with seed
    sequence ``(seed, frame_a.index, frame_b.index, k)``.
    """
    steps = int(steps)
    if steps < 2:
        raise ValueError("steps must be >= 2")
    basis, rig = spec.resolved_basis(), spec.rig()
    out = [frame_a]
    for k in range(1, steps - 1):
        t = k / (steps - 1)
        rng = np.random.default_rng([int(spec.seed), frame_a.index, frame_b.index, k])
        lerp = lambda u, v: (1 - t) * np.asarray(u) + t * np.asarray(v)  # noqa: E731
        out.append(_frame(
            spec, rig, basis, frame_a.index,
            lerp(frame_a.coefficients, frame_b.coefficients),
            float(lerp(frame_a.scale, frame_b.scale)),
            float(_shortest_arc(frame_a.angle, frame_b.angle, t)),
            lerp(frame_a.perturbation, frame_b.perturbation),
            lerp(frame_a.root, frame_b.root), rng,
        ))
    out.append(frame_b)
    return out


def frame_at(spec, frame, angle, index=None):
    """The subject of ``frame`` re-rendered at yaw ``angle`` with fresh corruption.

    Corruption uses the seed sequence ``(seed, index, 1)`` so the result is
    deterministic and independent of ``frame``'s own draws.
    """
    index = frame.index if index is None else int(index)
    rng = np.random.default_rng([int(spec.seed), index, 1])
    return _frame(spec, spec.rig(), spec.resolved_basis(), index, frame.coefficients, frame.scale,
                  float(angle) % (2 * np.pi), frame.perturbation, frame.root, rng)
