"""Fitting the linear (PPCA-style) pose basis from a corpus of 3D poses."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import skeleton
from .errors import DegeneratePose, RankDeficient
from .types import PoseBasis, as_pose3d, rotation_y


@dataclass(frozen=True)
class Alignment:
    """Parameters removed by :func:`normalize_pose`.

    ``pose = scale * rotation_y(angle) @ normalized + root``.
    """

    angle: float
    scale: float
    root: tuple

    def apply(self, normalized):
        normalized = np.asarray(normalized, float)
        return self.scale * normalized @ rotation_y(self.angle).T + np.asarray(self.root)


def mean_bone_length(pose, bones=skeleton.BONES):
    pose = np.asarray(pose, float)
    parents, children = np.array(bones).T
    return float(np.mean(np.linalg.norm(pose[children] - pose[parents], axis=1)))


def normalize_pose(pose, bones=skeleton.BONES, root=skeleton.ROOT,
                   left_hip=skeleton.LEFT_HIP, right_hip=skeleton.RIGHT_HIP):
    """Root-centre, yaw-align (hips along +x) and rescale to unit mean bone length."""
    pose = as_pose3d(pose)
    if np.ptp(pose, axis=0).max() == 0.0:
        raise DegeneratePose("all joints coincide")
    origin = pose[root].copy()
    centred = pose - origin
    hip = centred[left_hip] - centred[right_hip]
    angle = float(np.arctan2(-hip[2], hip[0])) if np.hypot(hip[0], hip[2]) > 0 else 0.0
    scale = mean_bone_length(centred, bones)
    if not scale > 0:
        raise DegeneratePose("zero mean bone length")
    normalized = centred @ rotation_y(angle) / scale
    return normalized, Alignment(angle, scale, tuple(origin.tolist()))


def fit_basis(poses, basis_size, normalize=True):
    """PCA basis from a corpus of poses.

    With ``normalize`` the poses are passed through :func:`normalize_pose`
    first and the mean removed scale becomes ``reference_scale``.
    """
    poses = np.asarray(poses, float)
    if poses.ndim != 3 or poses.shape[2] != 3:
        raise ValueError(f"corpus must have shape (M, P, 3), got {poses.shape}")
    m, p, _ = poses.shape
    b = int(basis_size)
    if b < 1 or b > min(m - 1, 3 * p):
        raise ValueError(f"basis size {b} must be in [1, min(M-1, 3P)] = [1, {min(m - 1, 3 * p)}]")
    if normalize:
        results = [normalize_pose(q) for q in poses]
        data = np.stack([r[0] for r in results])
        ref_scale = float(np.mean([r[1].scale for r in results]))
    else:
        data = poses
        ref_scale = 1.0

    x = data.reshape(m, 3 * p)
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (m - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    threshold = 1e-12 * max(evals[0], 0.0) + 1e-24
    if evals[b - 1] <= threshold:
        rank = int(np.sum(evals > threshold))
        raise RankDeficient(f"covariance rank {rank} < requested basis size {b}")
    vecs = evecs[:, :b].T.copy()
    # deterministic sign: largest-magnitude entry positive
    flip = np.sign(vecs[np.arange(b), np.argmax(np.abs(vecs), axis=1)])
    vecs *= flip[:, None]
    return PoseBasis(
        mean=mean.reshape(p, 3),
        components=vecs.reshape(b, p, 3),
        sigmas=np.sqrt(evals[:b]),
        reference_scale=ref_scale,
    )


def project(basis, pose, normalize=True):
    """Coefficients of ``pose`` in the basis (orthogonal projection)."""
    q = normalize_pose(pose)[0] if normalize else np.asarray(pose, float)
    e = basis.components.reshape(basis.size, -1)
    return e @ (q - basis.mean).ravel()


def reconstruct(basis, coefficients):
    return basis.shape(coefficients)
