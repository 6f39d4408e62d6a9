"""Multi-stage detect -> lift -> reproject -> fuse loop.

A detector is any callable ``detector(stage, guesses)`` returning one
:class:`Pose2D` per camera. ``stage`` counts from 1 and ``guesses`` is None
at stage 1, otherwise the per-camera fused 2D input of the previous stage
blended with its reprojection. The synthetic detectors below stand in for a
learned 2D estimator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LiftError
from .multi import MultiViewProblem, lift_multi
from .types import Pose2D

BETA_MIN = 0.2
BETA_MAX = 0.95
DEFAULT_STAGES = 6


def reproject(pose, rig, scale=1.0, offsets=None):
    """Per-camera projections ``scale * Pi E_c pose`` (+ camera translation and optional offsets)."""
    pose = np.asarray(pose, float)
    if not np.all(np.isfinite(pose)):
        raise ValueError("pose must be finite")
    out = []
    for i, cam in enumerate(rig):
        pts = scale * (pose @ cam.projection.T) + cam.translation[:2]
        if offsets is not None:
            pts = pts + offsets[i]
        out.append(Pose2D(pts))
    return tuple(out)


def lift_reprojection(result, rig):
    """Reprojections of a multi-view lift result, offsets included."""
    return reproject(result.pose, rig, 1.0, result.offsets)


def fuse(detections, reprojections, beta_min=BETA_MIN, beta_max=BETA_MAX):
    """Blend detector output with the previous reprojection, per joint.

    The detector share is its confidence clamped to ``[beta_min, beta_max]``.
    Visibility and confidence follow the detector.
    """
    fused = []
    for det, rep in zip(detections, reprojections):
        beta = np.clip(det.confidence, beta_min, beta_max)[:, None]
        joints = np.where(det.visible[:, None], beta * det.joints + (1 - beta) * rep.joints, rep.joints)
        fused.append(Pose2D(joints, det.visible, det.confidence))
    return tuple(fused)


@dataclass(frozen=True, eq=False)
class StageRecord:
    stage: int
    detections: tuple
    fused: tuple
    result: object
    reprojections: tuple
    error: str | None = None

    @property
    def pose(self):
        return None if self.result is None else self.result.pose


@dataclass(frozen=True, eq=False)
class StageTrace:
    stages: tuple

    def __len__(self):
        return len(self.stages)

    @property
    def final(self):
        return self.stages[-1]

    @property
    def poses(self):
        return [s.pose for s in self.stages]


def run_stage(previous, detector, rig, basis, config):
    """One stage given the previous :class:`StageRecord` (or None for stage 1).

    A lifter failure records the message and carries the previous
    reprojection (and result) forward.
    """
    stage = 1 if previous is None else previous.stage + 1
    guesses = None if previous is None else previous.reprojections
    detections = tuple(detector(stage, guesses))
    if len(detections) != len(rig) or any(d.num_joints != basis.num_joints for d in detections):
        raise ValueError("detector output must have one pose per camera with the basis joint count")
    fused = detections if previous is None else fuse(detections, previous.reprojections)
    try:
        result = lift_multi(MultiViewProblem(fused, rig, basis, config))
    except LiftError as exc:
        if previous is None:
            raise
        return StageRecord(stage, detections, fused, previous.result, previous.reprojections, str(exc))
    return StageRecord(stage, detections, fused, result, lift_reprojection(result, rig))


def run_pipeline(detector, rig, basis, config, stages=DEFAULT_STAGES):
    if int(stages) < 1:
        raise ValueError("stage count must be >= 1")
    records = []
    prev = None
    for _ in range(int(stages)):
        prev = run_stage(prev, detector, rig, basis, config)
        records.append(prev)
    return StageTrace(tuple(records))


class OracleDetector:
    """Returns the clean projections of a frame at every stage."""

    def __init__(self, frame):
        self.frame = frame

    def __call__(self, stage, guesses):
        return tuple(Pose2D(c) for c in self.frame.clean)


class NoiseDetector:
    """Clean projections plus fresh isotropic Gaussian noise at each stage."""

    def __init__(self, frame, sigma_px, seed=0):
        self.frame, self.sigma, self.seed = frame, float(sigma_px), int(seed)

    def __call__(self, stage, guesses):
        rng = np.random.default_rng([self.seed, self.frame.index, stage])
        noisy = self.frame.clean + self.sigma * rng.standard_normal(self.frame.clean.shape)
        return tuple(Pose2D(c) for c in noisy)


def _displacements(rng, shape, rate, magnitude):
    mask = rng.random(shape) < rate
    mag = rng.uniform(magnitude[0], magnitude[1], shape)
    phi = rng.uniform(0.0, 2 * np.pi, shape)
    return mask, (mag * mask)[..., None] * np.stack([np.cos(phi), np.sin(phi)], -1)


class OutlierDetector:
    """Noise plus per-joint outliers, redrawn independently at every stage."""

    def __init__(self, frame, sigma_px=0.0, rate=0.05, magnitude=(20.0, 100.0), seed=0):
        self.frame, self.sigma, self.rate = frame, float(sigma_px), float(rate)
        self.magnitude, self.seed = tuple(magnitude), int(seed)

    def __call__(self, stage, guesses):
        rng = np.random.default_rng([self.seed, self.frame.index, stage])
        clean = self.frame.clean
        noise = self.sigma * rng.standard_normal(clean.shape)
        _, disp = _displacements(rng, clean.shape[:2], self.rate, self.magnitude)
        return tuple(Pose2D(c) for c in clean + noise + disp)


class GuessAnchoredDetector:
    """A detector that can use its 2D input guess to correct earlier mistakes.

    Each joint has two candidate responses: a true one and a distractor
    offset by the frame's outlier displacement (identical where the ledger
    marks no outlier). Stage 1 has no guess and reports the frame's own
    detections, so the distractors win. Later stages pick, per joint, the
    candidate nearer to the guess and pull it toward the guess by ``pull``.

    With ``noise_px`` set, every later stage re-estimates the true candidate
    as clean + fresh Gaussian noise (seeded by frame index and stage);
    otherwise the frame's own noise is reused at every stage.
    """

    def __init__(self, frame, pull=0.5, confidence=0.9, noise_px=None, seed=0):
        self.frame = frame
        self.pull = float(pull)
        self.confidence = float(confidence)
        self.noise_px = None if noise_px is None else float(noise_px)
        self.seed = int(seed)
        self.detected = np.stack([d.joints for d in frame.detections])
        self.visible = ~frame.missing

    def candidates(self, stage):
        if self.noise_px is None or stage == 1:
            true = self.detected - self.frame.displacement
        else:
            rng = np.random.default_rng([self.seed, self.frame.index, stage])
            true = self.frame.clean + self.noise_px * rng.standard_normal(self.frame.clean.shape)
        return true, true + self.frame.displacement

    def __call__(self, stage, guesses):
        true, distractor = self.candidates(stage)
        if guesses is None:
            picked = distractor
        else:
            g = np.stack([p.joints for p in guesses])
            near_true = np.linalg.norm(true - g, axis=-1) <= np.linalg.norm(distractor - g, axis=-1)
            picked = np.where(near_true[..., None], true, distractor)
            picked = (1 - self.pull) * picked + self.pull * g
        conf = np.full(picked.shape[1], self.confidence)
        return tuple(Pose2D(picked[i], self.visible[i], conf) for i in range(picked.shape[0]))
