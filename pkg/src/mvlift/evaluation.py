"""Pose error metrics, the triangulation floor and the ablation harness.

Protocol 1 errors are measured after moving the prediction's root joint onto
the ground truth root (the orthographic model recovers no absolute
translation). Protocol 2 errors are measured after a similarity Procrustes
alignment on the chosen joint subset.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import skeleton
from .errors import DegenerateAlignment, JointCountMismatch, LiftError
from .multi import MultiViewProblem, _combine_batch, _run
from .types import LiftConfig, RobustMode, RotationMode

CURVE_SAMPLES = 101


def _pair(pred, gt):
    pred = np.asarray(pred, float)
    gt = np.asarray(gt, float)
    if pred.shape != gt.shape or pred.ndim != 2 or pred.shape[1] != 3:
        raise JointCountMismatch(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    return pred, gt


def joint_errors_p1(pred, gt, root=skeleton.ROOT):
    pred, gt = _pair(pred, gt)
    return np.linalg.norm((pred - pred[root]) - (gt - gt[root]), axis=1)


def mpjpe_p1(pred, gt, root=skeleton.ROOT):
    """Mean joint distance after aligning the root joints."""
    return float(np.mean(joint_errors_p1(pred, gt, root)))


def procrustes(pred, gt):
    """Similarity ``(scale, rotation, translation)`` mapping ``pred`` onto ``gt``.

    Least-squares optimal with ``det(rotation) = +1``.
    """
    pred, gt = _pair(pred, gt)
    mp, mg = pred.mean(0), gt.mean(0)
    x, y = pred - mp, gt - mg
    u, sv, vt = np.linalg.svd(y.T @ x)
    if sv[0] <= 0 or sv[1] <= 1e-12 * sv[0]:
        raise DegenerateAlignment("cross-covariance has rank below 2")
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    fix = np.array([1.0, 1.0, d])
    rot = (u * fix) @ vt
    var = np.sum(x ** 2)
    scale = float(np.sum(sv * fix) / var)
    return scale, rot, mg - scale * mp @ rot.T


def joint_errors_p2(pred, gt, joints=None):
    pred, gt = _pair(pred, gt)
    if joints is not None:
        idx = list(skeleton.joint_subset(joints) if isinstance(joints, int) else joints)
        pred, gt = pred[idx], gt[idx]
    scale, rot, trans = procrustes(pred, gt)
    return np.linalg.norm(scale * pred @ rot.T + trans - gt, axis=1)


def mpjpe_p2(pred, gt, joints=None):
    """Mean joint distance after similarity alignment on ``joints``.

    ``joints`` is 14, 17, an explicit index list, or None for all joints.
    """
    return float(np.mean(joint_errors_p2(pred, gt, joints)))


def fingerprint(obj):
    """Stable short hash of a JSON-serialisable object."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class EvalReport:
    protocol: str
    per_frame: np.ndarray
    per_joint: np.ndarray
    config_fingerprint: str = ""
    failures: int = 0
    messages: tuple = field(default=())

    @classmethod
    def from_errors(cls, protocol, joint_errors, config_fingerprint="", failures=0, messages=()):
        """``joint_errors``: (F, P) per-frame per-joint distances (NaN rows for failed frames)."""
        je = np.asarray(joint_errors, float).reshape(len(joint_errors), -1)
        ok = np.all(np.isfinite(je), axis=1)
        per_frame = je[ok].mean(axis=1) if ok.any() else np.zeros(0)
        per_joint = je[ok].mean(axis=0) if ok.any() else np.full(je.shape[1], np.nan)
        return cls(protocol, per_frame, per_joint, config_fingerprint, int(failures), tuple(messages))

    @property
    def mean(self):
        return float(np.mean(self.per_frame)) if self.per_frame.size else float("nan")

    @property
    def median(self):
        return float(np.median(self.per_frame)) if self.per_frame.size else float("nan")

    @property
    def std(self):
        return float(np.std(self.per_frame)) if self.per_frame.size else float("nan")

    def sorted_curve(self, samples=CURVE_SAMPLES):
        """Sorted per-frame errors sampled at evenly spaced quantile positions."""
        if not self.per_frame.size:
            return np.zeros(0)
        srt = np.sort(self.per_frame)
        idx = np.round(np.linspace(0, srt.size - 1, min(samples, srt.size))).astype(int)
        return srt[idx]

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "mean": self.mean,
            "median": self.median,
            "per_frame": self.per_frame.tolist(),
            "per_joint": self.per_joint.tolist(),
            "sorted_curve": self.sorted_curve().tolist(),
            "config_fingerprint": self.config_fingerprint,
            "failures": self.failures,
            "messages": list(self.messages),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["protocol"], np.asarray(d["per_frame"], float), np.asarray(d["per_joint"], float),
                   d.get("config_fingerprint", ""), int(d.get("failures", 0)), tuple(d.get("messages", ())))


def evaluate(preds, gts, protocol=1, joints=17, config_fingerprint=""):
    """Report over paired pose lists; ``None`` predictions count as failures.

    ``joints`` (14 or 17) selects the scored subset of a 17-joint skeleton;
    other skeletons are scored on all joints.
    """
    rows, failures, msgs = [], 0, []
    num = np.shape(gts[0])[0] if len(gts) else skeleton.NUM_JOINTS
    subset = list(skeleton.joint_subset(joints)) if num == skeleton.NUM_JOINTS else list(range(num))
    width = len(subset)
    for pred, gt in zip(preds, gts):
        if pred is None:
            failures += 1
            rows.append(np.full(width, np.nan))
            continue
        if protocol == 1:
            rows.append(joint_errors_p1(pred, gt)[subset])
        elif protocol == 2:
            rows.append(joint_errors_p2(pred, gt, subset))
        else:
            raise ValueError(f"protocol must be 1 or 2, got {protocol!r}")
    return EvalReport.from_errors(f"P{protocol}", rows, config_fingerprint, failures, msgs)


def right_angle_pairs(rig, tol=1e-6):
    """Camera index pairs whose optical axes are perpendicular."""
    axes = [cam.optical_axis for cam in rig]
    return [(i, j) for i in range(len(axes)) for j in range(i + 1, len(axes))
            if abs(float(axes[i] @ axes[j])) < tol]


def _lift_frame(frame, rig, basis, config, cameras, modes):
    """Lift one frame once per robust mode and combine under each rotation mode."""
    full = MultiViewProblem(frame.detections, rig, basis, config)
    problem = full if cameras is None else full.subset(cameras)
    out = {}
    for robust in {m[0] for m in modes}:
        batch = _run(problem, config.grid().angles, robust)
        for rot_mode in [m[1] for m in modes if m[0] is robust]:
            out[(robust, rot_mode)] = _combine_batch(problem, batch, rot_mode).pose
    return out


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(x) for x in items]


@dataclass(frozen=True, eq=False)
class AblationRow:
    robust_mode: RobustMode
    rotation_mode: RotationMode
    all_cameras: EvalReport
    pairs: dict

    @property
    def pair_means(self):
        return np.array([r.mean for r in self.pairs.values()])

    @property
    def pair_mean(self):
        return float(np.mean(self.pair_means)) if self.pairs else float("nan")

    @property
    def pair_std(self):
        return float(np.std(self.pair_means)) if self.pairs else float("nan")

    @property
    def label(self):
        return f"{self.robust_mode.value}+{self.rotation_mode.value}"


@dataclass(frozen=True, eq=False)
class AblationTable:
    rows: tuple
    protocol: int
    floor: float = float("nan")

    def row(self, robust_mode, rotation_mode):
        for r in self.rows:
            if r.robust_mode is RobustMode(robust_mode) and r.rotation_mode is RotationMode(rotation_mode):
                return r
        raise KeyError((robust_mode, rotation_mode))

    def to_dict(self):
        return {
            "protocol": self.protocol,
            "floor": self.floor,
            "rows": [{
                "robust_mode": r.robust_mode.value,
                "rotation_mode": r.rotation_mode.value,
                "all_cameras": r.all_cameras.to_dict(),
                "pairs": {f"{i}-{j}": rep.to_dict() for (i, j), rep in r.pairs.items()},
                "pair_mean": r.pair_mean,
                "pair_std": r.pair_std,
            } for r in self.rows],
        }

    def summary(self):
        lines = [f"{'configuration':<26}{'all cameras':>14}{'2 cameras':>22}"]
        for r in self.rows:
            lines.append(f"{r.label:<26}{r.all_cameras.mean:>11.3f} mm"
                         f"{r.pair_mean:>12.3f} +- {r.pair_std:.3f} mm")
        if np.isfinite(self.floor):
            lines.append(f"{'triangulation floor':<26}{self.floor:>11.3f} mm")
        return "\n".join(lines)


MODES = tuple((rb, rt) for rb in RobustMode for rt in RotationMode)


def ablate(frames, rig, basis, config=None, protocol=1, joints=17, pairs=None, modes=MODES,
           workers=None, include_floor=False):
    """Errors for every (robust mode, rotation mode) on all cameras and on each camera pair.

    Per-frame lifter errors are recorded as failures of that cell rather
    than raised.
    """
    config = config or LiftConfig()
    pairs = right_angle_pairs(rig) if pairs is None else [tuple(p) for p in pairs]
    fp = fingerprint(config.to_dict())
    gts = [f.pose for f in frames]
    modes = tuple((RobustMode(a), RotationMode(b)) for a, b in modes)

    def cell_poses(cameras):
        def one(frame):
            try:
                return _lift_frame(frame, rig, basis, config, cameras, modes)
            except LiftError as exc:
                return exc
        return _map(one, frames, workers)

    def report(results, mode):
        preds = [None if isinstance(r, Exception) else r[mode] for r in results]
        msgs = [str(r) for r in results if isinstance(r, Exception)]
        rep = evaluate(preds, gts, protocol, joints, fp)
        return EvalReport(rep.protocol, rep.per_frame, rep.per_joint, fp, rep.failures, tuple(msgs))

    full = cell_poses(None)
    sub = {pr: cell_poses(pr) for pr in pairs}
    rows = tuple(
        AblationRow(m[0], m[1], report(full, m), {pr: report(sub[pr], m) for pr in pairs})
        for m in modes
    )
    floor = float("nan")
    if include_floor:
        floor = gt_triangulation_floor(frames, rig, basis, config)[f"p{protocol}"]
    return AblationTable(rows, protocol, floor)


def gt_triangulation_floor(frames, rig, basis, config=None, joints=17):
    """Mean P1/P2 error of Huber + marginalised lifting on clean detections."""
    from .multi import lift_multi

    config = (config or LiftConfig()).replace(robust_mode=RobustMode.HUBER,
                                              rotation_mode=RotationMode.MARGINALIZE)
    p1, p2 = [], []
    for f in frames:
        pose = lift_multi(MultiViewProblem(f.clean_detections, rig, basis, config)).pose
        p1.append(mpjpe_p1(pose, f.pose))
        p2.append(mpjpe_p2(pose, f.pose, joints))
    return {"p1": float(np.mean(p1)), "p2": float(np.mean(p2))}
