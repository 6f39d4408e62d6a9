"""File formats and the crop-box utility.

Every file is a JSON object with a header::

    {"format": "mvlift/<kind>", "version": 1, "joints": [...], ...}

``joints`` lists joint names in data order. Names from the 17-joint skeleton
may appear in any order (data is permuted to the canonical order on read);
files for other skeletons use positional names ``joint0, joint1, ...``.
Floats are written with 17 significant digits so every finite value
round-trips exactly, and output is byte-stable (sorted keys, no timestamps).
Non-finite floats are written as the strings ``"nan"``, ``"inf"``, ``"-inf"``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import skeleton
from .errors import DegenerateExtents, JointOrderUnknown, ParseError, VersionMismatch
from .types import Camera, CameraRig, PoseBasis, Pose2D

FORMAT_VERSION = 1
PREFIX = "mvlift/"
KINDS = ("calibration", "detections", "basis", "ground_truth", "poses", "trace", "report", "corpus")


# ---------------------------------------------------------------- serialisation

def _num(x):
    x = float(x)
    if math.isfinite(x):
        return format(x, ".17g")
    return json.dumps("nan" if math.isnan(x) else ("inf" if x > 0 else "-inf"))


def _emit(obj, depth, out):
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if obj is None or isinstance(obj, (bool, np.bool_)):
        out.append(json.dumps(None if obj is None else bool(obj)))
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_num(obj))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        pad = "  " * (depth + 1)
        out.append("{\n")
        for i, key in enumerate(sorted(obj)):
            out.append(f"{pad}{json.dumps(str(key))}: ")
            _emit(obj[key], depth + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append("  " * depth + "}")
    elif isinstance(obj, (list, tuple)):
        # numeric leaves stay on one line; nested structures get one item per line
        if all(not isinstance(v, (list, tuple, dict, np.ndarray)) for v in obj):
            parts = []
            for v in obj:
                _emit(v, depth, parts)
            out.append("[" + ", ".join(parts) + "]")
            return
        pad = "  " * (depth + 1)
        out.append("[\n")
        for i, v in enumerate(obj):
            out.append(pad)
            _emit(v, depth + 1, out)
            out.append(",\n" if i < len(obj) - 1 else "\n")
        out.append("  " * depth + "]")
    else:
        raise TypeError(f"cannot serialise {type(obj).__name__}")


def dumps(obj):
    out = []
    _emit(obj, 0, out)
    return "".join(out) + "\n"


def _write(path, kind, payload, num_joints=None):
    doc = {"format": PREFIX + kind, "version": FORMAT_VERSION}
    if num_joints is not None:
        doc["joints"] = joint_names(num_joints)
    doc.update(payload)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(doc))
    return path


def joint_names(num_joints):
    if num_joints == skeleton.NUM_JOINTS:
        return list(skeleton.JOINT_NAMES)
    return [f"joint{i}" for i in range(num_joints)]


def _read(path, kind):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ParseError(str(exc), path) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, path, exc.lineno) from exc
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object", path, 1)
    fmt = doc.get("format")
    if fmt != PREFIX + kind:
        raise ParseError(f"expected format {PREFIX + kind!r}, found {fmt!r}", path, field="format")
    if doc.get("version") != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: version {doc.get('version')!r}, supported {FORMAT_VERSION}")
    return doc, _Reader(path, text)


class _Reader:
    """Field access with file/line context in error messages."""

    def __init__(self, path, text):
        self.path, self.text = path, text

    def line_of(self, name):
        needle = json.dumps(str(name)) + ":"
        for i, line in enumerate(self.text.splitlines(), 1):
            if needle in line:
                return i
        return None

    def fail(self, msg, name):
        return ParseError(msg, self.path, self.line_of(name), name)

    def get(self, doc, name):
        if name not in doc:
            raise self.fail("missing field", name)
        return doc[name]

    def array(self, doc, name, shape=None, dtype=float):
        raw = self.get(doc, name)
        try:
            arr = np.array(_decode(raw), dtype=dtype)
        except (TypeError, ValueError) as exc:
            raise self.fail(f"not a numeric array ({exc})", name) from exc
        if shape is not None:
            want = tuple(shape)
            if arr.shape != want and not (arr.size == 0 and 0 in want):
                raise self.fail(f"shape {arr.shape}, expected {want}", name)
            arr = arr.reshape(want)
        return arr

    def number(self, doc, name):
        raw = self.get(doc, name)
        try:
            return float(_decode(raw))
        except (TypeError, ValueError) as exc:
            raise self.fail("not a number", name) from exc


def _decode(raw):
    if isinstance(raw, str):
        if raw in ("nan", "inf", "-inf"):
            return float(raw)
        raise ValueError(f"unexpected string {raw!r}")
    if isinstance(raw, list):
        return [_decode(v) for v in raw]
    return raw


def _joint_permutation(doc, reader):
    """Index array mapping file order to in-memory order, or None if identity."""
    names = reader.get(doc, "joints")
    if not isinstance(names, list) or len(set(names)) != len(names):
        raise reader.fail("joint list must be a list of unique names", "joints")
    canonical = list(skeleton.JOINT_NAMES)
    if names == canonical or names == joint_names(len(names)):
        return None, len(names)
    unknown = [n for n in names if n not in skeleton.JOINT_INDEX]
    if unknown or len(names) != skeleton.NUM_JOINTS:
        raise JointOrderUnknown(f"{reader.path}: unrecognised joint names {unknown or names}")
    return np.array([names.index(n) for n in canonical]), len(names)


def _reorder(arr, perm, axis=0):
    return arr if perm is None else np.take(arr, perm, axis=axis)


# ---------------------------------------------------------------- calibration

def write_calibration(path, rig):
    cams = [{"label": c.label, "rotation": c.rotation, "translation": c.translation} for c in rig]
    return _write(path, "calibration", {"cameras": cams})


def read_calibration(path):
    doc, rd = _read(path, "calibration")
    cams = []
    for entry in rd.get(doc, "cameras"):
        cams.append(Camera(rd.array(entry, "rotation", (3, 3)), rd.array(entry, "translation", (3,)),
                           str(rd.get(entry, "label"))))
    return CameraRig(tuple(cams))


# ---------------------------------------------------------------- detections

def _pose2d_dict(p, label):
    return {"label": label, "joints": p.joints, "visible": p.visible.astype(int), "confidence": p.confidence}


def _pose2d(entry, rd, perm, n):
    joints = _reorder(rd.array(entry, "joints", (n, 2)), perm)
    vis = _reorder(rd.array(entry, "visible", (n,), int), perm).astype(bool)
    conf = _reorder(rd.array(entry, "confidence", (n,)), perm)
    return Pose2D(joints, vis, conf)


def write_detections(path, frames_detections, labels=None, indices=None):
    """``frames_detections``: sequence over frames of per-camera Pose2D tuples."""
    frames_detections = [tuple(f) for f in frames_detections]
    n = frames_detections[0][0].num_joints if frames_detections else skeleton.NUM_JOINTS
    indices = range(len(frames_detections)) if indices is None else indices
    out = []
    for idx, dets in zip(indices, frames_detections):
        labs = labels or [f"cam{i}" for i in range(len(dets))]
        out.append({"index": int(idx), "cameras": [_pose2d_dict(d, lab) for d, lab in zip(dets, labs)]})
    return _write(path, "detections", {"frames": out}, n)


def read_detections(path):
    """Returns ``(indices, [tuple of Pose2D per frame])``."""
    doc, rd = _read(path, "detections")
    perm, n = _joint_permutation(doc, rd)
    indices, frames = [], []
    for entry in rd.get(doc, "frames"):
        indices.append(int(rd.get(entry, "index")))
        frames.append(tuple(_pose2d(c, rd, perm, n) for c in rd.get(entry, "cameras")))
    return indices, frames


# ---------------------------------------------------------------- basis

def write_basis(path, basis):
    return _write(path, "basis", {
        "mean": basis.mean, "components": basis.components, "sigmas": basis.sigmas,
        "reference_scale": basis.reference_scale,
    }, basis.num_joints)


def read_basis(path):
    doc, rd = _read(path, "basis")
    perm, n = _joint_permutation(doc, rd)
    sig = rd.array(doc, "sigmas")
    comps = rd.array(doc, "components", (sig.size, n, 3))
    return PoseBasis(_reorder(rd.array(doc, "mean", (n, 3)), perm), _reorder(comps, perm, 1), sig,
                     rd.number(doc, "reference_scale"))


# ---------------------------------------------------------------- corpus

def write_corpus(path, poses):
    poses = np.asarray(poses, float)
    return _write(path, "corpus", {"poses": poses}, poses.shape[1])


def read_corpus(path):
    doc, rd = _read(path, "corpus")
    perm, n = _joint_permutation(doc, rd)
    poses = rd.array(doc, "poses")
    if poses.ndim != 3 or poses.shape[1:] != (n, 3):
        raise rd.fail(f"shape {poses.shape}, expected (M, {n}, 3)", "poses")
    return _reorder(poses, perm, 1)


# ---------------------------------------------------------------- ground truth

_FRAME_FIELDS = ("pose", "scale", "angle", "coefficients", "perturbation", "root", "clean",
                 "outliers", "missing", "displacement")


def write_ground_truth(path, frames):
    out = []
    for f in frames:
        out.append({
            "index": f.index, "pose": f.pose, "scale": f.scale, "angle": f.angle,
            "coefficients": f.coefficients, "perturbation": f.perturbation, "root": f.root,
            "clean": f.clean, "outliers": f.outliers.astype(int), "missing": f.missing.astype(int),
            "displacement": f.displacement,
        })
    n = frames[0].pose.shape[0] if frames else skeleton.NUM_JOINTS
    return _write(path, "ground_truth", {"frames": out}, n)


def read_ground_truth(path, detections=None):
    """Frames from a ground-truth file, paired with ``detections`` (list of tuples) if given.

    Without detections each frame carries its clean projections as detections.
    """
    from .studio import Frame

    doc, rd = _read(path, "ground_truth")
    perm, n = _joint_permutation(doc, rd)
    frames = []
    entries = rd.get(doc, "frames")
    if detections is not None and len(detections) != len(entries):
        raise ParseError(f"{len(detections)} detection frames for {len(entries)} ground-truth frames", path)
    for k, e in enumerate(entries):
        clean = _reorder(rd.array(e, "clean"), perm, 1)
        c = clean.shape[0]
        dets = detections[k] if detections is not None else tuple(Pose2D(x) for x in clean)
        frames.append(Frame(
            index=int(rd.get(e, "index")),
            pose=_reorder(rd.array(e, "pose", (n, 3)), perm),
            scale=rd.number(e, "scale"),
            angle=rd.number(e, "angle"),
            coefficients=rd.array(e, "coefficients"),
            perturbation=_reorder(rd.array(e, "perturbation", (n, 3)), perm),
            root=rd.array(e, "root", (3,)),
            clean=clean,
            detections=tuple(dets),
            outliers=_reorder(rd.array(e, "outliers", (c, n), int), perm, 1).astype(bool),
            missing=_reorder(rd.array(e, "missing", (c, n), int), perm, 1).astype(bool),
            displacement=_reorder(rd.array(e, "displacement", (c, n, 2)), perm, 1),
        ))
    return frames


# ---------------------------------------------------------------- poses

def write_poses(path, indices, results):
    """Lift results (LiftResult) per frame; ``None`` marks a failed frame."""
    out = []
    n = skeleton.NUM_JOINTS
    for idx, r in zip(indices, results):
        if r is None:
            out.append({"index": int(idx), "failed": True})
            continue
        n = r.pose.shape[0]
        out.append({
            "index": int(idx), "failed": False, "pose": r.pose, "scale": r.scale,
            "offsets": r.offsets, "best_angle": r.best_angle, "rho": r.rho,
            "epsilon": r.epsilon, "costs": r.costs, "weights": r.weights,
        })
    return _write(path, "poses", {"frames": out}, n)


def read_poses(path):
    """Returns ``(indices, poses)`` with ``None`` for failed frames."""
    doc, rd = _read(path, "poses")
    perm, n = _joint_permutation(doc, rd)
    indices, poses = [], []
    for e in rd.get(doc, "frames"):
        indices.append(int(rd.get(e, "index")))
        poses.append(None if e.get("failed") else _reorder(rd.array(e, "pose", (n, 3)), perm))
    return indices, poses


# ---------------------------------------------------------------- trace

def write_trace(path, trace):
    stages = []
    n = skeleton.NUM_JOINTS
    for s in trace.stages:
        n = s.detections[0].num_joints
        stages.append({
            "stage": s.stage,
            "detections": [_pose2d_dict(d, f"cam{i}") for i, d in enumerate(s.detections)],
            "fused": [_pose2d_dict(d, f"cam{i}") for i, d in enumerate(s.fused)],
            "reprojections": [_pose2d_dict(d, f"cam{i}") for i, d in enumerate(s.reprojections)],
            "pose": s.pose,
            "error": s.error,
        })
    return _write(path, "trace", {"stages": stages}, n)


def read_trace(path):
    """Returns a list of dicts with Pose2D tuples and the stage pose."""
    doc, rd = _read(path, "trace")
    perm, n = _joint_permutation(doc, rd)
    out = []
    for s in rd.get(doc, "stages"):
        out.append({
            "stage": int(rd.get(s, "stage")),
            "detections": tuple(_pose2d(c, rd, perm, n) for c in rd.get(s, "detections")),
            "fused": tuple(_pose2d(c, rd, perm, n) for c in rd.get(s, "fused")),
            "reprojections": tuple(_pose2d(c, rd, perm, n) for c in rd.get(s, "reprojections")),
            "pose": _reorder(rd.array(s, "pose", (n, 3)), perm),
            "error": s.get("error"),
        })
    return out


# ---------------------------------------------------------------- reports

def write_report(path, report):
    """Any object with ``to_dict`` (EvalReport, AblationTable) or a plain dict."""
    body = report.to_dict() if hasattr(report, "to_dict") else dict(report)
    return _write(path, "report", {"report": body})


def read_report(path):
    doc, rd = _read(path, "report")
    return _decode_tree(rd.get(doc, "report"))


def _decode_tree(obj):
    if isinstance(obj, dict):
        return {k: _decode_tree(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode_tree(v) for v in obj]
    if obj in ("nan", "inf", "-inf"):
        return float(obj)
    return obj


# ---------------------------------------------------------------- crop box

@dataclass(frozen=True)
class CropBox:
    center: tuple
    side: float

    @property
    def bounds(self):
        """(u_min, v_min, u_max, v_max)."""
        h = self.side / 2.0
        return (self.center[0] - h, self.center[1] - h, self.center[0] + h, self.center[1] + h)

    def contains(self, points, tol=1e-9):
        pts = np.atleast_2d(np.asarray(points, float))
        u0, v0, u1, v1 = self.bounds
        return bool(np.all((pts[:, 0] >= u0 - tol) & (pts[:, 0] <= u1 + tol)
                           & (pts[:, 1] >= v0 - tol) & (pts[:, 1] <= v1 + tol)))


def crop_box(extent_min, extent_max, hip, margin_px=25.0):
    """Square, hip-centred box covering the joint extents plus ``margin_px`` on every side.

    The side is twice the largest hip-to-edge distance plus twice the
    margin, which equals the widest span plus margins when the hip is central.
    """
    lo = np.asarray(extent_min, float)
    hi = np.asarray(extent_max, float)
    hip = np.asarray(hip, float)
    if lo.shape != (2,) or hi.shape != (2,) or hip.shape != (2,) or np.any(hi < lo):
        raise DegenerateExtents("extents must be 2D with max >= min and a 2D hip")
    if margin_px < 0:
        raise DegenerateExtents("margin must be non-negative")
    reach = np.maximum(hi - hip, hip - lo)
    side = 2.0 * float(np.max(reach)) + 2.0 * float(margin_px)
    if not side > 0:
        raise DegenerateExtents("zero-size crop: single point with no margin")
    return CropBox((float(hip[0]), float(hip[1])), side)


def crop_box_from_joints(joints, hip_index=skeleton.ROOT, margin_px=25.0):
    j = np.asarray(joints, float)
    return crop_box(j.min(0), j.max(0), j[hip_index], margin_px)
