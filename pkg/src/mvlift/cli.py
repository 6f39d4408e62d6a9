"""Command-line entry point: ``mvlift <command> ...``.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure.
Every command writes ``run.json`` (resolved config, seed, inputs and a
SHA-256 fingerprint of those) into ``--output-dir``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import io
from .errors import DataError, LiftError
from .evaluation import ablate, evaluate
from .multi import MultiViewProblem, gradient_check, lift_multi
from .single import lift_single
from .studio import SceneSpec, default_basis, generate
from .types import LiftConfig, validate_rig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_CONFIG_FLAGS = {
    "huber_epsilon": float, "lam": float, "rho": float, "irls_iterations": int,
    "rotation_count": int, "robust_mode": str, "rotation_mode": str, "reg_weight": float,
    "epsilon_floor": float,
}


def _common(p, config=True):
    p.add_argument("--output-dir", "-o", default=".", help="directory for output files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1, help="worker cap for parallel sections")
    if config:
        p.add_argument("--config", help="JSON file with LiftConfig fields")
        for name, typ in _CONFIG_FLAGS.items():
            p.add_argument("--" + name.replace("_", "-"), dest=name, type=typ, default=None)


def build_parser():
    parser = _Parser(prog="mvlift", description="Multi-view 3D human pose lifting.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("fit-basis", help="fit a pose basis from a corpus file")
    p.add_argument("corpus", nargs="?", help="corpus file (mvlift/corpus); omitted = synthetic corpus")
    p.add_argument("--basis-size", type=int, default=10)
    p.add_argument("--corpus-size", type=int, default=3000, help="size of the synthetic corpus")
    _common(p, config=False)

    p = sub.add_parser("simulate", help="generate a synthetic frame bundle")
    p.add_argument("scene", nargs="?", help="JSON scene spec (SceneSpec fields)")
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--basis", help="basis file; omitted = built-in default basis")
    _common(p, config=False)

    p = sub.add_parser("lift", help="lift detections to 3D poses")
    p.add_argument("--detections", required=True)
    p.add_argument("--calibration", required=True)
    p.add_argument("--basis")
    p.add_argument("--views", type=int, help="use only the first K cameras (1 = single-view lifter)")
    _common(p)

    p = sub.add_parser("evaluate", help="score poses against ground truth")
    p.add_argument("--poses", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--protocol", type=int, choices=(1, 2), default=1)
    p.add_argument("--joints", type=int, choices=(14, 17), default=17)
    _common(p, config=False)

    p = sub.add_parser("ablate", help="robust/rotation/camera-count ablation on a bundle")
    p.add_argument("bundle", help="directory with calibration.json, detections.json, ground_truth.json")
    p.add_argument("--basis")
    p.add_argument("--protocol", type=int, choices=(1, 2), default=1)
    p.add_argument("--joints", type=int, choices=(14, 17), default=17)
    p.add_argument("--floor", action="store_true", help="also compute the clean-detection floor")
    _common(p)

    p = sub.add_parser("gradcheck", help="Jacobian vs central finite differences")
    p.add_argument("bundle")
    p.add_argument("--basis")
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--angle", type=float, help="radians; default = ground-truth angle")
    p.add_argument("--step", type=float, default=1e-3)
    _common(p)
    return parser


def resolve_config(args):
    """defaults < config file < flags."""
    values = {}
    if getattr(args, "config", None):
        try:
            values.update(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config file {args.config}: {exc}") from exc
    for name in _CONFIG_FLAGS:
        v = getattr(args, name, None)
        if v is not None:
            values[name] = v
    try:
        return LiftConfig.from_dict(values)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid configuration: {exc}") from exc


def _fingerprint(record):
    blob = json.dumps(record, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _write_run(out, command, config=None, **extra):
    record = {"command": command, "config": None if config is None else config.to_dict()}
    record.update(extra)
    record["fingerprint"] = _fingerprint(record)
    io._write(Path(out) / "run.json", "run", record)
    return record["fingerprint"]


def _basis(path):
    return io.read_basis(path) if path else default_basis()


def _bundle(directory):
    d = Path(directory)
    rig = io.read_calibration(d / "calibration.json")
    _, dets = io.read_detections(d / "detections.json")
    frames = io.read_ground_truth(d / "ground_truth.json", dets)
    return rig, frames


def cmd_fit_basis(args):
    from .basis import fit_basis
    from .studio import sample_corpus

    corpus = io.read_corpus(args.corpus) if args.corpus else sample_corpus(args.corpus_size, args.seed)
    basis = fit_basis(corpus, args.basis_size)
    out = Path(args.output_dir)
    io.write_basis(out / "basis.json", basis)
    _write_run(out, "fit-basis", corpus=args.corpus, basis_size=args.basis_size,
               corpus_size=None if args.corpus else args.corpus_size, seed=args.seed)
    print(f"basis: {basis.size} components, sigmas {np.round(basis.sigmas, 4).tolist()}")
    return EXIT_OK


def cmd_simulate(args):
    scene = {}
    if args.scene:
        try:
            scene = json.loads(Path(args.scene).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read scene file {args.scene}: {exc}") from exc
    scene["seed"] = args.seed
    try:
        spec = SceneSpec.from_dict(scene, basis=_basis(args.basis))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid scene: {exc}") from exc
    frames = generate(spec, args.frames)
    out = Path(args.output_dir)
    rig = spec.rig()
    io.write_calibration(out / "calibration.json", rig)
    io.write_detections(out / "detections.json", [f.detections for f in frames], rig.labels,
                        [f.index for f in frames])
    io.write_ground_truth(out / "ground_truth.json", frames)
    _write_run(out, "simulate", scene=spec.to_dict(), frames=args.frames, basis=args.basis)
    print(f"simulated {len(frames)} frames with {len(rig)} cameras into {out}")
    return EXIT_OK


def cmd_lift(args):
    config = resolve_config(args)
    rig = io.read_calibration(args.calibration)
    validate_rig(rig)
    basis = _basis(args.basis)
    indices, frames = io.read_detections(args.detections)
    views = len(rig) if args.views is None else args.views
    if not 1 <= views <= len(rig):
        raise UsageError(f"--views must be in [1, {len(rig)}]")
    results, failures = [], 0
    for idx, dets in zip(indices, frames):
        if len(dets) != len(rig):
            raise DataError(f"frame {idx}: {len(dets)} cameras in detections, {len(rig)} in calibration")
        try:
            if views == 1:
                results.append(lift_single(dets[0], rig[0], basis, config=config))
            else:
                sub = rig.subset(range(views))
                results.append(lift_multi(MultiViewProblem(dets[:views], sub, basis, config)))
        except LiftError as exc:
            if isinstance(exc, DataError):
                raise
            print(f"frame {idx}: {exc}", file=sys.stderr)
            results.append(None)
            failures += 1
    out = Path(args.output_dir)
    io.write_poses(out / "poses.json", indices, results)
    _write_run(out, "lift", config, detections=args.detections, calibration=args.calibration,
               basis=args.basis, views=views, seed=args.seed)
    print(f"lifted {len(results) - failures}/{len(results)} frames")
    return EXIT_NUMERIC if failures == len(results) and results else EXIT_OK


def cmd_evaluate(args):
    _, preds = io.read_poses(args.poses)
    frames = io.read_ground_truth(args.ground_truth)
    if len(preds) != len(frames):
        raise DataError(f"{len(preds)} poses for {len(frames)} ground-truth frames")
    out = Path(args.output_dir)
    fp = _write_run(out, "evaluate", poses=args.poses, ground_truth=args.ground_truth,
                    protocol=args.protocol, joints=args.joints)
    report = evaluate(preds, [f.pose for f in frames], args.protocol, args.joints, fp[:16])
    io.write_report(out / "report.json", report)
    print(f"P{args.protocol} ({args.joints} joints): mean {report.mean:.6g} mm, "
          f"median {report.median:.6g} mm over {report.per_frame.size} frames, {report.failures} failed")
    return EXIT_OK


def cmd_ablate(args):
    config = resolve_config(args)
    rig, frames = _bundle(args.bundle)
    basis = _basis(args.basis)
    table = ablate(frames, rig, basis, config, args.protocol, args.joints, workers=args.threads,
                   include_floor=args.floor)
    out = Path(args.output_dir)
    io.write_report(out / "ablation.json", table)
    _write_run(out, "ablate", config, bundle=args.bundle, basis=args.basis, protocol=args.protocol,
               joints=args.joints)
    print(table.summary())
    return EXIT_OK


def cmd_gradcheck(args):
    config = resolve_config(args)
    rig, frames = _bundle(args.bundle)
    if not 0 <= args.frame < len(frames):
        raise UsageError(f"--frame must be in [0, {len(frames)})")
    frame = frames[args.frame]
    angle = frame.angle if args.angle is None else args.angle
    problem = MultiViewProblem(frame.detections, rig, _basis(args.basis), config)
    report = gradient_check(problem, angle, args.step)
    out = Path(args.output_dir)
    io.write_report(out / "gradcheck.json", report)
    _write_run(out, "gradcheck", config, bundle=args.bundle, frame=args.frame, angle=angle, step=args.step)
    print(f"max relative error {report['max_rel_error']:.3e} (max abs {report['max_abs_error']:.3e})")
    return EXIT_OK


COMMANDS = {
    "fit-basis": cmd_fit_basis, "simulate": cmd_simulate, "lift": cmd_lift,
    "evaluate": cmd_evaluate, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"mvlift: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except LiftError as exc:
        print(f"mvlift: error [{exc.module}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"mvlift: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
