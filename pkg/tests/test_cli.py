import json
import subprocess
import sys

import numpy as np
import pytest

from mvlift import io
from mvlift.cli import main, resolve_config, build_parser


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("bundle")
    scene = out / "scene.json"
    scene.write_text(json.dumps({"yaw_mode": "grid"}))
    assert main(["simulate", str(scene), "--frames", "3", "-o", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def noisy_bundle(tmp_path_factory):
    out = tmp_path_factory.mktemp("noisy")
    scene = out / "scene.json"
    scene.write_text(json.dumps({"noise_px": 3.0, "outlier_rate": 0.05}))
    assert main(["simulate", str(scene), "--frames", "4", "--seed", "3", "-o", str(out)]) == 0
    return out


def _run(path):
    return json.loads((path / "run.json").read_text())


def test_zero_noise_round_trip(bundle, tmp_path):
    assert main(["lift", "--detections", str(bundle / "detections.json"),
                 "--calibration", str(bundle / "calibration.json"), "-o", str(tmp_path)]) == 0
    assert main(["evaluate", "--poses", str(tmp_path / "poses.json"),
                 "--ground-truth", str(bundle / "ground_truth.json"), "-o", str(tmp_path)]) == 0
    report = io.read_report(tmp_path / "report.json")
    assert report["mean"] < 1e-5 * 4000.0
    run = _run(tmp_path)
    assert run["command"] == "evaluate" and len(run["fingerprint"]) == 64
    assert report["config_fingerprint"] == run["fingerprint"][:16]


def test_single_view_lift(noisy_bundle, tmp_path):
    assert main(["lift", "--detections", str(noisy_bundle / "detections.json"),
                 "--calibration", str(noisy_bundle / "calibration.json"), "--views", "1",
                 "-o", str(tmp_path)]) == 0
    _, poses = io.read_poses(tmp_path / "poses.json")
    assert len(poses) == 4 and all(p is not None for p in poses)
    assert _run(tmp_path)["views"] == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"lam": 2.0, "rho": 0.5}))
    args = build_parser().parse_args(["lift", "--detections", "d", "--calibration", "c",
                                      "--config", str(cfg), "--rho", "0.25"])
    resolved = resolve_config(args)
    assert resolved.lam == 2.0 and resolved.rho == 0.25 and resolved.irls_iterations == 5


def test_usage_errors_exit_1(tmp_path, bundle, capsys):
    with pytest.raises(SystemExit) as info:
        main(["lift", "--calibration", "x"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["nope"])
    assert info.value.code == 1
    code = main(["lift", "--detections", str(bundle / "detections.json"),
                 "--calibration", str(bundle / "calibration.json"), "--views", "9", "-o", str(tmp_path)])
    assert code == 1
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"bogus": 1}))
    assert main(["lift", "--detections", "d", "--calibration", "c", "--config", str(bad)]) == 1
    assert "usage error" in capsys.readouterr().err


def test_data_errors_exit_2(tmp_path, bundle, capsys):
    assert main(["lift", "--detections", str(tmp_path / "missing.json"),
                 "--calibration", str(bundle / "calibration.json"), "-o", str(tmp_path)]) == 2
    doc = json.loads((bundle / "detections.json").read_text())
    doc["joints"][0] = "tail"
    (tmp_path / "d.json").write_text(json.dumps(doc))
    assert main(["lift", "--detections", str(tmp_path / "d.json"),
                 "--calibration", str(bundle / "calibration.json"), "-o", str(tmp_path)]) == 2
    assert "error [io]" in capsys.readouterr().err


def test_numeric_failure_exits_3(tmp_path, bundle):
    _, frames = io.read_detections(bundle / "detections.json")
    from mvlift.types import Pose2D
    blind = [tuple(Pose2D(d.joints, np.arange(17) < 2) for d in f) for f in frames]
    io.write_detections(tmp_path / "d.json", blind)
    assert main(["lift", "--detections", str(tmp_path / "d.json"),
                 "--calibration", str(bundle / "calibration.json"), "-o", str(tmp_path)]) == 3


def test_fit_basis(tmp_path):
    corpus = tmp_path / "corpus.json"
    from mvlift.studio import sample_corpus
    io.write_corpus(corpus, sample_corpus(100, seed=2))
    assert main(["fit-basis", str(corpus), "--basis-size", "5", "-o", str(tmp_path)]) == 0
    assert io.read_basis(tmp_path / "basis.json").size == 5
    assert main(["fit-basis", str(corpus), "--basis-size", "500", "-o", str(tmp_path)]) == 2


def test_ablate_and_gradcheck(noisy_bundle, tmp_path):
    assert main(["ablate", str(noisy_bundle), "--threads", "2", "-o", str(tmp_path)]) == 0
    table = io.read_report(tmp_path / "ablation.json")
    assert len(table["rows"]) == 4 and len(table["rows"][0]["pairs"]) == 4
    assert main(["gradcheck", str(noisy_bundle), "--robust-mode", "frobenius", "--step", "1.0",
                 "-o", str(tmp_path)]) == 0
    assert io.read_report(tmp_path / "gradcheck.json")["max_rel_error"] <= 1e-6
    assert main(["gradcheck", str(noisy_bundle), "--frame", "99", "-o", str(tmp_path)]) == 1


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "mvlift", "simulate", "--frames", "1", "-o", str(tmp_path)],
                         capture_output=True, text=True)
    assert out.returncode == 0 and (tmp_path / "run.json").exists()
