import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvlift.errors import DuplicateLabel, NonOrthonormalRotation
from mvlift.types import (Camera, CameraRig, LiftConfig, Pose2D, PoseBasis, RotationGrid,
                          RotationMode, RobustMode, as_pose3d, rotation_y, validate_rig)


def test_identity_camera_is_valid():
    assert validate_rig(CameraRig((Camera(np.eye(3)),)))


def test_scaled_rotation_is_rejected():
    with pytest.raises(NonOrthonormalRotation) as info:
        validate_rig(CameraRig((Camera(1.001 * np.eye(3), label="bad"),)))
    assert info.value.label == "bad"
    assert info.value.deviation == pytest.approx(1.001 ** 2 - 1)


def test_reflection_is_rejected():
    with pytest.raises(NonOrthonormalRotation):
        validate_rig(CameraRig((Camera(np.diag([1.0, 1.0, -1.0])),)))


def test_studio_rig_is_valid_and_right_angled():
    rig = CameraRig.studio()
    assert validate_rig(rig)
    axes = np.array([c.optical_axis for c in rig])
    gram = axes @ axes.T
    assert np.allclose(gram, np.array([[1, 0, -1, 0], [0, 1, 0, -1], [-1, 0, 1, 0], [0, -1, 0, 1]]),
                       atol=1e-12)


def test_duplicate_labels_rejected():
    cam = Camera(np.eye(3), label="a")
    with pytest.raises(DuplicateLabel):
        validate_rig(CameraRig((cam, cam)))


def test_empty_rig_rejected():
    with pytest.raises(ValueError):
        validate_rig(CameraRig(()))


def test_non_finite_values_rejected():
    with pytest.raises(ValueError):
        Camera(np.full((3, 3), np.nan))
    with pytest.raises(ValueError):
        Pose2D([[0.0, np.inf]])
    with pytest.raises(ValueError):
        as_pose3d([[0.0, 0.0, np.nan]])


def test_invisible_joints_may_be_non_finite():
    p = Pose2D([[0.0, 0.0], [np.nan, np.nan]], visible=[True, False])
    assert p.num_visible == 1


def test_confidence_range():
    with pytest.raises(ValueError):
        Pose2D([[0.0, 0.0]], confidence=[1.5])


def test_values_are_immutable():
    p = Pose2D([[1.0, 2.0]])
    with pytest.raises(ValueError):
        p.joints[0, 0] = 3.0


def test_camera_yaw_90_sees_world_minus_z_as_image_x():
    cam = Camera.from_yaw(np.pi / 2)
    # yaw 0 looks along +z; turning by 90 degrees looks along +x
    assert np.allclose(cam.optical_axis, [1.0, 0.0, 0.0], atol=1e-12)
    assert np.allclose(cam.project([[0.0, 0.0, -1.0]]), [[1.0, 0.0]], atol=1e-12)
    assert np.allclose(cam.project([[1.0, 0.0, 0.0]]), [[0.0, 0.0]], atol=1e-12)


def test_basis_validation():
    mu = np.zeros((3, 3))
    e = np.ones((1, 3, 3))
    with pytest.raises(ValueError):
        PoseBasis(mu, e, [0.0])
    with pytest.raises(ValueError):
        PoseBasis(mu, e, [1.0, 2.0])
    with pytest.raises(ValueError):
        PoseBasis(mu, np.ones((0, 3, 3)), [])


def test_rotation_grid():
    g = RotationGrid.uniform(80)
    assert len(g) == 80
    assert np.allclose(np.diff(g.angles), g.step)
    with pytest.raises(ValueError):
        RotationGrid([0.0, 0.0])


def test_config_validation_and_round_trip():
    cfg = LiftConfig(rho=2.0, robust_mode="frobenius", rotation_mode="argmin")
    assert cfg.robust_mode is RobustMode.FROBENIUS and cfg.rotation_mode is RotationMode.ARGMIN
    assert LiftConfig.from_dict(cfg.to_dict()) == cfg
    for bad in ({"lam": 0.0}, {"rho": -1.0}, {"irls_iterations": 0}, {"huber_epsilon": 0.0},
                {"epsilon_floor": 0.0}):
        with pytest.raises(ValueError):
            LiftConfig(**bad)
    with pytest.raises(ValueError):
        LiftConfig.from_dict({"bogus": 1})


@settings(max_examples=50, deadline=None)
@given(st.floats(-20, 20, allow_nan=False))
def test_rotation_y_is_proper(angle):
    r = rotation_y(angle)
    assert np.max(np.abs(r.T @ r - np.eye(3))) <= 1e-12
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(r[1], [0, 1, 0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(1.0, 1e4))
def test_accepted_cameras_are_orthonormal(yaw, dist):
    cam = Camera.from_yaw(yaw, dist)
    assert cam.orthonormality_error() <= 1e-9
    assert validate_rig(CameraRig((cam,)))
