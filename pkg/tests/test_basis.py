import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import subspace_angles

from mvlift import skeleton
from mvlift.basis import fit_basis, mean_bone_length, normalize_pose, project, reconstruct
from mvlift.errors import DegeneratePose, RankDeficient
from mvlift.studio import sample_corpus, sample_pose
from mvlift.types import rotation_y


def _canonical(rng):
    pose, _ = normalize_pose(sample_pose(rng))
    return pose


def test_normalized_pose_is_a_fixed_point(rng):
    pose = _canonical(rng)
    again, align = normalize_pose(pose)
    assert np.allclose(again, pose, atol=1e-12)
    assert align.angle == pytest.approx(0.0, abs=1e-12)
    assert align.scale == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(align.root, 0.0)


def test_normalization_properties(rng):
    raw = sample_pose(rng) + [100.0, 0.0, -40.0]
    pose, align = normalize_pose(raw)
    assert np.allclose(pose[skeleton.ROOT], 0.0)
    hip = pose[skeleton.LEFT_HIP] - pose[skeleton.RIGHT_HIP]
    assert abs(hip[2]) < 1e-12 and hip[0] > 0
    assert mean_bone_length(pose) == pytest.approx(1.0)
    assert np.allclose(align.apply(pose), raw, atol=1e-9)


def test_yaw_rotation_is_removed(rng):
    raw = sample_pose(rng)
    turned = raw @ rotation_y(np.pi / 2).T
    assert np.allclose(normalize_pose(turned)[0], normalize_pose(raw)[0], atol=1e-12)


def test_scale_is_removed(rng):
    raw = sample_pose(rng)
    a, ra = normalize_pose(raw)
    b, rb = normalize_pose(2.0 * raw)
    assert np.allclose(a, b, atol=1e-12)
    assert rb.scale / ra.scale == pytest.approx(2.0)


def test_coincident_joints_rejected():
    with pytest.raises(DegeneratePose):
        normalize_pose(np.ones((17, 3)))


def test_identical_corpus_is_rank_deficient(rng):
    pose = sample_pose(rng)
    with pytest.raises(RankDeficient):
        fit_basis(np.stack([pose] * 5), 1)


def test_basis_size_bounds(rng):
    corpus = sample_corpus(4, seed=1)
    with pytest.raises(ValueError):
        fit_basis(corpus, 4)
    with pytest.raises(ValueError):
        fit_basis(corpus, 0)


def test_planted_model_recovery():
    rng = np.random.default_rng(5)
    p, b, m = 6, 3, 400
    mu = rng.standard_normal((p, 3))
    e, _ = np.linalg.qr(rng.standard_normal((3 * p, b)))
    coeffs = rng.standard_normal((m, b)) * [5.0, 3.0, 1.0]
    coeffs -= coeffs.mean(0)
    corpus = (mu.ravel() + coeffs @ e.T).reshape(m, p, 3)
    basis = fit_basis(corpus, b, normalize=False)
    assert np.allclose(basis.mean, mu, atol=1e-6)
    angles = subspace_angles(basis.components.reshape(b, -1).T, e)
    assert np.max(angles) < 1e-6
    # sigmas against an SVD of the centred data matrix
    x = corpus.reshape(m, -1) - corpus.reshape(m, -1).mean(0)
    sv = np.linalg.svd(x, compute_uv=False)[:b] / np.sqrt(m - 1)
    assert np.allclose(basis.sigmas, sv, rtol=1e-9)


def test_exact_representation_with_full_rank():
    corpus = sample_corpus(3, seed=2)
    basis = fit_basis(corpus, 2)
    for pose in corpus:
        norm = normalize_pose(pose)[0]
        assert np.max(np.abs(reconstruct(basis, project(basis, pose)) - norm)) < 1e-9


def test_orthonormal_and_ordered():
    basis = fit_basis(sample_corpus(300, seed=3), 12)
    e = basis.components.reshape(basis.size, -1)
    assert np.allclose(e @ e.T, np.eye(basis.size), atol=1e-9)
    assert np.all(np.diff(basis.sigmas) <= 0)


def test_reconstruction_error_decreases_with_size():
    corpus = sample_corpus(200, seed=4)
    bases = [fit_basis(corpus, b) for b in range(1, 16)]
    for pose in corpus[:20]:
        norm = normalize_pose(pose)[0]
        errs = [np.linalg.norm(reconstruct(bs, project(bs, pose)) - norm) for bs in bases]
        assert np.all(np.diff(errs) <= 1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0, 2 * np.pi), st.floats(0.1, 10.0))
def test_normalization_invariant_to_similarity(seed, yaw, scale):
    raw = sample_pose(np.random.default_rng(seed))
    moved = scale * raw @ rotation_y(yaw).T + [3.0, -2.0, 7.0]
    assert np.allclose(normalize_pose(moved)[0], normalize_pose(raw)[0], atol=1e-9)
