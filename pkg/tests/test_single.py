import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvlift.errors import AllRotationsDegenerate, DegenerateSystem, NonPositiveScale
from mvlift.single import (default_rho, lift_single, robust_scale, rotation_weights, single_objective,
                           solve_rotation)
from mvlift.types import Camera, LiftConfig, Pose2D, RotationGrid, RotationMode, rotation_y

IDENTITY = Camera(np.eye(3))


def _planted(basis, angle, scale, coeffs, camera=IDENTITY, offset=(0.0, 0.0)):
    pose = scale * basis.shape(coeffs) @ rotation_y(angle).T
    return Pose2D(camera.project(pose) + offset), pose


def test_rest_shape_is_recovered(basis):
    det, _ = _planted(basis, 0.0, 1.0, np.zeros(basis.size))
    sol = solve_rotation(det, IDENTITY, basis, 0.0)
    assert sol.scale == pytest.approx(1.0, abs=1e-9)
    assert np.allclose(sol.coefficients, 0.0, atol=1e-9)
    assert sol.cost == pytest.approx(0.0, abs=1e-12)


def test_planted_projection_matches_dense_oracle(basis, rng):
    cfg = LiftConfig(reg_weight=0.0)
    coeffs = rng.standard_normal(basis.size) * basis.sigmas
    det, _ = _planted(basis, 0.7, 900.0, coeffs, offset=(12.0, -5.0))
    sol = solve_rotation(det, IDENTITY, basis, 0.7, cfg)
    # oracle: dense least squares over (d, s, c) built directly from the model
    g = IDENTITY.projection @ rotation_y(0.7)
    cols = [np.tile([1.0, 0.0], basis.num_joints), np.tile([0.0, 1.0], basis.num_joints),
            (basis.mean @ g.T).ravel()] + [(e @ g.T).ravel() for e in basis.components]
    x, *_ = np.linalg.lstsq(np.stack(cols, 1), det.joints.ravel(), rcond=None)
    assert np.allclose(sol.offset, x[:2], atol=1e-8)
    assert sol.scale == pytest.approx(x[2], rel=1e-10)
    assert np.allclose(sol.combined, x[3:], atol=1e-7)
    pred = IDENTITY.project(sol.pose) + sol.offset
    assert np.max(np.abs(pred - det.joints)) < 1e-8


def test_pose_is_recomputable(basis, rng):
    det, _ = _planted(basis, 1.1, 800.0, rng.standard_normal(basis.size) * basis.sigmas)
    sol = solve_rotation(det, IDENTITY, basis, 1.1)
    expected = sol.scale * basis.shape(sol.coefficients) @ rotation_y(1.1).T
    assert np.allclose(sol.pose, expected, atol=1e-9)
    assert np.allclose(sol.combined, sol.scale * sol.coefficients)


def test_solution_is_stationary(basis, rng):
    det, _ = _planted(basis, 0.3, 800.0, rng.standard_normal(basis.size) * basis.sigmas)
    noisy = Pose2D(det.joints + rng.normal(0, 4.0, det.joints.shape))
    sol = solve_rotation(noisy, IDENTITY, basis, 0.25)
    x0 = np.concatenate([sol.offset, [sol.scale], sol.combined])

    def f(x):
        return single_objective(noisy, IDENTITY, basis, 0.25, x[2], x[3:], x[:2])

    h = 1e-3
    grad = np.array([(f(x0 + h * u) - f(x0 - h * u)) / (2 * h) for u in np.eye(x0.size)])
    # the objective is quadratic so central differences are exact up to rounding
    size = np.sum(noisy.joints ** 2)
    assert np.linalg.norm(grad) <= 1e-8 * size


def test_objective_is_convex_per_rotation(basis, rng):
    det = Pose2D(rng.normal(0, 300.0, (basis.num_joints, 2)))
    for _ in range(50):
        x, y = rng.normal(0, 100.0, (2, 3 + basis.size))
        t = rng.uniform()
        z = t * x + (1 - t) * y
        f = lambda v: single_objective(det, IDENTITY, basis, 0.4, v[2], v[3:], v[:2])  # noqa: E731
        assert f(z) <= t * f(x) + (1 - t) * f(y) + 1e-9 * (abs(f(x)) + abs(f(y)))


def test_too_few_visible_joints(basis):
    vis = np.zeros(basis.num_joints, bool)
    vis[:3] = True
    det = Pose2D(np.zeros((basis.num_joints, 2)), vis)
    with pytest.raises(DegenerateSystem):
        solve_rotation(det, IDENTITY, basis, 0.0)
    with pytest.raises(AllRotationsDegenerate):
        lift_single(det, IDENTITY, basis)


def test_negative_scale_is_flagged(basis):
    det, _ = _planted(basis, 0.0, -1.0, np.zeros(basis.size))
    sol = solve_rotation(det, IDENTITY, basis, 0.0)
    assert not sol.valid and sol.cost == np.inf
    with pytest.raises(NonPositiveScale):
        solve_rotation(det, IDENTITY, basis, 0.0, strict=True)


def test_argmin_angle_within_one_step(basis, rng):
    grid = RotationGrid.uniform(360)
    for _ in range(5):
        angle = rng.uniform(0, 2 * np.pi)
        det, _ = _planted(basis, angle, 900.0, rng.standard_normal(basis.size) * basis.sigmas)
        res = lift_single(det, IDENTITY, basis, grid, LiftConfig(rotation_mode="argmin"))
        # a single orthographic view cannot tell a pose from its depth mirror image
        err = min(abs(np.angle(np.exp(1j * (res.best_angle - a)))) for a in (angle, np.pi - angle))
        assert err <= grid.step + 1e-12


def test_argmin_on_planted_angle_is_exact(basis, rng):
    grid = RotationGrid.uniform(80)
    angle = grid.angles[17]
    det, pose = _planted(basis, angle, 900.0, 0.3 * rng.standard_normal(basis.size) * basis.sigmas)
    res = lift_single(det, IDENTITY, basis, grid, LiftConfig(rotation_mode="argmin", reg_weight=0.0))
    assert res.best_index in (17, int(np.argmin(np.abs(np.angle(np.exp(1j * (grid.angles - (np.pi - angle))))))))


def test_large_rho_matches_argmin(basis, rng):
    det, _ = _planted(basis, 0.5, 900.0, rng.standard_normal(basis.size) * basis.sigmas)
    noisy = Pose2D(det.joints + rng.normal(0, 3.0, det.joints.shape))
    a = lift_single(noisy, IDENTITY, basis, config=LiftConfig(rotation_mode="argmin"))
    m = lift_single(noisy, IDENTITY, basis, config=LiftConfig(rho=1e6))
    assert np.allclose(a.pose, m.pose, atol=1e-6)


def test_marginal_pose_is_weighted_combination(basis, rng):
    det, _ = _planted(basis, 2.0, 900.0, rng.standard_normal(basis.size) * basis.sigmas)
    noisy = Pose2D(det.joints + rng.normal(0, 5.0, det.joints.shape))
    res = lift_single(noisy, IDENTITY, basis)
    assert res.weights.sum() == pytest.approx(1.0, abs=1e-12)
    expected = sum(w * s.pose for w, s in zip(res.weights, res.per_rotation) if w > 0)
    assert np.allclose(res.pose, expected, atol=1e-9)
    assert np.all(np.isfinite(res.costs[res.weights > 0]))


def test_argmin_ties_go_to_smallest_angle():
    w, _ = rotation_weights(np.array([3.0, 1.0, 1.0, 2.0]), RotationMode.ARGMIN)
    assert np.array_equal(w, [0.0, 1.0, 0.0, 0.0])


def test_all_infinite_costs_raise():
    with pytest.raises(AllRotationsDegenerate):
        rotation_weights(np.full(4, np.inf))


def test_default_temperature():
    assert default_rho([1.0, 2.0, 3.0]) == pytest.approx(0.5)
    assert default_rho([1.0], noise_scale=2.0, num_residuals=10) == pytest.approx(1.0 / 80.0)
    assert default_rho([1.0], noise_scale=0.0, num_residuals=10) == np.inf


def test_robust_scale_matches_gaussian_sigma(rng):
    r = rng.normal(0, 3.0, 200_000)
    assert robust_scale(r, np.ones_like(r)) == pytest.approx(3.0, rel=0.02)
    assert robust_scale(np.zeros(10), np.ones(10), floor=0.5) == 0.5


def test_grid_refinement_never_increases_min_cost(basis, rng):
    det = Pose2D(rng.normal(0, 300.0, (basis.num_joints, 2)))
    coarse = lift_single(det, IDENTITY, basis, RotationGrid.uniform(40))
    fine = lift_single(det, IDENTITY, basis, RotationGrid.uniform(80))
    assert np.min(fine.costs) <= np.min(coarse.costs)


def test_exact_penalty_improves_exact_objective(basis, rng):
    det, _ = _planted(basis, 0.9, 700.0, 2.0 * rng.standard_normal(basis.size) * basis.sigmas)
    noisy = Pose2D(det.joints + rng.normal(0, 5.0, det.joints.shape))
    exact_cfg = LiftConfig(exact_a_penalty=True)

    def exact_objective(sol):
        return single_objective(noisy, IDENTITY, basis, 0.9, sol.scale, sol.combined, sol.offset,
                                LiftConfig(reg_weight=0.0)) + np.sum(basis.sigmas ** 2 * sol.coefficients ** 2)

    surrogate = solve_rotation(noisy, IDENTITY, basis, 0.9)
    exact = solve_rotation(noisy, IDENTITY, basis, 0.9, exact_cfg)
    assert exact.cost == pytest.approx(exact_objective(exact), rel=1e-9)
    assert exact.cost <= exact_objective(surrogate) + 1e-9


def test_lifting_is_deterministic(basis, rng):
    det = Pose2D(rng.normal(0, 300.0, (basis.num_joints, 2)))
    a = lift_single(det, IDENTITY, basis)
    b = lift_single(det, IDENTITY, basis)
    assert np.array_equal(a.pose, b.pose) and np.array_equal(a.weights, b.weights)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1e4), min_size=1, max_size=40), st.floats(-1e4, 1e4), st.floats(1e-4, 10.0))
def test_weights_normalised_and_shift_invariant(costs, shift, rho):
    costs = np.array(costs)
    w, _ = rotation_weights(costs, rho=rho)
    w2, _ = rotation_weights(costs + shift, rho=rho)
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.allclose(w, w2, atol=1e-12)
    assert np.all(w >= 0)
