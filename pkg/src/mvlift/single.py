"""Single-view lifting: per-rotation least squares and rotation search.

For a fixed ground-plane rotation the projection ``s Pi E R (mu + a.e)`` is
linear in ``(s, c)`` with ``c = s * a``, so each rotation is one small linear
least-squares problem. The coefficient penalty is applied to ``c`` divided by
the basis reference scale, which equals the literal ``sigma^2 a^2`` penalty
whenever the recovered scale matches the training scale.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._linalg import solve_normal
from .errors import AllRotationsDegenerate, DegenerateSystem, NonPositiveScale
from .types import LiftConfig, RotationMode, rotation_y

MIN_VISIBLE = 4


@dataclass(frozen=True, eq=False)
class RotationSolution:
    angle: float
    scale: float
    coefficients: np.ndarray
    combined: np.ndarray
    offset: np.ndarray
    cost: float
    pose: np.ndarray
    valid: bool = True


@dataclass(frozen=True, eq=False)
class LiftResult:
    """Output of a rotation search.

    ``pose`` is the reconstruction (argmin rotation or softmax-weighted
    average). ``offsets`` are the per-camera 2D translations in image units
    and ``residuals`` the data residuals of ``pose`` against the input, both
    averaged with the same weights as the pose.
    """

    pose: np.ndarray
    per_rotation: list
    mode: RotationMode
    weights: np.ndarray
    angles: np.ndarray
    costs: np.ndarray
    rho: float
    scale: float
    offsets: np.ndarray
    residuals: np.ndarray = None
    epsilon: float = None

    @property
    def best_index(self):
        return int(np.argmin(self.costs))

    @property
    def best_angle(self):
        return float(self.angles[self.best_index])


def regularizer_weights(basis, config):
    """Diagonal penalty on the combined coefficients ``c``."""
    return config.reg_weight * (basis.sigmas / basis.reference_scale) ** 2


MAD_SCALE = 1.4826


def robust_scale(residuals, visible, floor=1e-3):
    """1.4826 * MAD of the visible scalar residuals, floored at ``floor``."""
    r = np.asarray(residuals)[np.broadcast_to(np.asarray(visible), np.shape(residuals)) > 0]
    if r.size == 0:
        return float(floor)
    mad = np.median(np.abs(r - np.median(r)))
    return float(max(MAD_SCALE * mad, floor))


def default_rho(costs, noise_scale=None, num_residuals=1):
    """Temperature for marginalisation.

    With a residual noise scale ``sigma`` measured over ``num_residuals``
    scalar residuals, ``rho = 1 / (2 n sigma^2)``: weights compare the
    per-residual mean squared cost against the noise variance. A zero noise
    scale (exact fit) gives an infinite temperature, i.e. argmin weights.
    Without a noise scale, one over the median finite cost.
    """
    if noise_scale is not None:
        denom = 2.0 * max(int(num_residuals), 1) * noise_scale ** 2
        return 1.0 / denom if denom > 0 else float("inf")
    costs = np.asarray(costs, float)
    med = float(np.median(costs[np.isfinite(costs)]))
    return 1.0 / med if med > 0 else float("inf")


def rotation_weights(costs, mode=RotationMode.MARGINALIZE, rho=None, noise_scale=None, num_residuals=1):
    """Softmax (or one-hot) weights over rotations; returns ``(weights, rho)``.

    ``rho=None`` resolves through :func:`default_rho`. Weights are computed
    relative to the minimum cost so they never underflow to all-zero.
    """
    costs = np.asarray(costs, float)
    valid = np.isfinite(costs)
    if not valid.any():
        raise AllRotationsDegenerate("every rotation produced a degenerate solve")
    cmin = costs[valid].min()
    w = np.zeros_like(costs)
    if RotationMode(mode) is RotationMode.ARGMIN:
        w[int(np.argmin(np.where(valid, costs, np.inf)))] = 1.0
        return w, float("inf") if rho is None else float(rho)
    if rho is None:
        rho = default_rho(costs, noise_scale, num_residuals)
    if not np.isfinite(rho):
        w[valid & (costs == cmin)] = 1.0
    else:
        w[valid] = np.exp(-rho * (costs[valid] - cmin))
    return w / w.sum(), float(rho)


def combine(weights, values):
    """Weighted sum over the leading (rotation) axis in fixed order."""
    return np.tensordot(weights, np.asarray(values, float), axes=1)


def _single_arrays(detections, camera, basis, angles):
    rot = rotation_y(np.asarray(angles, float))            # (N,3,3)
    g = np.einsum("ki,nij->nkj", camera.projection, rot)    # (N,2,3)
    gmu = np.einsum("nkj,pj->npk", g, basis.mean)           # (N,P,2)
    ge = np.einsum("nkj,bpj->nbpk", g, basis.components)    # (N,B,P,2)
    y = detections.joints - camera.translation[:2]          # (P,2)
    vis = detections.visible.astype(float)
    return rot, gmu, ge, y, vis


def _lstsq(cols, target, vis, reg):
    """Batched weighted least squares over design columns.

    cols: (N, K, P, 2) design columns; target: (N, P, 2) or (P, 2);
    reg: (K,) diagonal penalty.
    """
    wc = cols * vis[None, None, :, None]
    a = np.einsum("nkpd,nlpd->nkl", wc, cols) + np.diag(reg)
    target = np.broadcast_to(target, cols.shape[:1] + cols.shape[2:])
    b = np.einsum("nkpd,npd->nk", wc, target)
    return solve_normal(a, b)


def _offset_cols(n, p):
    cols = np.zeros((n, 2, p, 2))
    cols[:, 0, :, 0] = 1.0
    cols[:, 1, :, 1] = 1.0
    return cols


def _solve_batch(detections, camera, basis, angles, config):
    angles = np.atleast_1d(np.asarray(angles, float))
    n, p, bsz = angles.size, basis.num_joints, basis.size
    if detections.num_joints != p:
        raise ValueError(f"detections have {detections.num_joints} joints, basis has {p}")
    rot, gmu, ge, y, vis = _single_arrays(detections, camera, basis, angles)
    reg_c = regularizer_weights(basis, config)
    if detections.num_visible < MIN_VISIBLE:
        nan = np.full(n, np.nan)
        return dict(angles=angles, rot=rot, d=np.full((n, 2), np.nan), s=nan, c=np.full((n, bsz), np.nan),
                    cost=np.full(n, np.inf), ok=np.zeros(n, bool))

    cols = np.concatenate([_offset_cols(n, p), gmu[:, None], ge], axis=1)
    x, ok = _lstsq(cols, y, vis, np.concatenate([[0.0, 0.0, 0.0], reg_c]))
    d, s, c = x[:, :2], x[:, 2], x[:, 3:]

    if config.exact_a_penalty:
        d, s, c, ok = _alternate(y, vis, gmu, ge, basis, config, d, s, c, ok)

    pred = d[:, None, :] + s[:, None, None] * gmu + np.einsum("nb,nbpk->npk", c, ge)
    data = np.einsum("npk,p->n", (y - pred) ** 2, vis)
    if config.exact_a_penalty:
        a = c / s[:, None]
        cost = data + config.reg_weight * np.sum(basis.sigmas ** 2 * a ** 2, axis=1)
    else:
        cost = data + np.sum(reg_c * c ** 2, axis=1)
    cost = np.where(ok & (s > 0), cost, np.inf)
    return dict(angles=angles, rot=rot, d=d, s=s, c=c, cost=cost, ok=ok, res=y - pred)


def _alternate(y, vis, gmu, ge, basis, config, d, s, c, ok, max_iter=200, tol=1e-13):
    """Block-coordinate descent on the exact ``sigma^2 a^2`` objective."""
    n, p = gmu.shape[:2]
    reg_a = config.reg_weight * basis.sigmas ** 2
    s = np.where(ok & (s > 0), s, 1.0)
    a = np.where(np.isfinite(c), c, 0.0) / s[:, None]
    prev = np.full(n, np.inf)
    for _ in range(max_iter):
        cols_a = np.concatenate([_offset_cols(n, p), s[:, None, None, None] * ge], axis=1)
        x, ok_a = _lstsq(cols_a, y - s[:, None, None] * gmu, vis, np.concatenate([[0.0, 0.0], reg_a]))
        a = np.where(ok_a[:, None], x[:, 2:], a)
        shape = gmu + np.einsum("nb,nbpk->npk", a, ge)
        cols_s = np.concatenate([_offset_cols(n, p), shape[:, None]], axis=1)
        x, ok_s = _lstsq(cols_s, y, vis, np.zeros(3))
        d, s = x[:, :2], x[:, 2]
        ok = ok & ok_a & ok_s
        res = y - d[:, None, :] - s[:, None, None] * shape
        obj = np.einsum("npk,p->n", res ** 2, vis) + np.sum(reg_a * a ** 2, axis=1)
        done = np.abs(prev - obj) <= tol * np.maximum(obj, 1e-300)
        prev = obj
        if np.all(done | ~ok):
            break
    return d, s, s[:, None] * a, ok


def _solutions(batch, basis):
    sols = []
    for i, angle in enumerate(batch["angles"]):
        s, c = batch["s"][i], batch["c"][i]
        valid = bool(np.isfinite(batch["cost"][i]))
        a = c / s if valid else np.full_like(c, np.nan)
        shape = s * basis.mean + np.tensordot(c, basis.components, axes=1)
        pose = shape @ batch["rot"][i].T
        sols.append(RotationSolution(float(angle), float(s), a, c, batch["d"][i], float(batch["cost"][i]),
                                     pose, valid))
    return sols


def solve_rotation(detections, camera, basis, angle, config=None, strict=False):
    """Global minimiser over ``(s, a)`` of the single-view cost at one rotation.

    Raises :class:`DegenerateSystem` when the normal equations are singular
    or fewer than four joints are visible. A non-positive scale returns a
    solution with ``valid=False`` and infinite cost, or raises
    :class:`NonPositiveScale` when ``strict``.
    """
    config = config or LiftConfig()
    if detections.num_visible < MIN_VISIBLE:
        raise DegenerateSystem(f"{detections.num_visible} visible joints; need at least {MIN_VISIBLE}")
    batch = _solve_batch(detections, camera, basis, [angle], config)
    if not batch["ok"][0]:
        raise DegenerateSystem(f"singular normal equations at angle {angle:.6f}")
    sol = _solutions(batch, basis)[0]
    if strict and not sol.valid:
        raise NonPositiveScale(f"recovered scale {sol.scale:.6g} <= 0 at angle {angle:.6f}")
    return sol


def single_objective(detections, camera, basis, angle, scale, combined, offset, config=None):
    """Evaluate the single-view surrogate objective at arbitrary parameters."""
    config = config or LiftConfig()
    shape = scale * basis.mean + np.tensordot(np.asarray(combined, float), basis.components, axes=1)
    pred = camera.project(shape @ rotation_y(angle).T) + np.asarray(offset)
    res = detections.joints - pred
    data = float(np.sum(res[detections.visible] ** 2))
    return data + float(np.sum(regularizer_weights(basis, config) * np.asarray(combined) ** 2))


def lift_single(detections, camera, basis, grid=None, config=None):
    """Rotation search over ``grid`` followed by argmin or marginalisation."""
    config = config or LiftConfig()
    grid = grid or config.grid()
    batch = _solve_batch(detections, camera, basis, grid.angles, config)
    noise = None
    if np.isfinite(batch["cost"]).any():
        best = int(np.argmin(batch["cost"]))
        noise = robust_scale(batch["res"][best], detections.visible[:, None], 0.0)
    weights, rho = rotation_weights(batch["cost"], config.rotation_mode, config.rho, noise,
                                    2 * detections.num_visible)
    sols = _solutions(batch, basis)
    live = weights > 0
    poses = np.stack([s.pose for s in sols])
    pose = combine(weights[live], poses[live])
    scale = float(combine(weights[live], batch["s"][live]))
    offset = combine(weights[live], batch["d"][live])
    residuals = (detections.joints - camera.translation[:2]) - (pose @ camera.projection.T + offset)
    residuals = np.where(detections.visible[:, None], residuals, 0.0)
    return LiftResult(pose=pose, per_rotation=sols, mode=config.rotation_mode, weights=weights,
                      angles=np.array(grid.angles), costs=batch["cost"], rho=rho, scale=scale,
                      offsets=offset[None], residuals=residuals[None])
