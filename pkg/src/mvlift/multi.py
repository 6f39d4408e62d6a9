"""Multi-view lifting with joint shape warping and a Huber data term.

Unknowns for one ground-plane rotation ``R`` are stacked as

    x = [Q (3P), d (2C), s, c (B)]

where ``Q`` is the warped 3D shape in data units, ``d`` a per-camera 2D
offset (absorbs the unknown subject translation), ``s`` the shared scale and
``c = s * a`` the combined basis coefficients. The objective is

    lam * sum_c psi(I_c - Pi E_c Q - d_c) + |Q - R (s mu + c.e)|^2 + sum_i g_i c_i^2

with ``psi(r) = r^2`` (Frobenius) or ``psi(r) = 2 |r|_eps`` (Huber, scaled so
the inlier branch coincides with the Frobenius term). Everything is linear in
``x`` for fixed weights; the Huber case is minimised by IRLS with weights
``min(1, eps / |r|)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._linalg import solve_normal
from .errors import AllRotationsDegenerate, DegenerateSystem
from .single import (LiftResult, MIN_VISIBLE, combine, regularizer_weights, robust_scale,
                     rotation_weights)
from .types import LiftConfig, RobustMode, rotation_y

def huber(x, eps):
    """Elementwise Huber loss: ``x^2/2`` inside ``eps``, ``eps|x| - eps^2/2`` outside."""
    ax = np.abs(np.asarray(x, float))
    return np.where(ax <= eps, 0.5 * ax ** 2, eps * ax - 0.5 * eps ** 2)


def huber_weight(r, eps):
    ar = np.abs(r)
    return np.where(ar <= eps, 1.0, eps / np.where(ar > 0, ar, 1.0))


def _huber_weight_slope(r, eps):
    ar = np.abs(r)
    return np.where(ar <= eps, 0.0, -eps * np.sign(r) / np.where(ar > 0, ar, 1.0) ** 2)


@dataclass(frozen=True, eq=False)
class MultiViewProblem:
    detections: tuple
    rig: object
    basis: object
    config: LiftConfig = field(default_factory=LiftConfig)

    def __post_init__(self):
        dets = tuple(self.detections)
        object.__setattr__(self, "detections", dets)
        if len(dets) != len(self.rig):
            raise ValueError(f"{len(dets)} detection sets for {len(self.rig)} cameras")
        p = self.basis.num_joints
        if any(d.num_joints != p for d in dets):
            raise ValueError(f"all detections must have {p} joints")
        if not any(d.num_visible >= MIN_VISIBLE for d in dets):
            raise DegenerateSystem(f"no camera has {MIN_VISIBLE} or more visible joints")
        if self.config.exact_a_penalty:
            raise ValueError("exact_a_penalty is only implemented for single-view lifting")
        proj = np.stack([cam.projection for cam in self.rig])
        vis = np.stack([np.repeat(d.visible[:, None], 2, 1) for d in dets]).astype(float)
        y = np.stack([d.joints - cam.translation[:2] for d, cam in zip(dets, self.rig)])
        y = np.where(vis > 0, y, 0.0)
        object.__setattr__(self, "_proj", proj)
        object.__setattr__(self, "_vis", vis)
        object.__setattr__(self, "_y", y)
        object.__setattr__(self, "_unused", vis.sum(axis=(1, 2)) == 0)

    @property
    def num_cameras(self):
        return len(self.rig)

    @property
    def num_joints(self):
        return self.basis.num_joints

    @property
    def num_unknowns(self):
        return 3 * self.num_joints + 2 * self.num_cameras + 1 + self.basis.size

    def with_detections(self, detections):
        return MultiViewProblem(tuple(detections), self.rig, self.basis, self.config)

    def subset(self, cameras):
        cameras = list(cameras)
        return MultiViewProblem(tuple(self.detections[i] for i in cameras), self.rig.subset(cameras),
                                self.basis, self.config)


@dataclass(frozen=True, eq=False)
class WarpSolution:
    angle: float
    pose: np.ndarray
    scale: float
    coefficients: np.ndarray
    combined: np.ndarray
    offsets: np.ndarray
    residuals: np.ndarray
    weights: np.ndarray
    trace: np.ndarray
    cost: float
    epsilon: float
    model_pose: np.ndarray
    valid: bool = True


def _model_matrix(problem, rot):
    """(N, 3P, 1+B): columns of the model pose w.r.t. (s, c)."""
    basis = problem.basis
    n = rot.shape[0]
    r_mu = np.einsum("nij,pj->npi", rot, basis.mean).reshape(n, -1, 1)
    r_e = np.einsum("nij,bpj->nbpi", rot, basis.components).reshape(n, basis.size, -1)
    return np.concatenate([r_mu, r_e.transpose(0, 2, 1)], axis=2)


def _inv3_sym(h):
    """Batched inverse of symmetric positive definite 3x3 matrices via the adjugate."""
    a, b, c = h[..., 0, 0], h[..., 0, 1], h[..., 0, 2]
    d, e, f = h[..., 1, 1], h[..., 1, 2], h[..., 2, 2]
    c00, c01, c02 = d * f - e * e, c * e - b * f, b * e - c * d
    c11, c12, c22 = a * f - c * c, b * c - a * e, a * d - b * b
    det = a * c00 + b * c01 + c * c02
    adj = np.stack([np.stack([c00, c01, c02], -1), np.stack([c01, c11, c12], -1),
                    np.stack([c02, c12, c22], -1)], -2)
    return adj / det[..., None, None]


def _factor(problem, omega, model):
    """Reduce the normal equations by eliminating the per-joint 3x3 blocks of Q.

    Returns a dict with the block inverses, the coupling ``Aqr`` between Q and
    the remaining unknowns r = (d, s, c), the Schur complement ``S`` and its
    Cholesky status.
    """
    p, c = problem.num_joints, problem.num_cameras
    n_batch = omega.shape[0]
    nd = 2 * c
    k = nd + 1 + problem.basis.size
    proj = problem._proj
    reg = regularizer_weights(problem.basis, problem.config)

    w = omega.transpose(0, 2, 1, 3).reshape(n_batch, p, nd)              # (N,P,C*2)
    outer = np.einsum("cki,ckj->ckij", proj, proj).reshape(nd, 9)
    hq = (w @ outer).reshape(n_batch, p, 3, 3) + np.eye(3)
    hinv = _inv3_sym(hq)

    aqr = np.empty((n_batch, p, 3, k))
    aqr[..., :nd] = w[:, :, None, :] * proj.reshape(nd, 3).T[None, None]
    aqr[..., nd:] = -model.reshape(n_batch, p, 3, -1)

    arr = np.zeros((n_batch, k, k))
    dd = omega.sum(axis=2) + problem._unused[None, :, None]
    idx = np.arange(nd)
    arr[:, idx, idx] = dd.reshape(n_batch, nd)
    arr[:, nd:, nd:] = np.swapaxes(model, 1, 2) @ model + np.diag(np.concatenate([[0.0], reg]))

    t = hinv @ aqr                                                        # (N,P,3,K)
    aqr_flat = aqr.reshape(n_batch, 3 * p, k)
    schur = arr - np.swapaxes(aqr_flat, 1, 2) @ t.reshape(n_batch, 3 * p, k)
    return dict(hinv=hinv, aqr=aqr, t=t, schur=schur)


def _rhs(problem, omega):
    """Right-hand sides (b_q (N,P,3), b_r (N,K)) of the normal equations."""
    p, c = problem.num_joints, problem.num_cameras
    n_batch = omega.shape[0]
    nd = 2 * c
    wy = omega * problem._y[None]
    bq = wy.transpose(0, 2, 1, 3).reshape(n_batch, p, nd) @ problem._proj.reshape(nd, 3)
    br = np.zeros((n_batch, nd + 1 + problem.basis.size))
    br[:, :nd] = wy.sum(axis=2).reshape(n_batch, nd)
    return bq, br


def _solve_factored(fac, bq, br):
    """Solve with matrix right-hand sides: bq (N,P,3,M), br (N,K,M) -> x (N,n,M), ok."""
    n_batch, p = bq.shape[:2]
    m = bq.shape[-1]
    t = fac["t"].reshape(n_batch, 3 * p, -1)
    rhs = br - np.swapaxes(t, 1, 2) @ bq.reshape(n_batch, 3 * p, m)
    r, ok = solve_normal(fac["schur"], rhs)
    q = fac["hinv"] @ (bq - fac["aqr"] @ r[:, None])
    return np.concatenate([q.reshape(n_batch, 3 * p, m), r], axis=1), ok


def _solve(problem, omega, model):
    fac = _factor(problem, omega, model)
    bq, br = _rhs(problem, omega)
    x, ok = _solve_factored(fac, bq[..., None], br[..., None])
    return x[..., 0], ok


def _unpack(problem, x):
    p, c = problem.num_joints, problem.num_cameras
    nq, nd = 3 * p, 2 * c
    q = x[..., :nq].reshape(x.shape[:-1] + (p, 3))
    d = x[..., nq:nq + nd].reshape(x.shape[:-1] + (c, 2))
    return q, d, x[..., nq + nd], x[..., nq + nd + 1:]


def _predict(problem, q, d):
    n, p = q.shape[:2]
    c = problem.num_cameras
    proj = (q @ problem._proj.reshape(2 * c, 3).T).reshape(n, p, c, 2).transpose(0, 2, 1, 3)
    return proj + d[:, :, None, :]


def _terms(problem, x, model):
    """Data residuals (N,C,P,2), model residual energy and penalty per batch item."""
    q, d, s, c = _unpack(problem, x)
    r = (problem._y[None] - _predict(problem, q, d)) * problem._vis[None]
    v = np.concatenate([s[:, None], c], axis=1)
    model_res = q.reshape(q.shape[0], -1) - (model @ v[..., None])[..., 0]
    reg = regularizer_weights(problem.basis, problem.config)
    return r, np.sum(model_res ** 2, axis=1), np.sum(reg * c ** 2, axis=1)


def _objective(problem, r, model_energy, penalty, eps):
    lam = problem.config.lam
    if eps is None:
        data = np.sum(r ** 2, axis=(1, 2, 3))
    else:
        data = 2.0 * np.sum(huber(r, eps) * problem._vis[None], axis=(1, 2, 3))
    return lam * data + model_energy + penalty


def adaptive_epsilon(residuals, visible, floor=1e-3):
    """Default Huber threshold: 1.4826 * MAD of the visible data residuals."""
    return robust_scale(residuals, visible, floor)


def _run(problem, angles, robust_mode, epsilon=None, iterations=None):
    """Solve the warp for every angle in a batch; returns a dict of arrays."""
    config = problem.config
    angles = np.atleast_1d(np.asarray(angles, float))
    n = angles.size
    rot = rotation_y(angles)
    model = _model_matrix(problem, rot)
    lam_vis = config.lam * problem._vis

    omega = np.broadcast_to(lam_vis, (n,) + lam_vis.shape)
    x, ok = _solve(problem, omega, model)
    r, me, pen = _terms(problem, x, model)
    frob = _objective(problem, r, me, pen, None)

    weights = np.broadcast_to(problem._vis, r.shape).copy()
    if RobustMode(robust_mode) is RobustMode.FROBENIUS:
        trace = frob[:, None]
        eps = None
    else:
        if epsilon is None:
            epsilon = config.huber_epsilon
        if epsilon is None:
            valid = ok & np.isfinite(frob)
            if not valid.any():
                raise AllRotationsDegenerate("initial solve failed at every rotation")
            best = int(np.argmin(np.where(valid, frob, np.inf)))
            epsilon = adaptive_epsilon(r[best], problem._vis, config.epsilon_floor)
        eps = float(epsilon)
        k_iter = int(config.irls_iterations if iterations is None else iterations)
        trace = np.empty((n, k_iter + 1))
        trace[:, 0] = _objective(problem, r, me, pen, eps)
        for k in range(1, k_iter + 1):
            weights = huber_weight(r, eps) * problem._vis
            x_new, ok_k = _solve(problem, config.lam * weights, model)
            ok &= ok_k
            x = np.where(ok[:, None], x_new, x)
            r, me, pen = _terms(problem, x, model)
            trace[:, k] = _objective(problem, r, me, pen, eps)

    q, d, s, c = _unpack(problem, x)
    cost = np.where(ok & (s > 0), trace[:, -1], np.inf)
    return dict(angles=angles, rot=rot, model=model, x=x, q=q, d=d, s=s, c=c, r=r,
                weights=weights, trace=trace, cost=cost, ok=ok, epsilon=eps)


def _solution(problem, batch, i):
    s, c = float(batch["s"][i]), batch["c"][i]
    valid = bool(np.isfinite(batch["cost"][i]))
    v = np.concatenate([[s], c])
    model_pose = (batch["model"][i] @ v).reshape(-1, 3)
    return WarpSolution(
        angle=float(batch["angles"][i]), pose=batch["q"][i], scale=s,
        coefficients=c / s if s != 0 else np.full_like(c, np.nan), combined=c,
        offsets=batch["d"][i], residuals=batch["r"][i], weights=batch["weights"][i],
        trace=batch["trace"][i], cost=float(batch["cost"][i]), epsilon=batch["epsilon"],
        model_pose=model_pose, valid=valid,
    )


def _single_angle(problem, angle, mode, epsilon=None):
    batch = _run(problem, [angle], mode, epsilon)
    if not batch["ok"][0]:
        raise DegenerateSystem(f"singular warp system at angle {angle:.6f}")
    return _solution(problem, batch, 0)


def warp_frobenius(problem, angle):
    """Exact minimiser of the squared-error warp objective at one rotation."""
    return _single_angle(problem, angle, RobustMode.FROBENIUS)


def warp_huber(problem, angle, epsilon=None):
    """Huber warp at one rotation via ``config.irls_iterations`` reweighted solves.

    ``trace[0]`` is the Huber objective at the initial unweighted solution;
    ``trace[k]`` after the k-th reweighted solve.
    """
    return _single_angle(problem, angle, RobustMode.HUBER, epsilon)


def warp_objective(problem, angle, pose, offsets, scale, combined, epsilon=None):
    """Evaluate the warp objective at arbitrary parameters (Frobenius if ``epsilon`` is None)."""
    x = np.concatenate([np.ravel(pose), np.ravel(offsets), [scale], np.ravel(combined)])[None]
    model = _model_matrix(problem, rotation_y(np.array([angle], float)))
    r, me, pen = _terms(problem, x, model)
    return float(_objective(problem, r, me, pen, epsilon)[0])


def lift_multi(problem, grid=None):
    """Warp at every rotation of the grid and combine per ``config.rotation_mode``."""
    config = problem.config
    grid = grid or config.grid()
    batch = _run(problem, grid.angles, config.robust_mode)
    return _combine_batch(problem, batch, config.rotation_mode)


def _combine_batch(problem, batch, rotation_mode):
    config = problem.config
    noise = None
    if np.isfinite(batch["cost"]).any():
        best = int(np.argmin(batch["cost"]))
        noise = robust_scale(batch["r"][best], problem._vis, 0.0)
    weights, rho = rotation_weights(batch["cost"], rotation_mode, config.rho, noise,
                                    int(problem._vis.sum()))
    live = weights > 0
    pose = combine(weights[live], batch["q"][live])
    offsets = combine(weights[live], batch["d"][live])
    scale = float(combine(weights[live], batch["s"][live]))
    residuals = (problem._y - _predict(problem, pose[None], offsets[None])[0]) * problem._vis
    sols = [_solution(problem, batch, i) for i in range(batch["angles"].size)]
    return LiftResult(pose=pose, per_rotation=sols, mode=rotation_mode, weights=weights,
                      angles=batch["angles"], costs=batch["cost"], rho=rho, scale=scale,
                      offsets=offsets, residuals=residuals, epsilon=batch["epsilon"])


def lift_jacobian(problem, angle, epsilon=None, return_solution=False):
    """Jacobian of the warped shape w.r.t. every input 2D coordinate.

    Forward-mode differentiation through the unrolled solves: the initial
    unweighted solve, then (Huber mode) each reweighted solve with the weight
    dependence on the previous residuals included. ``epsilon`` is held fixed
    (resolved once from the unperturbed input when not given). Columns are
    ordered camera-major, then joint, then (x, y); invisible joints give zero
    columns. Returns an array of shape ``(3P, C * P * 2)``.
    """
    config = problem.config
    huber_mode = RobustMode(config.robust_mode) is RobustMode.HUBER
    sol = _single_angle(problem, angle, config.robust_mode, epsilon)
    eps = sol.epsilon
    p, c = problem.num_joints, problem.num_cameras
    nq, nd = 3 * p, 2 * c
    m = c * p * 2
    proj, vis, y, lam = problem._proj, problem._vis, problem._y, config.lam
    model = _model_matrix(problem, rotation_y(np.array([angle], float)))
    dy = np.eye(m).reshape(c, p, 2, m)

    def solve_tangent(omega, g):
        # J^T g split into the Q rows and the (d, s, c) rows, then the factored solve
        bq = np.einsum("cpkm,cki->pim", g, proj)[None]
        br = np.zeros((1, problem.num_unknowns - nq, m))
        br[0, :nd] = g.sum(axis=1).reshape(nd, m)
        fac = _factor(problem, omega[None], model)
        dx, _ = _solve_factored(fac, bq, br)
        return dx[0]

    def jdx(dx):
        dq = dx[:nq].reshape(p, 3, m)
        dd = dx[nq:nq + nd].reshape(c, 2, m)
        return np.einsum("cki,pim->cpkm", proj, dq) + dd[:, None]

    omega = lam * vis
    x, _ = _solve(problem, omega[None], model)
    dx = solve_tangent(omega, omega[..., None] * dy)
    if huber_mode:
        for _ in range(int(config.irls_iterations)):
            q, d, _, _ = _unpack(problem, x)
            r = y - _predict(problem, q, d)[0]
            dr = dy - jdx(dx)
            omega = lam * vis * huber_weight(r, eps)
            domega = (lam * vis * _huber_weight_slope(r, eps))[..., None] * dr
            x, _ = _solve(problem, omega[None], model)
            q, d, _, _ = _unpack(problem, x)
            r_new = (y - _predict(problem, q, d)[0])[..., None]
            dx = solve_tangent(omega, domega * r_new + omega[..., None] * dy)
    jac = dx[:nq]
    return (jac, sol) if return_solution else jac


def knee_margin(problem, angle, epsilon=None):
    """Smallest relative distance ``||r| - eps| / eps`` among residuals that set IRLS weights."""
    eps = _single_angle(problem, angle, RobustMode.HUBER, epsilon).epsilon
    margins = []
    for k in range(int(problem.config.irls_iterations)):
        r = _run(problem, [angle], RobustMode.HUBER, eps, iterations=k)["r"][0][problem._vis > 0]
        margins.append(np.min(np.abs(np.abs(r) - eps)) / eps)
    return float(min(margins))


def finite_difference_jacobian(problem, angle, step=1e-3, epsilon=None):
    """Central differences of the warped shape w.r.t. every visible input coordinate.

    ``epsilon`` is held fixed (resolved from the unperturbed input when
    None) so the comparison matches :func:`lift_jacobian`.
    """
    mode = problem.config.robust_mode
    if RobustMode(mode) is RobustMode.HUBER and epsilon is None:
        epsilon = _single_angle(problem, angle, mode).epsilon
    p, c = problem.num_joints, problem.num_cameras
    base = np.stack([d.joints for d in problem.detections])
    jac = np.zeros((3 * p, c * p * 2))
    col = 0
    for ci in range(c):
        for pi in range(p):
            for k in range(2):
                if problem.detections[ci].visible[pi]:
                    shapes = []
                    for sign in (1.0, -1.0):
                        moved = base.copy()
                        moved[ci, pi, k] += sign * step
                        dets = [type(d)(moved[i], d.visible, d.confidence)
                                for i, d in enumerate(problem.detections)]
                        batch = _run(problem.with_detections(dets), [angle], mode, epsilon)
                        shapes.append(batch["q"][0].ravel())
                    jac[:, col] = (shapes[0] - shapes[1]) / (2 * step)
                col += 1
    return jac


def gradient_check(problem, angle, step=1e-3, epsilon=None):
    """Compare :func:`lift_jacobian` with central differences.

    The relative error is the largest absolute entry difference divided by
    the largest absolute entry of the finite-difference Jacobian.
    """
    jac, sol = lift_jacobian(problem, angle, epsilon, return_solution=True)
    fd = finite_difference_jacobian(problem, angle, step, sol.epsilon)
    diff = float(np.max(np.abs(jac - fd)))
    scale = float(np.max(np.abs(fd)))
    out = {"angle": float(angle), "step": float(step), "max_abs_error": diff,
           "max_rel_error": diff / scale if scale > 0 else diff,
           "robust_mode": RobustMode(problem.config.robust_mode).value, "epsilon": sol.epsilon}
    if RobustMode(problem.config.robust_mode) is RobustMode.HUBER:
        out["knee_margin"] = knee_margin(problem, angle, sol.epsilon)
    return out
