"""Batched symmetric positive (semi)definite solves with explicit degeneracy flags."""
import numpy as np

JITTER = 1e-12
PIVOT_TOL = 1e-14
SINGULAR_TOL = 1e-20


def solve_normal(a, b):
    """Solve ``a[i] x[i] = b[i]`` for a batch of normal-equation matrices.

    Returns ``(x, ok)``. Matrices whose Cholesky factorisation fails or has a
    tiny pivot get ``JITTER * trace`` added to the diagonal, unless their
    eigenvalue ratio is below ``SINGULAR_TOL`` in which case ``ok`` is False
    and the corresponding ``x`` is NaN.
    """
    a = np.array(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = a.shape[-1]
    flagged = np.zeros(a.shape[0], bool)
    try:
        chol = np.linalg.cholesky(a)
        d = np.diagonal(chol, axis1=-2, axis2=-1) ** 2
        flagged = d.min(-1) < PIVOT_TOL * d.max(-1)
    except np.linalg.LinAlgError:
        for i in range(a.shape[0]):
            try:
                ci = np.linalg.cholesky(a[i])
                di = np.diag(ci) ** 2
                flagged[i] = di.min() < PIVOT_TOL * di.max()
            except np.linalg.LinAlgError:
                flagged[i] = True
    ok = np.ones(a.shape[0], bool)
    eye = np.eye(n)
    for i in np.flatnonzero(flagged):
        ev = np.linalg.eigvalsh(a[i])
        if not np.all(np.isfinite(ev)) or ev[-1] <= 0 or ev[0] < SINGULAR_TOL * ev[-1]:
            ok[i] = False
            a[i] = eye
        else:
            a[i] += JITTER * np.trace(a[i]) * eye
    if b.ndim == a.ndim - 1:
        x = np.linalg.solve(a, b[..., None])[..., 0]
    else:
        x = np.linalg.solve(a, b)
    x[~ok] = np.nan
    return x, ok
