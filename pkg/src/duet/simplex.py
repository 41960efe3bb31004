"""Simplex projection, group soft-thresholding and projected gradient descent."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STATIONARITY_TOL = 1e-6
_MAX_BACKTRACKS = 60


@dataclass(frozen=True)
class PgdSettings:
    # tol is the relative objective change used by outer alternations
    max_iters: int = 500
    tol: float = 1e-8
    armijo_c: float = 1e-4
    backtrack_factor: float = 0.5
    init_step: float = 1.0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not self.tol > 0 or not self.init_step > 0:
            raise ValueError("tol and init_step must be positive")
        if not 0 < self.armijo_c < 1 or not 0 < self.backtrack_factor < 1:
            raise ValueError("armijo_c and backtrack_factor must lie in (0, 1)")


def project_simplex_rows(V):
    """Project every row of ``V`` onto the unit simplex.

    Sort-based threshold search; each row is handled independently so the
    result for a row does not depend on the other rows in the batch.
    """
    V = np.asarray(V, dtype=float)
    if not np.all(np.isfinite(V)):
        raise ValueError("cannot project non-finite values onto the simplex")
    K = V.shape[-1]
    U = -np.sort(-V, axis=-1)
    css = np.cumsum(U, axis=-1) - 1.0
    ks = np.arange(1, K + 1)
    cond = U - css / ks > 0
    # the condition holds on a prefix; its length picks the threshold
    rho = cond.sum(axis=-1)
    tau = np.take_along_axis(css, rho[..., None] - 1, axis=-1)[..., 0] / rho
    return np.maximum(V - tau[..., None], 0.0)


def project_simplex(v):
    """Euclidean projection of a vector onto the unit simplex."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("project_simplex expects a 1-d vector")
    return project_simplex_rows(v[None, :])[0]


def group_shrink(a, phi):
    """Proximal map of ``phi * ||.||_2``: ``max(1 - phi/||a||, 0) * a``."""
    a = np.asarray(a, dtype=float)
    if phi < 0:
        raise ValueError("phi must be nonnegative")
    return group_shrink_rows(a[None, :], np.array([phi]))[0]


def group_shrink_rows(A, phi):
    """Row-wise group soft-thresholding with per-row thresholds ``phi``.

    Rows whose norm does not exceed their threshold come back as exact zeros.
    """
    A = np.asarray(A, dtype=float)
    # hypot avoids underflow of squared tiny entries
    norms = np.hypot.reduce(A, axis=1) if A.shape[1] else np.zeros(A.shape[0])
    phi = np.broadcast_to(np.asarray(phi, dtype=float), norms.shape)
    scale = np.zeros_like(norms)
    keep = norms > phi
    scale[keep] = 1.0 - phi[keep] / norms[keep]
    out = A * scale[:, None]
    out[~keep] = 0.0
    return out


def pgd_rows(value, grad, X0, cfg=PgdSettings(), stat_tol=STATIONARITY_TOL, delta=None):
    """Minimize a row-separable objective over simplex-constrained rows.

    ``value(rows, idx)`` returns one objective value per row, where ``rows``
    holds candidate values for the rows numbered ``idx``; ``grad(rows, idx)``
    returns the matching gradient rows.  Each row runs its own projected
    gradient iteration with a Barzilai-Borwein trial step and Armijo backtracking along the projection
    arc, and is frozen once its projected-gradient residual drops to
    ``stat_tol`` or no Armijo step can decrease it any further.  Rows never
    interact, so a row's result is independent of
    which other rows share the batch.

    ``delta(new_rows, old_rows, idx)``, when given, returns
    ``value(new) - value(old)`` computed without cancellation; the Armijo
    test then stays meaningful when the decrease is far below the rounding
    error of the objective itself.

    Returns ``(X, converged, iterations)`` with a per-row convergence flag.
    """
    X = np.array(X0, dtype=float, copy=True)
    n, K = X.shape
    converged = np.zeros(n, dtype=bool)
    if K == 1:
        X[:] = 1.0
        converged[:] = True
        return X, converged, 0

    step = np.full(n, cfg.init_step)
    active = np.arange(n)
    f = value(X, active)
    g = grad(X, active)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("gradient is not finite at a feasible point")

    it = 0
    while active.size and it < cfg.max_iters:
        x = X[active]
        res = np.linalg.norm(x - project_simplex_rows(x - g), axis=1)
        done = res <= stat_tol
        if done.any():
            converged[active[done]] = True
            keep = ~done
            active, x, f, g, step = active[keep], x[keep], f[keep], g[keep], step[keep]
            if not active.size:
                break
        it += 1

        # backtracking on the rows that have not yet met the Armijo condition
        x_new = np.empty_like(x)
        f_new = np.empty_like(f)
        pending = np.arange(active.size)
        for _ in range(_MAX_BACKTRACKS):
            trial = project_simplex_rows(x[pending] - step[pending, None] * g[pending])
            ft = value(trial, active[pending])
            d = trial - x[pending]
            if delta is None:
                df = ft - f[pending]
            else:
                df = delta(trial, x[pending], active[pending])
            # 1^T d = 0 on the simplex; the centred gradient keeps the common
            # component of g from swamping the predicted decrease in rounding
            gc = g[pending] - g[pending].mean(axis=1, keepdims=True)
            ok = df <= cfg.armijo_c * np.sum(gc * d, axis=1)
            x_new[pending[ok]] = trial[ok]
            f_new[pending[ok]] = ft[ok]
            pending = pending[~ok]
            if not pending.size:
                break
            step[pending] *= cfg.backtrack_factor
        stalled = np.zeros(active.size, dtype=bool)
        if pending.size:
            # no decrease is representable: the row is at machine precision
            x_new[pending] = x[pending]
            f_new[pending] = f[pending]
            stalled[pending] = True

        X[active] = x_new
        g_new = grad(x_new, active)
        if not np.all(np.isfinite(g_new)):
            raise FloatingPointError("gradient is not finite at a feasible point")

        sdiff = x_new - x
        ydiff = g_new - g
        sy = np.sum(sdiff * ydiff, axis=1)
        ss = np.sum(sdiff * sdiff, axis=1)
        stalled |= ss == 0
        bb = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), step / cfg.backtrack_factor)
        step = np.clip(bb, 1e-12, 1e12)

        if stalled.any():
            converged[active[stalled]] = True
            keep = ~stalled
            active, f_new, g_new, step = active[keep], f_new[keep], g_new[keep], step[keep]
        f, g = f_new, g_new
    return X, converged, it


def pgd_minimize_simplex(f, grad_f, x0, cfg=PgdSettings()):
    """Projected gradient descent for a smooth convex ``f`` over the simplex.

    Returns ``(x, converged)``.
    """
    x0 = np.asarray(x0, dtype=float)
    X, conv, _ = pgd_rows(
        lambda X, idx: np.array([f(X[0])]),
        lambda X, idx: np.asarray(grad_f(X[0]), dtype=float)[None, :],
        x0[None, :],
        cfg,
    )
    return X[0], bool(conv[0])
