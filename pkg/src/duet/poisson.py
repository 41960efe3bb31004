"""Poisson negative log-likelihood with identity link, and spotwise fitting.

Means are ``s * B @ theta``.  Log-factorial constants are dropped and
``0 * log 0`` is taken to be 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._parallel import map_rows
from .simplex import STATIONARITY_TOL, PgdSettings

SPOTWISE_MAX_ROUNDS = 100
SPOTWISE_TOL = 1e-8


def _rates(theta, B):
    # (rows, G): b_g^T theta; einsum keeps each row's sum independent of the batch
    return np.einsum("ik,gk->ig", theta, B)


def _check_domain(mu, x):
    if np.any((mu <= 0) & (x > 0)):
        raise ValueError("Poisson mean is not positive at a gene with positive count")


def _nll_rows(x, B, theta, s):
    mu = s[:, None] * _rates(theta, B)
    _check_domain(mu, x)
    logterm = np.where(x > 0, x * np.log(np.where(x > 0, mu, 1.0)), 0.0)
    return np.sum(mu - logterm, axis=1)


def _grad_rows(x, B, theta, s):
    eta = _rates(theta, B)
    _check_domain(s[:, None] * eta, x)
    w = s[:, None] - np.where(x > 0, x / np.where(x > 0, eta, 1.0), 0.0)
    return np.einsum("ig,gk->ik", w, B)


def _nll_delta_rows(x, B, theta_new, theta_old, s):
    # nll(new) - nll(old) at fixed s, free of cancellation between the totals
    eta_new = _rates(theta_new, B)
    eta_old = _rates(theta_old, B)
    _check_domain(s[:, None] * eta_new, x)
    diff = eta_new - eta_old
    pos = x > 0
    ratio = np.where(pos, diff / np.where(pos, eta_old, 1.0), 0.0)
    return np.sum(s[:, None] * diff - np.where(pos, x * np.log1p(ratio), 0.0), axis=1)


def nll_spot(x_col, B, theta, s):
    """Negative log-likelihood of one spot's counts."""
    x = np.asarray(x_col, dtype=float)[None, :]
    theta = np.asarray(theta, dtype=float)[None, :]
    return float(_nll_rows(x, np.asarray(B, dtype=float), theta, np.array([float(s)]))[0])


def grad_theta_nll(x_col, B, theta, s):
    """Gradient of :func:`nll_spot` with respect to ``theta``."""
    x = np.asarray(x_col, dtype=float)[None, :]
    theta = np.asarray(theta, dtype=float)[None, :]
    return _grad_rows(x, np.asarray(B, dtype=float), theta, np.array([float(s)]))[0]


def update_size_factor(x_col, B, theta):
    """Closed-form minimizer of :func:`nll_spot` over ``s >= 0``."""
    denom = float(np.sum(np.asarray(B, dtype=float) @ np.asarray(theta, dtype=float)))
    if not denom > 0:
        raise ZeroDivisionError("sum of b_g^T theta is zero")
    return float(np.sum(x_col)) / denom


@dataclass(frozen=True)
class SpotLoss:
    """Loss of a single spot, ``s`` held fixed."""

    spot_index: int
    x_col: np.ndarray
    B: np.ndarray
    s: float

    def value(self, theta):
        return nll_spot(self.x_col, self.B, theta, self.s)

    def grad(self, theta):
        return grad_theta_nll(self.x_col, self.B, theta, self.s)


class SpotLosses:
    """All spots' losses in one batch.

    ``X`` is spots x genes (the transpose of the expression matrix).
    """

    def __init__(self, X, B, s):
        self.X = np.ascontiguousarray(X, dtype=float)
        self.B = np.ascontiguousarray(B, dtype=float)
        self.s = np.asarray(s, dtype=float)
        self.bsum = self.B.sum(axis=0)
        self.xsum = self.X.sum(axis=1)

    @classmethod
    def from_data(cls, expr, ref, s=None):
        X = expr.counts.T.astype(float)
        if s is None:
            s = np.ones(X.shape[0])
        return cls(X, ref.values, s)

    @property
    def n(self):
        return self.X.shape[0]

    def with_s(self, s):
        out = SpotLosses.__new__(SpotLosses)
        out.X, out.B, out.bsum, out.xsum = self.X, self.B, self.bsum, self.xsum
        out.s = np.asarray(s, dtype=float)
        return out

    def spot(self, i):
        return SpotLoss(i, self.X[i], self.B, float(self.s[i]))

    def value(self, theta, idx):
        return _nll_rows(self.X[idx], self.B, theta, self.s[idx])

    def grad(self, theta, idx):
        return _grad_rows(self.X[idx], self.B, theta, self.s[idx])

    def delta(self, theta_new, theta_old, idx):
        return _nll_delta_rows(self.X[idx], self.B, theta_new, theta_old, self.s[idx])

    def total(self, theta):
        idx = np.arange(self.n)
        return float(np.sum(self.value(theta, idx)))

    def size_factors(self, theta):
        """Closed-form size-factor update for every spot."""
        denom = np.sum(theta * self.bsum, axis=1)
        if np.any(denom <= 0):
            raise ZeroDivisionError("sum of b_g^T theta is zero")
        return self.xsum / denom


def spotwise_deconvolve(
    expr,
    ref,
    *,
    theta0=None,
    pgd=PgdSettings(),
    max_rounds=SPOTWISE_MAX_ROUNDS,
    tol=SPOTWISE_TOL,
    threads=1,
):
    """Per-spot Poisson maximum likelihood (no spatial penalty).

    Alternates the closed-form size-factor update with a projected gradient
    solve for ``theta`` until the spot's objective changes by less than
    ``tol`` (relative) or ``max_rounds`` alternations have run.  Starts from
    the uniform composition.  Returns ``(theta, s)`` as arrays of shape
    ``(n, K)`` and ``(n,)``.
    """
    losses = SpotLosses.from_data(expr, ref)
    n, K = losses.n, ref.n_types
    if theta0 is None:
        theta0 = np.full((n, K), 1.0 / K)
    theta0 = np.asarray(theta0, dtype=float)

    def solve(idx):
        return _spotwise_rows(losses, theta0[idx], idx, pgd, max_rounds, tol)

    return map_rows(solve, n, threads)


def _spotwise_rows(losses, theta, idx, pgd, max_rounds, tol):
    theta = np.array(theta, dtype=float, copy=True)
    prev = np.full(idx.size, np.inf)
    active = np.arange(idx.size)
    zeros = np.zeros_like(theta)
    for _ in range(max_rounds):
        rows = idx[active]
        s_rows = losses.xsum[rows] / np.sum(theta[active] * losses.bsum, axis=1)
        # per-count scaling leaves the minimizer alone and makes the
        # stationarity tolerance comparable across spots of any depth
        w = 1.0 / np.maximum(losses.xsum[rows], 1.0)
        th = theta[active]
        solve_prox_rows(losses.X[rows], losses.B, s_rows, w, 0.0, zeros[active], th, pgd)
        theta[active] = th
        obj = _nll_rows(losses.X[rows], losses.B, th, s_rows)
        done = np.abs(prev[active] - obj) <= tol * np.maximum(1.0, np.abs(obj))
        prev[active] = obj
        active = active[~done]
        if not active.size:
            break
    s = losses.xsum[idx] / np.sum(theta * losses.bsum, axis=1)
    return theta, s


def solve_prox_rows(X, B, s, w, q, C, Theta, pgd, stat_tol=STATIONARITY_TOL):
    """Minimize ``w_i * nll_i + (q/2)||theta_i - c_i||^2`` row by row, in place.

    Returns the per-row convergence flags and iteration counts.
    """
    if Theta.shape[1] == 1:
        Theta[:] = 1.0
        return np.ones(len(Theta), dtype=bool), np.zeros(len(Theta), dtype=np.int64)
    conv, iters, status = _kernels.solve_rows(
        np.ascontiguousarray(X, dtype=float), np.ascontiguousarray(B, dtype=float),
        np.ascontiguousarray(s, dtype=float), np.ascontiguousarray(w, dtype=float),
        float(q), np.ascontiguousarray(C, dtype=float), Theta,
        pgd.max_iters, stat_tol, pgd.armijo_c, pgd.backtrack_factor, pgd.init_step,
    )
    if np.any(status == _kernels.BAD_START):
        raise ValueError("Poisson mean is not positive at a gene with positive count")
    return conv, iters
