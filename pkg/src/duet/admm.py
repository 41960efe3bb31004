"""Proximal ADMM for the composition block.

Solves, for fixed size factors,

    min_Theta  (1/n) sum_i nll_i(theta_i)  +  lam * sum_(i,j) gamma_ij ||theta_i - theta_j||
    s.t. every row of Theta on the unit simplex

through the split ``Omega = A Theta`` (one row per edge).  The multipliers
``Gamma`` are stored unscaled, so changing ``rho`` needs no rescaling.  The
Theta step minimizes a quadratic majorizer of the augmented Lagrangian,
which separates into one small simplex-constrained problem per spot.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import eigsh

from ._parallel import map_rows
from .poisson import solve_prox_rows
from .simplex import PgdSettings, group_shrink_rows

RHO_MIN, RHO_MAX = 1e-6, 1e6
ETA_INFLATION = 1.01
DENSE_EIG_MAX = 600


@dataclass(frozen=True)
class AdmmConfig:
    rho_init: float = 1.0
    tau: float = 2.0
    mu: float = 10.0
    eps_abs: float = 1e-6
    eps_rel: float = 1e-4
    max_iters: int = 5000
    pgd: PgdSettings = field(default_factory=PgdSettings)

    def __post_init__(self):
        if not self.rho_init > 0 or not self.eps_abs > 0 or not self.eps_rel > 0:
            raise ValueError("rho_init, eps_abs and eps_rel must be positive")
        if not self.tau > 1 or not self.mu > 1:
            raise ValueError("tau and mu must exceed 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


class EdgeIncidence:
    """The map ``Theta -> (theta_i - theta_j)`` over the graph's edges."""

    def __init__(self, i, j, n):
        self.i = np.asarray(i, dtype=np.int64)
        self.j = np.asarray(j, dtype=np.int64)
        self.n = int(n)
        E = self.i.size
        rows = np.repeat(np.arange(E), 2)
        cols = np.column_stack([self.i, self.j]).ravel()
        vals = np.tile([1.0, -1.0], E)
        self.D = sparse.csr_matrix((vals, (rows, cols)), shape=(E, self.n))
        self.Dt = self.D.T.tocsr()

    @classmethod
    def from_graph(cls, graph):
        return cls(graph.i, graph.j, graph.n)

    @property
    def n_edges(self):
        return self.i.size


def incidence_apply(inc, Theta):
    return np.asarray(inc.D @ Theta)


def incidence_adjoint(inc, M):
    return np.asarray(inc.Dt @ M)


def eta_bound(inc, tol=1e-10):
    """Inflated largest eigenvalue of ``A^T A`` (the unweighted graph Laplacian).

    Small graphs use a dense eigensolve and larger ones Lanczos from a fixed
    start vector.  Plain power iteration can stall near a lower eigenvalue
    when the top two are close, and an ``eta`` below the true maximum makes
    the linearized Theta step diverge.
    """
    if inc.n_edges < 1:
        raise ValueError("eta_bound needs at least one edge")
    L = (inc.Dt @ inc.D).tocsr()
    if inc.n <= DENSE_EIG_MAX:
        top = float(np.linalg.eigvalsh(L.toarray())[-1])
    else:
        v0 = np.cos(np.arange(inc.n) * 1.618033988749895 + 0.5)
        top = float(eigsh(L.astype(float), k=1, which="LA", tol=tol, v0=v0,
                          return_eigenvectors=False)[0])
    return ETA_INFLATION * top


@dataclass
class AdmmState:
    Theta: np.ndarray
    Omega: np.ndarray
    Gamma: np.ndarray
    rho: float
    eta: float
    iteration: int = 0

    def copy(self):
        return AdmmState(
            self.Theta.copy(), self.Omega.copy(), self.Gamma.copy(),
            self.rho, self.eta, self.iteration,
        )


def init_state(Theta0, inc, rho, eta=None):
    """Consistent start: ``Omega = A Theta0`` and zero multipliers."""
    Theta0 = np.array(Theta0, dtype=float, copy=True)
    Omega = incidence_apply(inc, Theta0)
    eta = eta_bound(inc) if eta is None and inc.n_edges else (eta or 1.0)
    return AdmmState(Theta0, Omega, np.zeros_like(Omega), float(rho), float(eta))


def prox_center(state, inc):
    """``r = A^T(rho Omega - rho A Theta + Gamma)`` and the center ``Theta + r/(rho eta)``."""
    ATheta = incidence_apply(inc, state.Theta)
    r = incidence_adjoint(inc, state.rho * state.Omega - state.rho * ATheta + state.Gamma)
    return r, state.Theta + r / (state.rho * state.eta)


def theta_block_update(state, losses, inc, cfg=AdmmConfig(), threads=1):
    """Minimize the separable majorizer; returns the new Theta."""
    _, center = prox_center(state, inc)
    n = losses.n
    q = state.rho * state.eta
    w = np.full(n, 1.0 / n)

    def solve(idx):
        th = state.Theta[idx].copy()
        solve_prox_rows(losses.X[idx], losses.B, losses.s[idx], w[idx], q, center[idx], th, cfg.pgd)
        return th

    return map_rows(solve, n, threads)


def omega_update(Theta, Gamma, rho, lam, weights, inc):
    V = incidence_apply(inc, Theta) - Gamma / rho
    return group_shrink_rows(V, lam * np.asarray(weights, dtype=float) / rho)


def residuals(prev, state, inc, cfg=AdmmConfig()):
    """Primal/dual residual norms and their absolute-plus-relative tolerances.

    ``prev`` is the state one iteration earlier.  The dual residual carries
    the linearization term ``(eta I - A^T A)(Theta - Theta_prev)`` of the
    proximal Theta step next to the usual ``A^T(Omega - Omega_prev)``.
    """
    ATheta = incidence_apply(inc, state.Theta)
    E, K = state.Omega.shape
    n = state.Theta.shape[0]
    primal = np.linalg.norm(ATheta - state.Omega)
    dTheta = state.Theta - prev.Theta
    lin = state.eta * dTheta - incidence_adjoint(inc, incidence_apply(inc, dTheta))
    dual = state.rho * np.linalg.norm(incidence_adjoint(inc, state.Omega - prev.Omega) + lin)
    eps_pri = np.sqrt(E * K) * cfg.eps_abs + cfg.eps_rel * max(
        np.linalg.norm(ATheta), np.linalg.norm(state.Omega)
    )
    eps_dual = np.sqrt(n * K) * cfg.eps_abs + cfg.eps_rel * np.linalg.norm(
        incidence_adjoint(inc, state.Gamma)
    )
    return float(primal), float(dual), float(eps_pri), float(eps_dual)


def adapt_rho(rho, primal_ratio, dual_ratio, tau=2.0, mu=10.0):
    if primal_ratio >= mu * dual_ratio and primal_ratio > 0:
        rho *= tau
    elif dual_ratio >= mu * primal_ratio and dual_ratio > 0:
        rho /= tau
    return float(min(max(rho, RHO_MIN), RHO_MAX))


def penalty(Theta, lam, weights, inc):
    diffs = incidence_apply(inc, Theta)
    return lam * float(np.sum(np.asarray(weights) * np.sqrt(np.sum(diffs * diffs, axis=1))))


def penalized_objective(Theta, losses, lam, weights, inc):
    """``(1/n) sum nll + lam * sum gamma ||theta_i - theta_j||`` at fixed size factors."""
    return losses.total(Theta) / losses.n + penalty(Theta, lam, weights, inc)


def augmented_lagrangian(Theta, state, losses, lam, weights, inc):
    """Augmented Lagrangian at ``Theta`` with Omega, Gamma, rho taken from ``state``."""
    diff = state.Omega - incidence_apply(inc, Theta)
    norms = np.sqrt(np.sum(state.Omega ** 2, axis=1))
    return (
        losses.total(Theta) / losses.n
        + lam * float(np.sum(weights * norms))
        + float(np.sum(state.Gamma * diff))
        + 0.5 * state.rho * float(np.sum(diff * diff))
    )


def majorizer(Theta, state, losses, lam, weights, inc):
    """Quadratic surrogate of :func:`augmented_lagrangian` anchored at ``state.Theta``."""
    r, center = prox_center(state, inc)
    diff = state.Omega - incidence_apply(inc, state.Theta)
    norms = np.sqrt(np.sum(state.Omega ** 2, axis=1))
    const = (
        lam * float(np.sum(weights * norms))
        + 0.5 * state.rho * float(np.sum(diff * diff))
        + float(np.sum(state.Gamma * diff))
        - float(np.sum(r * r)) / (2.0 * state.rho * state.eta)
    )
    dev = Theta - center
    return (
        losses.total(Theta) / losses.n
        + 0.5 * state.rho * state.eta * float(np.sum(dev * dev))
        + const
    )


@dataclass
class AdmmResult:
    Theta: np.ndarray
    Omega: np.ndarray
    Gamma: np.ndarray
    rho: float
    eta: float
    converged: bool
    iterations: int


TRACE_HEADER = ("iter", "objective", "primal", "dual", "rho", "n_fused_edges")


def solve_theta(Theta0, s, lam, graph, losses, cfg=AdmmConfig(), *, state=None,
                inc=None, threads=1, trace=None):
    """Run the proximal ADMM from ``Theta0`` (or a warm ``state``).

    ``losses`` supplies counts and reference; its size factors are replaced
    by ``s``.  ``trace``, if given, is a list that receives one tuple per
    iteration in :data:`TRACE_HEADER` order.  Reaching ``max_iters`` is
    reported through ``converged`` rather than raised.
    """
    losses = losses.with_s(s)
    inc = inc or EdgeIncidence.from_graph(graph)
    weights = np.asarray(graph.w, dtype=float)
    if state is None:
        state = init_state(Theta0, inc, cfg.rho_init)
    else:
        state = state.copy()
        state.Theta = np.array(Theta0, dtype=float, copy=True)
        state.iteration = 0

    if inc.n_edges == 0:
        Theta = theta_block_update(state, losses, inc, cfg, threads)
        return AdmmResult(Theta, state.Omega, state.Gamma, state.rho, state.eta, True, 1)

    converged = False
    for it in range(1, cfg.max_iters + 1):
        Theta = theta_block_update(state, losses, inc, cfg, threads)
        prev = state
        Omega = omega_update(Theta, state.Gamma, state.rho, lam, weights, inc)
        ATheta = incidence_apply(inc, Theta)
        Gamma = state.Gamma + state.rho * (Omega - ATheta)
        state = AdmmState(Theta, Omega, Gamma, state.rho, state.eta, it)
        primal, dual, eps_pri, eps_dual = residuals(prev, state, inc, cfg)
        if trace is not None:
            fused = int(np.sum(~np.any(Omega != 0, axis=1)))
            obj = penalized_objective(Theta, losses, lam, weights, inc)
            trace.append((it, obj, primal, dual, state.rho, fused))
        if primal <= eps_pri and dual <= eps_dual:
            converged = True
            break
        state.rho = adapt_rho(state.rho, primal / eps_pri, dual / eps_dual, cfg.tau, cfg.mu)
    return AdmmResult(state.Theta, state.Omega, state.Gamma, state.rho, state.eta,
                      converged, state.iteration)


def write_trace(rows, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(TRACE_HEADER)
        for row in rows:
            out.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), repr(row[4]), row[5]])
