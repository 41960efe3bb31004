"""Two-block coordinate descent, its one-step approximation, and the lambda path."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .admm import (
    AdmmConfig,
    AdmmState,
    EdgeIncidence,
    eta_bound,
    init_state,
    penalty,
    solve_theta,
)
from .model import ExpressionMatrix, FitResult, default_fuse_tol, extract_clusters
from .poisson import SpotLosses, _grad_rows, spotwise_deconvolve

LAMBDA_SEARCH_STEPS = 30


@dataclass(frozen=True)
class SolverConfig:
    outer_tol: float = 1e-4
    outer_max_iters: int = 50
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    fuse_tol: float | None = None  # None: 1e-3 * sqrt(K)

    def __post_init__(self):
        if not self.outer_tol > 0 or self.outer_max_iters < 1:
            raise ValueError("outer_tol must be positive and outer_max_iters >= 1")
        if self.fuse_tol is not None and self.fuse_tol < 0:
            raise ValueError("fuse_tol must be nonnegative")

    def resolved_fuse_tol(self, n_types):
        return default_fuse_tol(n_types) if self.fuse_tol is None else self.fuse_tol


@dataclass(frozen=True)
class LambdaGrid:
    values: tuple

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if not vals:
            raise ValueError("lambda grid is empty")
        if any(v < 0 for v in vals) or any(a <= b for a, b in zip(vals, vals[1:])):
            raise ValueError("lambda grid must be strictly decreasing and nonnegative")
        object.__setattr__(self, "values", vals)

    @property
    def n_points(self):
        return len(self.values)

    @classmethod
    def log_spaced(cls, lam_max, n_points=20, decades=4.0, include_zero=False):
        vals = np.logspace(math.log10(lam_max), math.log10(lam_max) - decades, n_points)
        vals = tuple(vals) + ((0.0,) if include_zero else ())
        return cls(vals)


class Problem:
    """Data shared by every fit on one dataset: losses, graph and incidence."""

    def __init__(self, expr, ref, graph):
        if expr.n_genes != len(ref.gene_ids) or tuple(expr.gene_ids) != tuple(ref.gene_ids):
            raise ValueError("expression and reference genes are not aligned")
        if np.any(ref.values <= 0):
            raise ValueError("reference has non-positive entries; apply a pseudocount first")
        if graph.n != expr.n_spots:
            raise ValueError("graph and expression disagree on the number of spots")
        self.expr, self.ref, self.graph = expr, ref, graph
        self.losses = SpotLosses.from_data(expr, ref)
        self.inc = EdgeIncidence.from_graph(graph)
        self.eta = eta_bound(self.inc) if self.inc.n_edges else 1.0
        self.weights = np.asarray(graph.w, dtype=float)

    @property
    def n(self):
        return self.losses.n

    def objective(self, theta, s, lam):
        """Penalized objective: mean spot NLL plus the weighted fusion penalty."""
        mean_nll = self.losses.with_s(s).total(theta) / self.n
        return mean_nll + penalty(theta, lam, self.weights, self.inc)

    def result(self, theta, s, lam, trace, converged, iterations, state, cfg, runs=()):
        clusters = extract_clusters(theta, self.graph, cfg.resolved_fuse_tol(theta.shape[1]))
        return FitResult(
            theta, s, clusters, float(lam), list(trace), bool(converged), int(iterations),
            self.expr.spot_ids, self.ref.celltype_ids, state, tuple(runs),
        )


def _as_problem(expr, ref, graph):
    return expr if isinstance(expr, Problem) else Problem(expr, ref, graph)


def _rel_change(new, old):
    return float(np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-300))


def fit(expr, ref, graph, lam, cfg=SolverConfig(), init=None, *, warm=None, pilot=None, threads=1):
    """Two-block coordinate descent for one ``lam``.

    Alternates the closed-form size-factor update with a proximal ADMM solve
    for the compositions until both relative changes drop below
    ``cfg.outer_tol``.  ``init`` is an optional ``(theta0, s0)``; ``warm`` a
    previous :class:`FitResult` whose compositions, size factors and ADMM
    internals seed this fit.  Without either, the spotwise estimate is the
    starting point (``pilot`` may supply it precomputed).
    """
    prob = _as_problem(expr, ref, graph)
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    state = None
    if warm is not None:
        theta, s = warm.theta.copy(), warm.s.copy()
        if isinstance(warm.admm_state, AdmmState):
            state = warm.admm_state.copy()
    elif init is not None:
        theta = np.array(init[0], dtype=float, copy=True)
        s = prob.losses.size_factors(theta) if init[1] is None else np.array(init[1], dtype=float)
    else:
        theta, s = pilot if pilot is not None else spotwise_deconvolve(
            prob.expr, prob.ref, threads=threads)
        theta, s = np.array(theta, dtype=float), np.array(s, dtype=float)
    if state is None:
        state = init_state(theta, prob.inc, cfg.admm.rho_init, prob.eta)

    trace = [prob.objective(theta, s, lam)]
    runs = []
    converged = False
    it = 0
    for it in range(1, cfg.outer_max_iters + 1):
        s_new = prob.losses.size_factors(theta)
        res = solve_theta(theta, s_new, lam, prob.graph, prob.losses, cfg.admm,
                          state=state, inc=prob.inc, threads=threads)
        runs.append((res.iterations, res.converged))
        theta_new = res.Theta
        obj_new = prob.objective(theta_new, s_new, lam)
        obj_keep = prob.objective(theta, s_new, lam)
        if obj_new > obj_keep:
            # an inexact ADMM solve may not improve on the current block
            theta_new, obj_new = theta, obj_keep
        state = AdmmState(theta_new, res.Omega, res.Gamma, res.rho, res.eta)
        d_theta = _rel_change(theta_new, theta)
        d_s = _rel_change(s_new, s)
        theta, s = theta_new, s_new
        trace.append(obj_new)
        if max(d_theta, d_s) < cfg.outer_tol:
            converged = True
            break
    return prob.result(theta, s, lam, trace, converged, it, state, cfg, runs)


def fit_approx(expr, ref, graph, lam, cfg=SolverConfig(), *, pilot=None, threads=1):
    """One proximal ADMM solve from the spotwise fit, size factors held there."""
    prob = _as_problem(expr, ref, graph)
    theta0, s0 = pilot if pilot is not None else spotwise_deconvolve(
        prob.expr, prob.ref, threads=threads)
    theta0 = np.array(theta0, dtype=float)
    s = prob.losses.size_factors(theta0)
    state = init_state(theta0, prob.inc, cfg.admm.rho_init, prob.eta)
    res = solve_theta(theta0, s, lam, prob.graph, prob.losses, cfg.admm,
                      state=state, inc=prob.inc, threads=threads)
    trace = [prob.objective(theta0, s, lam), prob.objective(res.Theta, s, lam)]
    final = AdmmState(res.Theta, res.Omega, res.Gamma, res.rho, res.eta)
    return prob.result(res.Theta, s, lam, trace, res.converged, 1, final, cfg,
                       [(res.iterations, res.converged)])


def pooled_fit(expr, ref):
    """Single-composition maximum likelihood with per-spot size factors.

    With one shared ``theta`` the likelihood depends on the counts only
    through their total over spots, so the shared composition is the
    spotwise estimate for the summed column.
    """
    total = np.asarray(expr.counts).sum(axis=1, keepdims=True)
    pooled = ExpressionMatrix(total, expr.gene_ids, ["pooled"], np.zeros((1, 2)))
    theta, _ = spotwise_deconvolve(pooled, ref)
    theta = np.repeat(theta, expr.n_spots, axis=0)
    s = SpotLosses.from_data(expr, ref).size_factors(theta)
    return theta, s


def fusion_bound(expr, ref, graph):
    """A lambda above which the fully fused fit is optimal.

    At the pooled fit the per-spot gradients (projected onto the simplex's
    tangent space) must be carried by an edge flow ``Gamma`` with
    ``A^T Gamma = gradient``; the fused point is optimal once every
    ``||Gamma_e|| <= lam * gamma_e``.  This uses the weighted least-squares
    flow, which is feasible, so the bound is valid but not tight.
    """
    prob = _as_problem(expr, ref, graph)
    if prob.inc.n_edges == 0:
        return 0.0
    theta, s = pooled_fit(prob.expr, prob.ref)
    g = _grad_rows(prob.losses.X, prob.losses.B, theta, s) / prob.n
    g -= g.mean(axis=1, keepdims=True)
    g -= g.mean(axis=0, keepdims=True)
    W = sparse.diags(prob.weights ** 2)
    lap = (prob.inc.Dt @ W @ prob.inc.D).tocsc()
    # the Laplacian is singular along constants; pin spot 0
    phi = np.zeros_like(g)
    phi[1:] = spsolve(lap[1:, 1:].tocsc(), g[1:]).reshape(-1, g.shape[1])
    flow = W @ (prob.inc.D @ phi)
    return float(np.max(np.linalg.norm(flow, axis=1) / prob.weights))


def find_lambda_max(expr, ref, graph, cfg=SolverConfig(), *, pilot=None, threads=1):
    """Smallest doubling of the fusion bound's starting guess that fuses all spots.

    Starts at :func:`fusion_bound` and doubles until the fit has a single
    cluster.  Returns ``(lam_max, fit_at_lam_max)``.
    """
    prob = _as_problem(expr, ref, graph)
    lam = fusion_bound(prob, None, None)
    if not lam > 0:
        lam = 1.0
    res = None
    for _ in range(LAMBDA_SEARCH_STEPS):
        res = fit(prob, None, None, lam, cfg, warm=res, pilot=pilot, threads=threads)
        if res.n_clusters == 1:
            return lam, res
        lam *= 2.0
    raise RuntimeError("no lambda in the doubling search fused every spot")


def fit_path(expr, ref, graph, grid, cfg=SolverConfig(), *, warm=None, pilot=None, threads=1):
    """Warm-started fits from the largest to the smallest lambda."""
    prob = _as_problem(expr, ref, graph)
    out = []
    prev = warm
    for lam in grid.values:
        res = fit(prob, None, None, lam, cfg, warm=prev, pilot=pilot, threads=threads)
        out.append(res)
        prev = res
    return out
