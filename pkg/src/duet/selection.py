"""Tuning-parameter selection by Poisson data thinning and by BIC."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .model import ExpressionMatrix
from .poisson import SpotLosses
from .solver import LambdaGrid, Problem, SolverConfig, find_lambda_max, fit, fit_path

REPORT_HEADER = ("lambda", "n_clusters", "train_nll", "test_loglik", "bic")


@dataclass(frozen=True)
class ThinnedPair:
    train: ExpressionMatrix
    test: ExpressionMatrix
    epsilon: float
    seed: int


def thin_poisson(expr, epsilon=0.5, seed=0):
    """Binomial split ``train ~ Bin(x, epsilon)``, ``test = x - train``.

    The draw for an entry depends only on ``seed`` and the matrix shape, so
    it is reproducible and does not depend on how work is scheduled.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    counts = np.asarray(expr.counts)
    if np.any(counts != np.round(counts)) or np.any(counts < 0):
        raise ValueError("thinning needs nonnegative integer counts")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    train = rng.binomial(counts.astype(np.int64), epsilon)
    test = counts - train
    return ThinnedPair(expr.with_counts(train), expr.with_counts(test), float(epsilon), seed)


def poisson_loglik(counts, mean):
    """Full Poisson log-likelihood (with the log-factorial term)."""
    x = np.asarray(counts, dtype=float)
    mu = np.asarray(mean, dtype=float)
    if np.any((mu <= 0) & (x > 0)):
        return -math.inf
    logterm = np.where(x > 0, x * np.log(np.where(x > 0, mu, 1.0)), 0.0)
    return float(np.sum(logterm - mu - gammaln(x + 1.0)))


def heldout_loglik(result, test, ref, epsilon):
    """Log-likelihood of held-out counts under the training fit.

    A fit on the training part estimates ``epsilon * s``; the test part has
    mean ``(1 - epsilon) * s * b_g^T theta``, hence the rescaling.
    """
    rates = result.theta @ np.asarray(ref.values).T
    mean = ((1.0 - epsilon) / epsilon) * result.s[:, None] * rates
    return poisson_loglik(np.asarray(test.counts).T, mean)


def total_nll(result, expr, ref):
    return SpotLosses.from_data(expr, ref, result.s).total(result.theta)


def bic(result, expr, ref):
    """``2 * total NLL + (K - 1) * (clusters + n) * log n``; smaller is better."""
    n = expr.n_spots
    K = ref.n_types
    return 2.0 * total_nll(result, expr, ref) + (K - 1) * (result.n_clusters + n) * math.log(n)


def select_lambda_bic(path, expr, ref):
    """Lambda of the path entry with the smallest BIC; ties go to the larger lambda."""
    if not path:
        raise ValueError("empty path")
    scores = [bic(r, expr, ref) for r in path]
    best = min(scores)
    return max(r.lam for r, b in zip(path, scores) if b == best)


@dataclass
class SelectionReport:
    method: str
    best_lambda: float
    rows: list  # (lambda, n_clusters, train_nll, test_loglik, bic)

    def write(self, path):
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(REPORT_HEADER)
            for lam, c, nll, ll, b in self.rows:
                out.writerow([repr(lam), c, repr(nll), repr(ll), repr(b)])


def select_lambda_thinning(expr, ref, graph, grid, cfg=SolverConfig(), epsilon=0.5, seed=0,
                           *, threads=1):
    """Fit the path on the training part; pick the best held-out log-likelihood.

    Returns ``(best_lambda, report, path)``; ties go to the larger lambda.
    """
    pair = thin_poisson(expr, epsilon, seed)
    prob = Problem(pair.train, ref, graph)
    path = fit_path(prob, None, None, grid, cfg, threads=threads)
    rows = []
    for r in path:
        ll = heldout_loglik(r, pair.test, ref, epsilon)
        rows.append((r.lam, r.n_clusters, total_nll(r, pair.train, ref), ll, bic(r, pair.train, ref)))
    best = max(row[3] for row in rows)
    lam = max(row[0] for row in rows if row[3] == best)
    return lam, SelectionReport("thinning", lam, rows), path


def bic_report(path, expr, ref):
    rows = [(r.lam, r.n_clusters, total_nll(r, expr, ref), math.nan, bic(r, expr, ref))
            for r in path]
    return SelectionReport("bic", select_lambda_bic(path, expr, ref), rows)


def tune(expr, ref, graph, method="bic", cfg=SolverConfig(), *, n_points=20, decades=4.0,
         epsilon=0.5, seed=0, threads=1):
    """Lambda search, path and selection in one call; returns ``(best_fit, report)``.

    With thinning the grid and path live on the training part, whose
    likelihood is about ``epsilon`` times the full one, so the chosen lambda
    is refit on the full data as ``lambda / epsilon``.
    """
    if method == "bic":
        prob = Problem(expr, ref, graph)
        lam_max, start = find_lambda_max(prob, None, None, cfg, threads=threads)
        grid = LambdaGrid.log_spaced(lam_max, n_points, decades)
        path = fit_path(prob, None, None, grid, cfg, warm=start, threads=threads)
        report = bic_report(path, expr, ref)
        best = next(r for r in path if r.lam == report.best_lambda)
        return best, report
    if method == "thinning":
        pair = thin_poisson(expr, epsilon, seed)
        lam_max, _ = find_lambda_max(Problem(pair.train, ref, graph), None, None, cfg,
                                     threads=threads)
        grid = LambdaGrid.log_spaced(lam_max, n_points, decades)
        lam, report, _ = select_lambda_thinning(expr, ref, graph, grid, cfg, epsilon, seed,
                                                threads=threads)
        return fit(Problem(expr, ref, graph), None, None, lam / epsilon, cfg,
                   threads=threads), report
    raise ValueError(f"unknown selection method: {method}")
