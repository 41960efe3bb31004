"""Clustering and estimation-error metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

METRIC_HEADER = ("method", "scenario", "seed", "ari", "frob_sq", "max_row")


def _pairs(counts):
    return sum(int(c) * (int(c) - 1) // 2 for c in np.asarray(counts).ravel())


def adjusted_rand_index(labels_a, labels_b):
    """Pair-counting adjusted Rand index from the contingency table.

    Pair counts are exact integers; only the final ratio is a float.  When the
    expected and maximal index coincide (both partitions trivial) the score
    is 1.
    """
    a = np.asarray(labels_a)
    b = np.asarray(labels_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("label vectors must be 1-d and of equal length")
    n = a.size
    if n < 2:
        raise ValueError("ARI needs at least two items")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1), dtype=np.int64)
    np.add.at(table, (ai, bi), 1)
    index = _pairs(table)
    sa = _pairs(table.sum(axis=1))
    sb = _pairs(table.sum(axis=0))
    total = n * (n - 1) // 2
    # (index - E) / (max - E) with E = sa*sb/total, scaled by 2*total so the
    # arithmetic stays in exact (unbounded) integers until the final division
    num = 2 * (index * total - sa * sb)
    den = (sa + sb) * total - 2 * sa * sb
    if den == 0:
        return 1.0
    return num / den


def frobenius_error(theta_hat, theta_star):
    """Squared Frobenius norm of the difference."""
    a, b = np.asarray(theta_hat, dtype=float), np.asarray(theta_star, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum((a - b) ** 2))


def max_row_error(theta_hat, theta_star):
    """Largest row-wise Euclidean error (rows are aligned, not matched)."""
    a, b = np.asarray(theta_hat, dtype=float), np.asarray(theta_star, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.max(np.linalg.norm(a - b, axis=1)))


def dominant_type_labels(theta):
    """1-based argmax labels; ties go to the lowest type index."""
    return np.argmax(np.asarray(theta), axis=1) + 1


@dataclass(frozen=True)
class MetricReport:
    ari: float
    frob_sq_error: float
    max_row_error: float


def evaluate(theta_hat, labels_hat, theta_star, labels_star):
    return MetricReport(
        adjusted_rand_index(labels_hat, labels_star),
        frobenius_error(theta_hat, theta_star),
        max_row_error(theta_hat, theta_star),
    )


def write_metrics(rows, path):
    """``rows``: iterables of (method, scenario, seed, MetricReport)."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(METRIC_HEADER)
        for method, scenario, seed, rep in rows:
            out.writerow([method, scenario, seed, repr(rep.ari),
                          repr(rep.frob_sq_error), repr(rep.max_row_error)])
