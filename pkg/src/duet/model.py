"""Domain types, input validation and cluster extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .simplex import project_simplex_rows

DEFAULT_PSEUDOCOUNT = 1e-4
DEFAULT_MIN_SPOT_COUNT = 100


def _as_labels(ids, n, name):
    ids = [str(v) for v in ids]
    if len(ids) != n:
        raise ValueError(f"{name}: expected {n} labels, got {len(ids)}")
    if len(set(ids)) != n:
        raise ValueError(f"{name}: labels must be unique")
    return tuple(ids)


@dataclass(frozen=True)
class ExpressionMatrix:
    """UMI counts (genes x spots) with spot coordinates."""

    counts: np.ndarray
    gene_ids: tuple
    spot_ids: tuple
    coords: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 2 or counts.shape[0] < 1 or counts.shape[1] < 1:
            raise ValueError("counts must be a non-empty 2-d array")
        if not np.all(np.isfinite(counts)) or np.any(counts < 0):
            raise ValueError("counts must be finite and nonnegative")
        if np.any(counts != np.round(counts)):
            raise ValueError("counts must be integers")
        counts = counts.astype(np.int64)
        G, n = counts.shape
        coords = np.asarray(self.coords, dtype=float)
        if coords.shape != (n, 2):
            raise ValueError(f"coords must have shape ({n}, 2), got {coords.shape}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coords must be finite")
        if len(np.unique(coords, axis=0)) != n:
            raise ValueError("two spots share identical coordinates")
        counts.flags.writeable = False
        coords.flags.writeable = False
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "gene_ids", _as_labels(self.gene_ids, G, "gene_ids"))
        object.__setattr__(self, "spot_ids", _as_labels(self.spot_ids, n, "spot_ids"))

    @property
    def n_genes(self):
        return self.counts.shape[0]

    @property
    def n_spots(self):
        return self.counts.shape[1]

    def subset(self, genes=None, spots=None):
        """Select genes and/or spots by integer index."""
        gi = np.arange(self.n_genes) if genes is None else np.asarray(genes, dtype=int)
        si = np.arange(self.n_spots) if spots is None else np.asarray(spots, dtype=int)
        return ExpressionMatrix(
            self.counts[np.ix_(gi, si)],
            [self.gene_ids[g] for g in gi],
            [self.spot_ids[s] for s in si],
            self.coords[si],
        )

    def with_counts(self, counts):
        return ExpressionMatrix(counts, self.gene_ids, self.spot_ids, self.coords)


@dataclass(frozen=True)
class ReferenceMatrix:
    """Mean single-cell expression, genes x cell types."""

    values: np.ndarray
    gene_ids: tuple
    celltype_ids: tuple

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("reference must be a non-empty 2-d array")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ValueError("reference entries must be finite and nonnegative")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)
        G, K = values.shape
        object.__setattr__(self, "gene_ids", _as_labels(self.gene_ids, G, "gene_ids"))
        object.__setattr__(
            self, "celltype_ids", _as_labels(self.celltype_ids, K, "celltype_ids")
        )

    @property
    def n_types(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class ClusterAssignment:
    labels: np.ndarray  # 1-based
    centroids: np.ndarray  # C x K

    @property
    def n_clusters(self):
        return self.centroids.shape[0]


@dataclass
class FitResult:
    theta: np.ndarray
    s: np.ndarray
    clusters: ClusterAssignment
    lam: float
    objective_trace: list
    converged: bool
    iterations: int
    spot_ids: tuple = ()
    celltype_ids: tuple = ()
    # ADMM internals (omega, gamma, rho) carried along a warm-started path
    admm_state: object = field(default=None, repr=False, compare=False)
    # (iterations, converged) of every inner ADMM solve
    admm_runs: tuple = field(default=(), repr=False, compare=False)

    @property
    def n_clusters(self):
        return self.clusters.n_clusters

    @property
    def objective(self):
        return self.objective_trace[-1]


def validate_inputs(expr, ref, min_spot_count=DEFAULT_MIN_SPOT_COUNT):
    """Align genes between ``expr`` and ``ref`` and apply spot/gene QC.

    Genes are intersected (in the order they appear in ``ref``), genes with
    no counts are dropped, and spots whose total count falls below
    ``min_spot_count`` (or is zero) are dropped.  Returns the aligned
    ``(expr, ref)`` pair.
    """
    ref_pos = {g: k for k, g in enumerate(ref.gene_ids)}
    expr_pos = {g: k for k, g in enumerate(expr.gene_ids)}
    shared = [g for g in ref.gene_ids if g in expr_pos]
    if not shared:
        raise ValueError("expression and reference share no genes")

    eg = np.array([expr_pos[g] for g in shared])
    counts = expr.counts[eg]
    totals = counts.sum(axis=0)
    keep_spots = np.flatnonzero((totals > 0) & (totals >= min_spot_count))
    if keep_spots.size == 0:
        raise ValueError("no spots survive quality control")
    keep_genes = np.flatnonzero(counts[:, keep_spots].sum(axis=1) > 0)
    if keep_genes.size == 0:
        raise ValueError("no genes with nonzero counts survive quality control")

    genes = [shared[g] for g in keep_genes]
    out_expr = expr.subset(genes=eg[keep_genes], spots=keep_spots)
    rg = np.array([ref_pos[g] for g in genes])
    out_ref = ReferenceMatrix(ref.values[rg], genes, ref.celltype_ids)
    return out_expr, out_ref


def apply_pseudocount(ref, eps=DEFAULT_PSEUDOCOUNT):
    """Replace zero entries of the reference by ``eps``."""
    if not eps > 0:
        raise ValueError("pseudocount must be positive")
    values = np.where(ref.values == 0, eps, ref.values)
    return ReferenceMatrix(values, ref.gene_ids, ref.celltype_ids)


def default_fuse_tol(n_types):
    return 1e-3 * np.sqrt(n_types)


def extract_clusters(theta, graph, fuse_tol):
    """Group spots whose penalized edges have (near-)identical compositions.

    An edge of ``graph`` is fused when the Euclidean distance between the
    two rows of ``theta`` is at most ``fuse_tol``; clusters are the connected
    components of the fused edges.  Labels are 1-based and numbered by first
    appearance in spot order.  Each centroid is the member mean projected
    back onto the simplex.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[0]
    i, j = graph.i, graph.j
    if i.size:
        dist = np.linalg.norm(theta[i] - theta[j], axis=1)
        fused = dist <= fuse_tol
    else:
        fused = np.zeros(0, dtype=bool)
    adj = coo_matrix(
        (np.ones(int(fused.sum())), (i[fused], j[fused])), shape=(n, n)
    )
    _, comp = connected_components(adj, directed=False)
    _, first = np.unique(comp, return_index=True)
    order = np.argsort(first, kind="stable")
    relabel = np.empty(order.size, dtype=int)
    relabel[order] = np.arange(order.size)
    labels = relabel[comp]

    C = order.size
    sums = np.zeros((C, theta.shape[1]))
    np.add.at(sums, labels, theta)
    sizes = np.bincount(labels, minlength=C)
    centroids = project_simplex_rows(sums / sizes[:, None])
    return ClusterAssignment(labels + 1, centroids)
