"""Spatially informed fusion weights.

Pipeline: spotwise pilot compositions -> distance-threshold adjacency ->
neighbour smoothing of the pilots -> adaptive bandwidths -> Gaussian kernel
on adjacent pairs -> per-node pruning, spanning-tree reconnection and a
weight floor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .poisson import spotwise_deconvolve

SIGMA_FLOOR = 1e-8


@dataclass(frozen=True)
class WeightConfig:
    k_star: int = 4
    k_dstar: int = 4
    prune_pct: float = 30.0
    floor_frac: float = 1e-3
    adjacency_factor: float = 1.2

    def __post_init__(self):
        if self.k_star < 1 or self.k_dstar < 1:
            raise ValueError("k_star and k_dstar must be >= 1")
        if not 0 <= self.prune_pct <= 100:
            raise ValueError("prune_pct must lie in [0, 100]")
        if not self.floor_frac > 0 or not self.adjacency_factor > 0:
            raise ValueError("floor_frac and adjacency_factor must be positive")


@dataclass(frozen=True)
class FusionGraph:
    """Undirected weighted graph stored once per pair (``i < j``)."""

    i: np.ndarray
    j: np.ndarray
    w: np.ndarray
    n: int

    def __post_init__(self):
        i = np.asarray(self.i, dtype=np.int64)
        j = np.asarray(self.j, dtype=np.int64)
        w = np.asarray(self.w, dtype=float)
        if not (i.shape == j.shape == w.shape):
            raise ValueError("edge arrays must have equal length")
        if i.size and (np.any(i >= j) or i.min() < 0 or j.max() >= self.n):
            raise ValueError("edges must satisfy 0 <= i < j < n")
        if np.any(w <= 0):
            raise ValueError("edge weights must be positive")
        order = np.lexsort((j, i))
        for name, arr in (("i", i[order]), ("j", j[order]), ("w", w[order])):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)

    @property
    def n_edges(self):
        return self.i.size

    def is_connected(self):
        return n_components(self.n, self.i, self.j) == 1

    def degrees(self):
        return np.bincount(np.concatenate([self.i, self.j]), minlength=self.n)

    def permuted(self, perm):
        """Relabel spots: old spot ``perm[k]`` becomes spot ``k``."""
        inv = np.empty(self.n, dtype=np.int64)
        inv[np.asarray(perm)] = np.arange(self.n)
        a, b = inv[self.i], inv[self.j]
        return FusionGraph(np.minimum(a, b), np.maximum(a, b), self.w, self.n)


def n_components(n, i, j):
    adj = coo_matrix((np.ones(len(i)), (i, j)), shape=(n, n))
    return connected_components(adj, directed=False)[0]


def build_adjacency(coords, adjacency_factor=1.2):
    """Pairs of spots closer than ``adjacency_factor`` x the median
    nearest-neighbour distance.  Returns ``(i, j)`` arrays with ``i < j``.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.shape[0] < 2:
        raise ValueError("adjacency needs at least two spots")
    tree = cKDTree(coords)
    d, _ = tree.query(coords, k=2)
    nn = d[:, 1]
    scale = np.median(nn)
    if not scale > 0:
        raise ValueError("spot coordinates are coincident")
    pairs = tree.query_pairs(adjacency_factor * scale * (1 + 1e-9), output_type="ndarray")
    pairs = np.sort(pairs, axis=1)
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))]
    return pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)


def _neighbours(n, i, j):
    nbrs = [[] for _ in range(n)]
    for a, b in zip(i.tolist(), j.tolist()):
        nbrs[a].append(b)
        nbrs[b].append(a)
    return [np.array(sorted(v), dtype=np.int64) for v in nbrs]


def _nearest(theta, k, nbrs_k):
    # neighbours ordered by composition distance, ties to the lower index
    d = np.linalg.norm(theta[nbrs_k] - theta[k], axis=1)
    order = np.lexsort((nbrs_k, d))
    return nbrs_k[order], d[order]


def pilot_smooth(pilot, adjacency, k_star):
    """Average of the ``k_star`` adjacent pilots closest in composition.

    Spot ``i`` itself is not included.  An isolated spot keeps its pilot.
    """
    pilot = np.asarray(pilot, dtype=float)
    nbrs = _neighbours(pilot.shape[0], *adjacency)
    out = pilot.copy()
    for k, nb in enumerate(nbrs):
        if nb.size:
            sel, _ = _nearest(pilot, k, nb)
            out[k] = pilot[sel[:k_star]].mean(axis=0)
    return out


def adaptive_bandwidths(theta_tilde, adjacency, k_dstar):
    """Median of the ``k_dstar`` smallest adjacent composition distances."""
    theta_tilde = np.asarray(theta_tilde, dtype=float)
    nbrs = _neighbours(theta_tilde.shape[0], *adjacency)
    sig = np.full(theta_tilde.shape[0], SIGMA_FLOOR)
    for k, nb in enumerate(nbrs):
        if nb.size:
            _, d = _nearest(theta_tilde, k, nb)
            sig[k] = max(np.median(d[:k_dstar]), SIGMA_FLOOR)
    return sig


def kernel_weights(theta_tilde, sigmas, adjacency):
    """Gaussian kernel ``exp(-||t_i - t_j||^2 / (2 s_i s_j))`` on adjacent pairs."""
    i, j = adjacency
    d2 = np.sum((theta_tilde[i] - theta_tilde[j]) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * sigmas[i] * sigmas[j]))


def _kruskal(n, i, j, cost):
    parent = np.arange(n)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    keep = []
    for e in np.lexsort((j, i, cost)):
        ra, rb = find(i[e]), find(j[e])
        if ra != rb:
            parent[ra] = rb
            keep.append(e)
    return np.array(sorted(keep), dtype=np.int64)


def sparsify_with_mst(n, adjacency, raw, prune_pct=30.0, floor_frac=1e-3):
    """Prune weak edges per node, reconnect with a spanning tree, floor weights.

    Each node drops the ``ceil(prune_pct% of its degree)`` weakest incident
    edges; an edge survives if either endpoint keeps it.  The maximum-weight
    spanning tree of the unpruned graph (cost ``1 - w``) is added back, and
    retained weights are raised to at least ``floor_frac`` times the largest
    retained weight.
    """
    i, j = (np.asarray(a, dtype=np.int64) for a in adjacency)
    raw = np.asarray(raw, dtype=float)
    if n_components(n, i, j) != 1:
        raise ValueError("adjacency graph is disconnected")

    kept = np.zeros(i.size, dtype=bool)
    incident = [[] for _ in range(n)]
    for e, (a, b) in enumerate(zip(i.tolist(), j.tolist())):
        incident[a].append(e)
        incident[b].append(e)
    for edges in incident:
        if not edges:
            continue
        edges = np.array(edges)
        n_drop = int(np.ceil(len(edges) * prune_pct / 100.0 - 1e-9))
        order = edges[np.lexsort((edges, raw[edges]))]
        kept[order[n_drop:]] = True

    kept[_kruskal(n, i, j, 1.0 - raw)] = True
    w = raw[kept]
    w = np.maximum(w, floor_frac * w.max())
    return FusionGraph(i[kept], j[kept], w, n)


def build_fusion_graph(expr, ref, cfg=WeightConfig(), pilot=None, threads=1):
    """Fusion graph for validated inputs.

    ``pilot`` may supply precomputed spotwise compositions.
    """
    if pilot is None:
        pilot, _ = spotwise_deconvolve(expr, ref, threads=threads)
    adjacency = build_adjacency(expr.coords, cfg.adjacency_factor)
    tilde = pilot_smooth(pilot, adjacency, cfg.k_star)
    sig = adaptive_bandwidths(tilde, adjacency, cfg.k_dstar)
    raw = kernel_weights(tilde, sig, adjacency)
    return sparsify_with_mst(expr.n_spots, adjacency, raw, cfg.prune_pct, cfg.floor_frac)
