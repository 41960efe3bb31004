"""Readers and writers for counts, coordinates, references, graphs and fits."""

from __future__ import annotations

import csv
import json
import os
from importlib import resources

import numpy as np

from .model import (
    ClusterAssignment,
    ExpressionMatrix,
    FitResult,
    ReferenceMatrix,
    apply_pseudocount,
)
from .weights import FusionGraph

TRIPLET_TAG = "%%triplet"


class FormatError(ValueError):
    """Malformed input file; the message names the file and location."""


def _parse_count(text, where):
    try:
        v = float(text)
    except ValueError:
        raise FormatError(f"{where}: not a number: {text!r}") from None
    if not np.isfinite(v) or v < 0 or v != round(v):
        raise FormatError(f"{where}: counts must be nonnegative integers, got {text!r}")
    return int(v)


def _real(v):
    # repr round-trips a float exactly
    return repr(float(v))


def read_coords(path):
    """``spot_id,x,y`` CSV -> dict spot_id -> (x, y), in file order."""
    out = {}
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or [h.strip() for h in header] != ["spot_id", "x", "y"]:
            raise FormatError(f"{path}: header must be spot_id,x,y")
        for ln, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{ln}: expected 3 fields")
            try:
                out[row[0]] = (float(row[1]), float(row[2]))
            except ValueError:
                raise FormatError(f"{path}:{ln}: bad coordinate") from None
    return out


def write_coords(expr, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["spot_id", "x", "y"])
        for sid, (x, y) in zip(expr.spot_ids, expr.coords):
            out.writerow([sid, _real(x), _real(y)])


def _read_dense(path):
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or len(header) < 2:
            raise FormatError(f"{path}: header needs a gene column and at least one spot")
        spots = header[1:]
        genes, data = [], []
        for ln, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{ln}: expected {len(header)} fields, got {len(row)}")
            genes.append(row[0])
            data.append([_parse_count(v, f"{path}: row {ln} ({row[0]}), column {c + 2} ({spots[c]})")
                         for c, v in enumerate(row[1:])])
    if not genes:
        raise FormatError(f"{path}: no gene rows")
    return np.array(data, dtype=np.int64), genes, spots


def _read_triplet(path, genes=None, spots=None):
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 4 or head[0] != TRIPLET_TAG:
            raise FormatError(f"{path}: first line must be '{TRIPLET_TAG} G n nnz'")
        try:
            G, n, nnz = (int(v) for v in head[1:])
        except ValueError:
            raise FormatError(f"{path}: malformed triplet header") from None
        counts = np.zeros((G, n), dtype=np.int64)
        seen = 0
        for ln, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise FormatError(f"{path}:{ln}: expected gene_idx,spot_idx,count")
            try:
                g, i = int(parts[0]), int(parts[1])
            except ValueError:
                raise FormatError(f"{path}:{ln}: bad index") from None
            if not (0 <= g < G and 0 <= i < n):
                raise FormatError(f"{path}:{ln}: index ({g}, {i}) out of range")
            counts[g, i] += _parse_count(parts[2], f"{path}:{ln} (gene {g}, spot {i})")
            seen += 1
    if seen != nnz:
        raise FormatError(f"{path}: header says nnz={nnz}, found {seen} entries")
    genes = list(genes) if genes is not None else [f"gene{g}" for g in range(G)]
    spots = list(spots) if spots is not None else [f"spot{i}" for i in range(n)]
    if len(genes) != G or len(spots) != n:
        raise FormatError(f"{path}: id lists do not match header dimensions")
    return counts, genes, spots


def read_expression(path, coords_path, gene_ids=None):
    """Dense CSV (genes x spots) or sparse triplet counts, joined with coordinates.

    Triplet indices are 0-based; its spots take the coordinate file's order
    and ``gene_ids`` (default ``gene0, gene1, ...``) name its genes.
    """
    coords = read_coords(coords_path)
    with open(path) as fh:
        first = fh.readline()
    if first.startswith(TRIPLET_TAG):
        counts, genes, spots = _read_triplet(path, gene_ids, list(coords) or None)
    else:
        counts, genes, spots = _read_dense(path)
    missing = [s for s in spots if s not in coords]
    if missing:
        raise FormatError(f"{coords_path}: no coordinates for spot {missing[0]!r}")
    xy = np.array([coords[s] for s in spots], dtype=float)
    return ExpressionMatrix(counts, genes, spots, xy)


def write_expression(expr, path, fmt="dense"):
    counts = np.asarray(expr.counts)
    if fmt == "dense":
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["gene", *expr.spot_ids])
            for g, row in zip(expr.gene_ids, counts):
                out.writerow([g, *(int(v) for v in row)])
    elif fmt == "triplet":
        g_idx, s_idx = np.nonzero(counts)
        with open(path, "w") as fh:
            fh.write(f"{TRIPLET_TAG} {counts.shape[0]} {counts.shape[1]} {g_idx.size}\n")
            for g, i in zip(g_idx, s_idx):
                fh.write(f"{g},{i},{counts[g, i]}\n")
    else:
        raise ValueError(f"unknown expression format: {fmt}")


def read_matrix_csv(path):
    """Labelled real matrix: header ``id,col1,...``; returns (values, row_ids, col_ids)."""
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or len(header) < 2:
            raise FormatError(f"{path}: missing header")
        ids, vals = [], []
        for ln, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FormatError(f"{path}:{ln}: expected {len(header)} fields")
            ids.append(row[0])
            try:
                vals.append([float(v) for v in row[1:]])
            except ValueError:
                raise FormatError(f"{path}:{ln}: non-numeric entry") from None
    return np.array(vals, dtype=float).reshape(len(ids), len(header) - 1), ids, header[1:]


def write_matrix_csv(values, row_ids, col_ids, path, id_name="id"):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow([id_name, *col_ids])
        for rid, row in zip(row_ids, np.asarray(values)):
            out.writerow([rid, *(_real(v) for v in row)])


def read_reference(path):
    values, genes, types = read_matrix_csv(path)
    return ReferenceMatrix(values, genes, types)


def write_reference(ref, path):
    write_matrix_csv(ref.values, ref.gene_ids, ref.celltype_ids, path, "gene")


def bundled_reference_path():
    return str(resources.files("duet") / "data" / "reference_66x5.csv")


def build_reference(sc_counts, cell_labels, gene_ids, marker_genes=None, pseudocount=1e-4):
    """Per-type mean of raw single-cell counts (genes x cells), zeros pseudocounted.

    Genes that are zero in every type are dropped first; cell types are
    ordered by first appearance in ``cell_labels``.
    """
    X = np.asarray(sc_counts, dtype=float)
    labels = [str(v) for v in cell_labels]
    if X.ndim != 2 or X.shape[1] != len(labels):
        raise ValueError("sc_counts must be genes x cells with one label per cell")
    genes = [str(g) for g in gene_ids]
    if len(genes) != X.shape[0]:
        raise ValueError("one gene id per row of sc_counts is required")
    types = list(dict.fromkeys(labels))
    if not types:
        raise ValueError("no cells")
    if marker_genes is not None:
        wanted = set(str(g) for g in marker_genes)
        keep = [k for k, g in enumerate(genes) if g in wanted]
        if not keep:
            raise ValueError("marker genes do not intersect the single-cell genes")
        X = X[keep]
        genes = [genes[k] for k in keep]
    lab = np.array(labels)
    B = np.column_stack([X[:, lab == t].mean(axis=1) for t in types])
    nonzero = B.sum(axis=1) > 0
    if not nonzero.any():
        raise ValueError("every gene is zero in every cell type")
    B = B[nonzero]
    genes = [g for g, keep in zip(genes, nonzero) if keep]
    return apply_pseudocount(ReferenceMatrix(B, genes, types), pseudocount)


def write_edges(graph, path):
    """Edge list ``i,j,gamma`` with 0-based indices."""
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["i", "j", "gamma"])
        for i, j, w in zip(graph.i, graph.j, graph.w):
            out.writerow([int(i), int(j), _real(w)])


def read_edges(path, n):
    i, j, w = [], [], []
    with open(path, newline="") as fh:
        rows = csv.reader(fh)
        if next(rows, None) != ["i", "j", "gamma"]:
            raise FormatError(f"{path}: header must be i,j,gamma")
        for ln, row in enumerate(rows, start=2):
            if not row:
                continue
            try:
                i.append(int(row[0]))
                j.append(int(row[1]))
                w.append(float(row[2]))
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{ln}: malformed edge") from None
    return FusionGraph(np.array(i, dtype=np.int64), np.array(j, dtype=np.int64),
                       np.array(w, dtype=float), int(n))


FIT_FILES = ("theta.csv", "s.csv", "labels.csv", "centroids.csv", "meta.json")


def write_fit(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    spots = list(result.spot_ids) or [str(i) for i in range(result.theta.shape[0])]
    types = list(result.celltype_ids) or [f"type{k + 1}" for k in range(result.theta.shape[1])]
    write_matrix_csv(result.theta, spots, types, os.path.join(out_dir, "theta.csv"), "spot_id")
    write_matrix_csv(result.s[:, None], spots, ["s"], os.path.join(out_dir, "s.csv"), "spot_id")
    with open(os.path.join(out_dir, "labels.csv"), "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["spot_id", "cluster"])
        for sid, c in zip(spots, result.clusters.labels):
            out.writerow([sid, int(c)])
    C = result.clusters.n_clusters
    write_matrix_csv(result.clusters.centroids, [str(c + 1) for c in range(C)], types,
                     os.path.join(out_dir, "centroids.csv"), "cluster")
    meta = {
        "lambda": float(result.lam),
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
        "n_clusters": int(C),
        "objective_trace": [float(v) for v in result.objective_trace],
    }
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_fit(fit_dir):
    """Inverse of :func:`write_fit` (ADMM internals are not persisted)."""
    theta, spots, types = read_matrix_csv(os.path.join(fit_dir, "theta.csv"))
    s, s_spots, _ = read_matrix_csv(os.path.join(fit_dir, "s.csv"))
    if s_spots != spots:
        raise FormatError(f"{fit_dir}: s.csv and theta.csv list different spots")
    with open(os.path.join(fit_dir, "labels.csv"), newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    if [r[0] for r in rows] != spots:
        raise FormatError(f"{fit_dir}: labels.csv and theta.csv list different spots")
    labels = np.array([int(r[1]) for r in rows], dtype=int)
    centroids, _, _ = read_matrix_csv(os.path.join(fit_dir, "centroids.csv"))
    with open(os.path.join(fit_dir, "meta.json")) as fh:
        meta = json.load(fh)
    return FitResult(
        theta, s[:, 0], ClusterAssignment(labels, centroids), meta["lambda"],
        list(meta["objective_trace"]), meta["converged"], meta["iterations"],
        tuple(spots), tuple(types),
    )


def read_labels(path):
    """``spot_id,cluster`` CSV -> (spot_ids, int labels)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) != 2:
        raise FormatError(f"{path}: header must have two columns")
    return [r[0] for r in rows[1:] if r], np.array([int(r[1]) for r in rows[1:] if r], dtype=int)


def read_cell_labels(path):
    """``cell_id,label`` CSV -> (cell_ids, labels as strings)."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows or len(rows[0]) != 2:
        raise FormatError(f"{path}: header must have two columns")
    if any(len(r) != 2 for r in rows[1:]):
        raise FormatError(f"{path}: every row needs cell_id,label")
    return [r[0] for r in rows[1:]], [r[1] for r in rows[1:]]


def write_labels(spot_ids, labels, path):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["spot_id", "cluster"])
        for sid, c in zip(spot_ids, labels):
            out.writerow([sid, int(c)])


def write_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


__all__ = [
    "FIT_FILES",
    "FormatError",
    "build_reference",
    "bundled_reference_path",
    "read_cell_labels",
    "read_coords",
    "read_edges",
    "read_expression",
    "read_fit",
    "read_labels",
    "read_matrix_csv",
    "read_reference",
    "write_coords",
    "write_edges",
    "write_expression",
    "write_fit",
    "write_json",
    "write_labels",
    "write_matrix_csv",
    "write_reference",
]
