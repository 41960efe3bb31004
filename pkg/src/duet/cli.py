"""Command-line interface: ``duet <subcommand> [options]``.

Subcommands: simulate, weights, fit, tune, metrics, render.  ``--seed``,
``--config`` and ``--threads`` are accepted before or after the subcommand.
A dataset directory holds ``counts.csv`` (or ``counts.triplet``),
``coords.csv`` and optionally ``reference.csv``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import io
from ._parallel import resolve_threads
from .admm import AdmmConfig
from .metrics import dominant_type_labels, evaluate, write_metrics
from .model import apply_pseudocount, validate_inputs
from .plotting import render_map, render_selection
from .poisson import spotwise_deconvolve
from .selection import tune
from .simplex import PgdSettings
from .simulation import SimulationScenario, simulate
from .solver import Problem, SolverConfig, fit, fit_approx
from .weights import WeightConfig, build_fusion_graph

WEIGHT_KEYS = ("k_star", "k_dstar", "prune_pct", "floor_frac", "adjacency_factor")


class CliError(Exception):
    pass


def _load_config(path):
    if not path:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    if not isinstance(cfg, dict):
        raise CliError(f"{path}: config must be a JSON object")
    return cfg


def _pick(args, cfg, key, default=None):
    """Command-line value, else config value, else default."""
    v = getattr(args, key, None)
    if v is not None:
        return v
    return cfg.get(key, default)


def _weight_config(args, cfg):
    base = dict(cfg.get("weights", {}))
    for k in WEIGHT_KEYS:
        v = getattr(args, k, None)
        if v is not None:
            base[k] = v
    unknown = set(base) - set(WEIGHT_KEYS)
    if unknown:
        raise CliError(f"unknown weight settings: {sorted(unknown)}")
    return WeightConfig(**base)


def _solver_config(cfg):
    s = dict(cfg.get("solver", {}))
    a = dict(s.pop("admm", {}))
    admm = AdmmConfig(pgd=PgdSettings(**a.pop("pgd", {})), **a)
    return SolverConfig(admm=admm, **s)


def _dataset_paths(args, cfg):
    data = _pick(args, cfg, "data")
    counts = _pick(args, cfg, "counts")
    coords = _pick(args, cfg, "coords")
    ref = _pick(args, cfg, "reference")
    if data:
        if counts is None:
            dense = os.path.join(data, "counts.csv")
            counts = dense if os.path.exists(dense) else os.path.join(data, "counts.triplet")
        coords = coords or os.path.join(data, "coords.csv")
        cand = os.path.join(data, "reference.csv")
        if ref is None and os.path.exists(cand):
            ref = cand
    if not counts or not coords:
        raise CliError("need --data, or --counts together with --coords")
    return counts, coords, ref


def _reference(args, cfg, ref_path):
    sc = _pick(args, cfg, "sc_counts")
    if sc:
        lab_path = _pick(args, cfg, "sc_labels")
        if not lab_path:
            raise CliError("--sc-counts needs --sc-labels")
        X, genes, cells = io.read_matrix_csv(sc)
        ids, labels = io.read_cell_labels(lab_path)
        if ids != cells:
            raise CliError(f"{lab_path}: cell ids differ from {sc}")
        markers = None
        mk = _pick(args, cfg, "markers")
        if mk:
            with open(mk) as fh:
                markers = [line.strip() for line in fh if line.strip()]
        return io.build_reference(X, labels, genes, markers)
    path = ref_path or io.bundled_reference_path()
    return io.read_reference(path)


def _load(args, cfg):
    counts, coords, ref_path = _dataset_paths(args, cfg)
    expr = io.read_expression(counts, coords)
    ref = _reference(args, cfg, ref_path)
    expr, ref = validate_inputs(expr, ref, int(_pick(args, cfg, "min_spot_count", 100)))
    return expr, apply_pseudocount(ref)


def _graph(args, cfg, expr, ref, pilot, threads):
    edges = _pick(args, cfg, "edges")
    if edges:
        return io.read_edges(edges, expr.n_spots)
    return build_fusion_graph(expr, ref, _weight_config(args, cfg), pilot=pilot, threads=threads)


def _seed(args, cfg, default=0):
    return int(args.seed if args.seed is not None else cfg.get("seed", default))


# subcommands ---------------------------------------------------------------

def cmd_simulate(args, cfg, threads):
    keys = ("grid_side", "n_clusters", "smoothness", "size_factor_max")
    kw = {k: int(_pick(args, cfg, k)) for k in keys if _pick(args, cfg, k) is not None}
    ref_path = _pick(args, cfg, "reference")
    ref = io.read_reference(ref_path) if ref_path else None
    scen = SimulationScenario(seed=_seed(args, cfg), reference=ref, **kw)
    truth, expr = simulate(scen)
    out = args.out
    os.makedirs(out, exist_ok=True)
    fmt = _pick(args, cfg, "format", "dense")
    io.write_expression(expr, os.path.join(out, "counts.csv" if fmt == "dense" else "counts.triplet"), fmt)
    io.write_coords(expr, os.path.join(out, "coords.csv"))
    io.write_reference(scen.reference, os.path.join(out, "reference.csv"))
    types = scen.reference.celltype_ids
    io.write_matrix_csv(truth.theta_star, truth.spot_ids, types,
                        os.path.join(out, "truth_theta.csv"), "spot_id")
    io.write_matrix_csv(truth.v_star, truth.spot_ids, types,
                        os.path.join(out, "truth_v.csv"), "spot_id")
    io.write_matrix_csv(truth.s_star[:, None], truth.spot_ids, ["s"],
                        os.path.join(out, "truth_s.csv"), "spot_id")
    io.write_labels(truth.spot_ids, truth.labels, os.path.join(out, "truth_labels.csv"))
    io.write_json({"grid_side": scen.grid_side, "n_clusters": scen.n_clusters,
                   "smoothness": scen.smoothness, "seed": scen.seed,
                   "size_factor_max": scen.size_factor_max, "name": scen.name},
                  os.path.join(out, "scenario.json"))
    return 0


def cmd_weights(args, cfg, threads):
    expr, ref = _load(args, cfg)
    graph = build_fusion_graph(expr, ref, _weight_config(args, cfg), threads=threads)
    io.write_edges(graph, args.out)
    return 0


def cmd_fit(args, cfg, threads):
    expr, ref = _load(args, cfg)
    lam = args.lam if args.lam is not None else cfg.get("lambda")
    if lam is None:
        raise CliError("fit needs --lambda")
    pilot = spotwise_deconvolve(expr, ref, threads=threads)
    graph = _graph(args, cfg, expr, ref, pilot[0], threads)
    prob = Problem(expr, ref, graph)
    scfg = _solver_config(cfg)
    runner = fit_approx if args.approx else fit
    res = runner(prob, None, None, float(lam), scfg, pilot=pilot, threads=threads)
    io.write_fit(res, args.out)
    io.write_coords(expr, os.path.join(args.out, "coords.csv"))
    io.write_edges(graph, os.path.join(args.out, "edges.csv"))
    if args.render:
        render_map(res, expr.coords, os.path.join(args.out, "map.svg"))
    return 0


def cmd_tune(args, cfg, threads):
    expr, ref = _load(args, cfg)
    pilot = spotwise_deconvolve(expr, ref, threads=threads)
    graph = _graph(args, cfg, expr, ref, pilot[0], threads)
    method = _pick(args, cfg, "method", "bic")
    best, report = tune(
        expr, ref, graph, method, _solver_config(cfg),
        n_points=int(_pick(args, cfg, "n_points", 20)),
        decades=float(_pick(args, cfg, "decades", 4.0)),
        epsilon=float(_pick(args, cfg, "epsilon", 0.5)),
        seed=_seed(args, cfg), threads=threads,
    )
    os.makedirs(args.out, exist_ok=True)
    report.write(os.path.join(args.out, "selection.csv"))
    fit_dir = os.path.join(args.out, "fit")
    io.write_fit(best, fit_dir)
    io.write_coords(expr, os.path.join(fit_dir, "coords.csv"))
    io.write_edges(graph, os.path.join(fit_dir, "edges.csv"))
    if args.render:
        render_selection(report, os.path.join(args.out, "selection.svg"))
        render_map(best, expr.coords, os.path.join(args.out, "map.svg"))
    return 0


def cmd_metrics(args, cfg, threads):
    res = io.read_fit(args.fit)
    theta_star, t_spots, _ = io.read_matrix_csv(os.path.join(args.truth, "truth_theta.csv"))
    l_spots, labels_star = io.read_labels(os.path.join(args.truth, "truth_labels.csv"))
    pos = {s: k for k, s in enumerate(t_spots)}
    lpos = {s: k for k, s in enumerate(l_spots)}
    missing = [s for s in res.spot_ids if s not in pos or s not in lpos]
    if missing:
        raise CliError(f"truth has no entry for spot {missing[0]!r}")
    idx = [pos[s] for s in res.spot_ids]
    lidx = [lpos[s] for s in res.spot_ids]
    labels = res.clusters.labels
    if args.dominant:
        labels = dominant_type_labels(res.theta)
    rep = evaluate(res.theta, labels, theta_star[idx], labels_star[lidx])
    sj = os.path.join(args.truth, "scenario.json")
    meta = {}
    if os.path.exists(sj):
        with open(sj) as fh:
            meta = json.load(fh)
    scenario = args.scenario if args.scenario is not None else meta.get("name", "")
    seed = _seed(args, cfg, meta.get("seed", 0))
    write_metrics([(args.method, scenario, seed, rep)], args.out)
    return 0


def cmd_render(args, cfg, threads):
    res = io.read_fit(args.fit)
    coords_path = args.coords or os.path.join(args.fit, "coords.csv")
    coords = io.read_coords(coords_path)
    missing = [s for s in res.spot_ids if s not in coords]
    if missing:
        raise CliError(f"{coords_path}: no coordinates for spot {missing[0]!r}")
    render_map(res, np.array([coords[s] for s in res.spot_ids]), args.out)
    return 0


# parser --------------------------------------------------------------------

def _global_flags(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int, default=d, help="random seed")
    p.add_argument("--config", default=d, help="JSON run configuration")
    p.add_argument("--threads", type=int, default=d,
                   help="solver threads (default: DUET_THREADS or 1)")


def _data_flags(p):
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--counts", help="counts file (dense CSV or triplet)")
    p.add_argument("--coords", help="spot_id,x,y CSV")
    p.add_argument("--reference", help="reference CSV (genes x cell types)")
    p.add_argument("--sc-counts", dest="sc_counts", help="single-cell counts CSV (genes x cells)")
    p.add_argument("--sc-labels", dest="sc_labels", help="cell_id,label CSV")
    p.add_argument("--markers", help="file with one marker gene per line")
    p.add_argument("--min-spot-count", dest="min_spot_count", type=int)


def _weight_flags(p):
    p.add_argument("--k-star", dest="k_star", type=int)
    p.add_argument("--k-dstar", dest="k_dstar", type=int)
    p.add_argument("--prune-pct", dest="prune_pct", type=float)
    p.add_argument("--floor-frac", dest="floor_frac", type=float)
    p.add_argument("--adjacency-factor", dest="adjacency_factor", type=float)
    p.add_argument("--edges", help="precomputed i,j,gamma edge list")


def build_parser():
    parser = argparse.ArgumentParser(prog="duet", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("simulate", parents=[common], help="generate a simulated dataset")
    p.add_argument("--out", required=True)
    for k in ("grid-side", "n-clusters", "smoothness", "size-factor-max"):
        p.add_argument(f"--{k}", dest=k.replace("-", "_"), type=int)
    p.add_argument("--reference")
    p.add_argument("--format", choices=("dense", "triplet"))
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("weights", parents=[common], help="build the fusion graph")
    _data_flags(p)
    _weight_flags(p)
    p.add_argument("--out", required=True, help="edge list CSV")
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("fit", parents=[common], help="fit at one lambda")
    _data_flags(p)
    _weight_flags(p)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--approx", action="store_true", help="single ADMM pass from the spotwise fit")
    p.add_argument("--render", action="store_true", help="also write map.svg")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("tune", parents=[common], help="select lambda along a path")
    _data_flags(p)
    _weight_flags(p)
    p.add_argument("--method", choices=("bic", "thinning"))
    p.add_argument("--n-points", dest="n_points", type=int)
    p.add_argument("--decades", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--render", action="store_true", help="also write SVG figures")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("metrics", parents=[common], help="score a fit against the truth")
    p.add_argument("--fit", required=True)
    p.add_argument("--truth", required=True, help="directory written by simulate")
    p.add_argument("--method", default="DUET")
    p.add_argument("--scenario")
    p.add_argument("--dominant", action="store_true",
                   help="cluster by dominant cell type instead of the fit's clusters")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("render", parents=[common], help="draw a fit as an SVG map")
    p.add_argument("--fit", required=True)
    p.add_argument("--coords")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for k in ("seed", "config", "threads"):
        if not hasattr(args, k):
            setattr(args, k, None)
    try:
        cfg = _load_config(args.config)
        threads = resolve_threads(args.threads if args.threads is not None else cfg.get("threads"))
        return args.func(args, cfg, threads)
    except (CliError, ValueError, OSError, RuntimeError, KeyError, TypeError) as exc:
        print(f"duet {args.command}: error: {exc}", file=sys.stderr)
        return 1


def entry():
    sys.exit(main())


__all__ = ["build_parser", "main"]
