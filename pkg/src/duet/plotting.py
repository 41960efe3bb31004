"""Static SVG figures: cluster maps with composition glyphs, selection paths.

Output is byte-reproducible: the SVG id salt is fixed and no creation date
is written.
"""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Patch, Wedge  # noqa: E402

import numpy as np  # noqa: E402

SVG_SALT = "duet"
_STYLE = {
    "svg.hashsalt": SVG_SALT,
    "svg.fonttype": "none",
    "font.size": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def _palette(n):
    base = plt.get_cmap("tab20").colors if n > 10 else plt.get_cmap("tab10").colors
    return [base[c % len(base)] for c in range(n)]


def _save(fig, path):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _pie(ax, x, y, r, fracs, colors):
    start = 90.0
    for f, col in zip(fracs, colors):
        if f <= 0:
            continue
        sweep = 360.0 * f
        ax.add_patch(Wedge((x, y), r, start, start + sweep, facecolor=col,
                           edgecolor="white", linewidth=0.3))
        start += sweep


def render_map(result, coords, out_svg, celltype_ids=None, max_glyphs=20):
    """Spots coloured by cluster, plus one pie glyph per cluster centroid.

    Only the ``max_glyphs`` largest clusters get a glyph; all clusters keep
    their legend entry.
    """
    with plt.rc_context(_STYLE):
        _save(map_figure(result, coords, celltype_ids, max_glyphs), out_svg)


def map_figure(result, coords, celltype_ids=None, max_glyphs=20):
    """The figure behind :func:`render_map`; axes are (map, glyphs)."""
    coords = np.asarray(coords, dtype=float)
    labels = np.asarray(result.clusters.labels)
    cents = np.asarray(result.clusters.centroids)
    C, K = cents.shape
    types = list(celltype_ids or result.celltype_ids or [f"type{k + 1}" for k in range(K)])
    ccol = _palette(C)
    tcol = plt.get_cmap("Set2").colors

    with plt.rc_context(_STYLE):
        fig, (ax, gx) = plt.subplots(1, 2, figsize=(9, 4.5),
                                     gridspec_kw={"width_ratios": [1.3, 1]})
        ax.scatter(coords[:, 0], coords[:, 1], c=[ccol[c - 1] for c in labels], s=30,
                   marker="s", linewidths=0)
        ax.set_aspect("equal")
        ax.set_title(f"{C} cluster{'s' if C != 1 else ''}, lambda = {result.lam:.4g}")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        handles = [Patch(color=ccol[c], label=str(c + 1)) for c in range(C)]
        ax.legend(handles=handles, title="cluster", loc="upper left",
                  bbox_to_anchor=(1.0, 1.0), frameon=False, ncol=1 + C // 16)

        sizes = np.bincount(labels, minlength=C + 1)[1:]
        shown = sorted(np.argsort(-sizes, kind="stable")[:max_glyphs])
        cols = math.ceil(math.sqrt(len(shown)))
        rows = math.ceil(len(shown) / cols)
        for pos, c in enumerate(shown):
            x, y = pos % cols, rows - 1 - pos // cols
            _pie(gx, x, y, 0.4, cents[c], [tcol[k % len(tcol)] for k in range(K)])
            gx.add_patch(Wedge((x, y), 0.44, 0, 360, width=0.04, color=ccol[c]))
            gx.text(x, y - 0.5, f"{c + 1} (n={sizes[c]})", ha="center", va="top")
        gx.set_xlim(-0.6, cols - 0.4)
        gx.set_ylim(-0.75, rows - 0.45)
        gx.set_aspect("equal")
        gx.axis("off")
        gx.set_title("cluster compositions")
        gx.legend(handles=[Patch(color=tcol[k % len(tcol)], label=t) for k, t in enumerate(types)],
                  loc="upper center", bbox_to_anchor=(0.5, 0.0), frameon=False,
                  ncol=min(K, 5))
        fig.tight_layout()
    return fig


def render_selection(report, out_svg):
    """Cluster count and criterion value along the lambda path."""
    rows = sorted(report.rows, key=lambda r: r[0])
    lam = np.array([r[0] for r in rows])
    ncl = np.array([r[1] for r in rows])
    if report.method == "thinning":
        crit, name = np.array([r[3] for r in rows]), "held-out log-likelihood"
    else:
        crit, name = np.array([r[4] for r in rows]), "BIC"
    x = np.where(lam > 0, lam, np.nan)
    with plt.rc_context(_STYLE):
        fig, (a1, a2) = plt.subplots(2, 1, figsize=(5, 5), sharex=True)
        a1.plot(x, crit, marker="o", ms=3, color="0.2")
        a1.axvline(report.best_lambda, color="C3", lw=0.8, ls="--")
        a1.set_ylabel(name)
        a2.step(x, ncl, where="mid", color="C0")
        a2.axvline(report.best_lambda, color="C3", lw=0.8, ls="--")
        a2.set_ylabel("clusters")
        a2.set_yscale("log")
        a2.set_xscale("log")
        a2.set_xlabel("lambda")
        fig.tight_layout()
        _save(fig, out_svg)
