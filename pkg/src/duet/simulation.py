"""Synthetic spatial transcriptomics data on a square grid.

Spots on a ``grid_side x grid_side`` lattice are split into spatial
domains; every domain has one characteristic composition.  Each spot then
gets a cell count ``s ~ U{1..size_factor_max}``, a realized composition
from a multinomial draw of that many cells, and Poisson counts with mean
``s * B @ v``.

The C = 5 composition matrices are fixed reference values.  The extra
rows for C = 7 and C = 10 and all partition geometries extend them in the
same pattern (versioned by ``CONSTANTS_VERSION``).
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np

from .model import ExpressionMatrix, ReferenceMatrix

CONSTANTS_VERSION = 1

_C5 = {
    1: [
        [0.05, 0.05, 0.05, 0.00, 0.85],
        [0.05, 0.05, 0.00, 0.85, 0.05],
        [0.05, 0.00, 0.85, 0.05, 0.05],
        [0.00, 0.85, 0.05, 0.05, 0.05],
        [0.85, 0.05, 0.05, 0.05, 0.00],
    ],
    2: [
        [0.8, 0.1, 0.1, 0.0, 0.0],
        [0.1, 0.6, 0.3, 0.0, 0.0],
        [0.2, 0.2, 0.3, 0.2, 0.1],
        [0.0, 0.0, 0.1, 0.1, 0.8],
        [0.2, 0.4, 0.0, 0.1, 0.3],
    ],
    3: [
        [0.70, 0.15, 0.10, 0.03, 0.02],
        [0.20, 0.40, 0.10, 0.10, 0.20],
        [0.02, 0.08, 0.85, 0.03, 0.02],
        [0.10, 0.25, 0.25, 0.30, 0.10],
        [0.15, 0.05, 0.30, 0.20, 0.30],
    ],
}

# extra rows appended for C = 7 (first two) and C = 10 (all five)
_EXTRA = {
    1: [
        [0.45, 0.45, 0.05, 0.05, 0.00],
        [0.00, 0.05, 0.05, 0.45, 0.45],
        [0.05, 0.425, 0.425, 0.05, 0.05],
        [0.425, 0.05, 0.05, 0.05, 0.425],
        [0.05, 0.05, 0.425, 0.425, 0.05],
    ],
    2: [
        [0.1, 0.1, 0.6, 0.2, 0.0],
        [0.5, 0.0, 0.0, 0.4, 0.1],
        [0.0, 0.3, 0.1, 0.5, 0.1],
        [0.3, 0.0, 0.4, 0.0, 0.3],
        [0.1, 0.2, 0.2, 0.0, 0.5],
    ],
    3: [
        [0.30, 0.10, 0.15, 0.40, 0.05],
        [0.05, 0.30, 0.20, 0.15, 0.30],
        [0.45, 0.10, 0.05, 0.10, 0.30],
        [0.10, 0.55, 0.15, 0.05, 0.15],
        [0.25, 0.20, 0.20, 0.20, 0.15],
    ],
}

VALID_CLUSTERS = (5, 7, 10)


def theta_dagger(n_clusters, smoothness):
    """Characteristic compositions, one row per domain (C x 5)."""
    if n_clusters not in VALID_CLUSTERS or smoothness not in (1, 2, 3):
        raise ValueError(f"no composition matrix for C={n_clusters}, smoothness={smoothness}")
    rows = _C5[smoothness] + _EXTRA[smoothness][: n_clusters - 5]
    return np.array(rows, dtype=float)


def grid_coords(grid_side):
    """Unit-spaced lattice coordinates ``(x, y)`` in row-major spot order."""
    r, c = np.divmod(np.arange(grid_side * grid_side), grid_side)
    return np.column_stack([c, r]).astype(float)


def make_partition(grid_side, n_clusters):
    """Fixed geometric partition of the grid into domains labelled 1..C.

    C = 5: four quadrants with a central disk.  C = 7: top and bottom
    halves each cut into three vertical strips, plus a central disk.
    C = 10: top and bottom halves each cut into five vertical strips.
    """
    if n_clusters not in VALID_CLUSTERS:
        raise ValueError(f"unsupported number of clusters: {n_clusters}")
    if grid_side < n_clusters:
        raise ValueError("grid_side must be at least n_clusters")
    xy = grid_coords(grid_side)
    c, r = xy[:, 0], xy[:, 1]
    bottom = r >= grid_side / 2
    centre = (grid_side - 1) / 2
    disk = (r - centre) ** 2 + (c - centre) ** 2 <= (grid_side / 4) ** 2
    if n_clusters == 5:
        labels = 1 + 2 * bottom + (c >= grid_side / 2)
        labels[disk] = 5
    elif n_clusters == 7:
        labels = 1 + 3 * bottom + np.floor(3 * c / grid_side)
        labels[disk] = 7
    else:
        labels = 1 + 5 * bottom + np.floor(5 * c / grid_side)
    return labels.astype(int)


def default_reference():
    """Bundled synthetic 66 x 5 reference matrix."""
    path = resources.files("duet") / "data" / "reference_66x5.csv"
    with resources.as_file(path) as p:
        rows = [line.rstrip("\n").split(",") for line in open(p)]
    header, body = rows[0], rows[1:]
    values = np.array([[float(v) for v in r[1:]] for r in body])
    return ReferenceMatrix(values, [r[0] for r in body], header[1:])


@dataclass(frozen=True)
class SimulationScenario:
    grid_side: int = 20
    n_clusters: int = 5
    smoothness: int = 1
    seed: int = 0
    size_factor_max: int = 50
    reference: ReferenceMatrix = None

    def __post_init__(self):
        if self.n_clusters not in VALID_CLUSTERS:
            raise ValueError(f"n_clusters must be one of {VALID_CLUSTERS}")
        if self.smoothness not in (1, 2, 3):
            raise ValueError("smoothness must be 1, 2 or 3")
        if self.grid_side < self.n_clusters or self.size_factor_max < 1:
            raise ValueError("invalid grid_side or size_factor_max")
        if self.reference is None:
            object.__setattr__(self, "reference", default_reference())

    @property
    def name(self):
        return f"C{self.n_clusters}_m{self.smoothness}_g{self.grid_side}"


@dataclass(frozen=True)
class GroundTruth:
    theta_star: np.ndarray
    v_star: np.ndarray
    s_star: np.ndarray
    labels: np.ndarray
    coords: np.ndarray
    spot_ids: tuple
    seed: int


def _streams(seed):
    truth, counts = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(truth), np.random.default_rng(counts)


def gen_ground_truth(scenario):
    """Draw size factors and realized compositions for every spot."""
    rng, _ = _streams(scenario.seed)
    labels = make_partition(scenario.grid_side, scenario.n_clusters)
    theta_star = theta_dagger(scenario.n_clusters, scenario.smoothness)[labels - 1]
    n = labels.size
    s_star = rng.integers(1, scenario.size_factor_max + 1, size=n)
    u = rng.multinomial(s_star, theta_star)
    v_star = u / u.sum(axis=1, keepdims=True)
    spot_ids = tuple(f"spot{i:04d}" for i in range(n))
    return GroundTruth(
        theta_star, v_star, s_star.astype(float), labels,
        grid_coords(scenario.grid_side), spot_ids, scenario.seed,
    )


def gen_counts(truth, ref):
    """Poisson counts ``X_gi ~ Poisson(s_i * b_g^T v_i)``."""
    _, rng = _streams(truth.seed)
    B = np.asarray(ref.values, dtype=float)
    mean = (B @ truth.v_star.T) * truth.s_star[None, :]
    counts = rng.poisson(mean)
    return ExpressionMatrix(counts, ref.gene_ids, truth.spot_ids, truth.coords)


def simulate(scenario):
    """Ground truth and expression matrix for a scenario."""
    truth = gen_ground_truth(scenario)
    return truth, gen_counts(truth, scenario.reference)
