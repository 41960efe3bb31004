"""Joint cell-type deconvolution and spatial domain detection.

Spot compositions are fitted by Poisson maximum likelihood on the simplex
with a weighted fusion penalty; spots whose compositions fuse form a domain.
"""

from .admm import AdmmConfig, solve_theta
from .metrics import MetricReport, adjusted_rand_index, evaluate, frobenius_error, max_row_error
from .model import (
    ClusterAssignment,
    ExpressionMatrix,
    FitResult,
    ReferenceMatrix,
    apply_pseudocount,
    extract_clusters,
    validate_inputs,
)
from .poisson import grad_theta_nll, nll_spot, spotwise_deconvolve, update_size_factor
from .selection import bic, select_lambda_bic, select_lambda_thinning, thin_poisson, tune
from .simplex import group_shrink, project_simplex
from .simulation import SimulationScenario, gen_counts, gen_ground_truth, simulate
from .solver import LambdaGrid, SolverConfig, find_lambda_max, fit, fit_approx, fit_path
from .weights import FusionGraph, WeightConfig, build_fusion_graph

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "ClusterAssignment",
    "ExpressionMatrix",
    "FitResult",
    "FusionGraph",
    "LambdaGrid",
    "MetricReport",
    "ReferenceMatrix",
    "SimulationScenario",
    "SolverConfig",
    "WeightConfig",
    "adjusted_rand_index",
    "apply_pseudocount",
    "bic",
    "build_fusion_graph",
    "evaluate",
    "extract_clusters",
    "find_lambda_max",
    "fit",
    "fit_approx",
    "fit_path",
    "frobenius_error",
    "gen_counts",
    "gen_ground_truth",
    "grad_theta_nll",
    "group_shrink",
    "max_row_error",
    "nll_spot",
    "project_simplex",
    "select_lambda_bic",
    "select_lambda_thinning",
    "simulate",
    "solve_theta",
    "spotwise_deconvolve",
    "thin_poisson",
    "tune",
    "update_size_factor",
    "validate_inputs",
]
