"""Distributed fixed-point iteration workbench.

Simulates inexact and block-coordinate Krasnoselskii-Mann iterations for a
group of nonexpansive operators coupled through time-varying directed
networks, together with the graph-mixing analysis, regularity-constant
estimation, and convergence-rate measurement needed to check the
convergence guarantees numerically at desk scale.
"""

__version__ = "0.1.0"

from .hilbert import BlockLayout, Point, WeightedNorm, convex_combine, inner, weighted_norm_sq
from .operators import NonexpansiveOp, OperatorSet, RegularityEstimate, averaged, residual
from .graph import GraphSequence, MixingAnalysis, backward_product, check_graph_assumptions, compute_mixing
from .engine import BlockScheme, ErrorModel, NetworkState, RelaxationSchedule, dibkm_step, dikm_step, km_step, run
from .diagnostics import RateCertificate, RunTrace, fit_rate, running_min_residual
from .scenarios import PRESETS, Scenario, make_preset, validate_scenario

__all__ = [
    "BlockLayout", "Point", "WeightedNorm", "convex_combine", "inner", "weighted_norm_sq",
    "NonexpansiveOp", "OperatorSet", "RegularityEstimate", "averaged", "residual",
    "GraphSequence", "MixingAnalysis", "backward_product", "check_graph_assumptions",
    "compute_mixing",
    "BlockScheme", "ErrorModel", "NetworkState", "RelaxationSchedule",
    "dibkm_step", "dikm_step", "km_step", "run",
    "RateCertificate", "RunTrace", "fit_rate", "running_min_residual",
    "PRESETS", "Scenario", "make_preset", "validate_scenario",
]
