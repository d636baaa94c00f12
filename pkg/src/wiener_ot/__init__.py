"""Optimal transport on truncated Wiener space.

The Wiener space is realized as ``R^d`` with the standard Gaussian measure
``mu``; the cost is ``|x - y|^2`` (the Cameron-Martin norm at truncation).
"""

__version__ = "0.1.0"

from .densities import PRESETS, DensityField, PresetError, parse_density
from .gaussian import MAX_DIM, GaussianSpace, SampleCloud, estimate_entropy, sample_density, sample_standard
from .harness import ExperimentConfig, RunRecord, run, suite
from .inequalities import InequalityReport, d1_flow_report, gauge_report, talagrand_report
from .maps import AffineTransport, PotentialPair, gaussian_brenier, potential_of, projection_ladder
from .monge_ampere import gaussian_jacobian, jacobian_residual
from .ot import DiscreteCoupling, SolverError, check_cyclic_monotone, solve_entropic, solve_exact, wasserstein
from .polar import factorize

__all__ = [
    "AffineTransport", "DensityField", "DiscreteCoupling", "ExperimentConfig", "GaussianSpace",
    "InequalityReport", "MAX_DIM", "PRESETS", "PotentialPair", "PresetError", "RunRecord", "SampleCloud",
    "SolverError", "check_cyclic_monotone", "d1_flow_report", "estimate_entropy", "factorize",
    "gauge_report", "gaussian_brenier", "gaussian_jacobian", "jacobian_residual", "parse_density",
    "potential_of", "projection_ladder", "run", "sample_density", "sample_standard", "solve_entropic",
    "solve_exact", "suite", "talagrand_report", "wasserstein",
]
