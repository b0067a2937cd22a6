"""Homogenized Finsler metrics of curves on fast-oscillating periodic constraints."""

from . import constraint, gammacheck, geodesic, graphs, levelset, metric, synthesis
from .constraint import PeriodicConstraint, make
from .gammacheck import DiscreteCurve, build_recovery_sequence, energy_F_eps, gamma_trend, minimize_F_eps
from .geodesic import min_path_length, psi_T_z, psi_T_zc, psi_hom_z, stable_norm
from .graphs import PeriodicGraph, classify_components, estimate_length_constant, simplify
from .levelset import exact_network_graph, extract_level_graph
from .metric import HomogenizedMetric, assemble_metric, assemble_metric_from_graph, export_ball, query_metric
from .synthesis import FinslerBallSpec, build_degenerate, build_network, rationalize_ball, verify_synthesis

__version__ = "0.1.0"

__all__ = [
    "PeriodicConstraint", "make",
    "PeriodicGraph", "classify_components", "estimate_length_constant", "simplify",
    "extract_level_graph", "exact_network_graph",
    "min_path_length", "psi_T_z", "psi_T_zc", "psi_hom_z", "stable_norm",
    "HomogenizedMetric", "assemble_metric", "assemble_metric_from_graph",
    "query_metric", "export_ball",
    "FinslerBallSpec", "build_degenerate", "build_network", "rationalize_ball",
    "verify_synthesis",
    "DiscreteCurve", "energy_F_eps", "minimize_F_eps", "build_recovery_sequence",
    "gamma_trend",
    "constraint", "graphs", "levelset", "geodesic", "metric", "synthesis", "gammacheck",
]
