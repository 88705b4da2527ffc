"""Numerical laboratory for curvature-dimension conditions on finite spaces."""

from .reports import CheckReport, Gamma2Report, export_report, parse_reports
from .space import (
    FiniteSpace, circle_space, complete_space, energy, erdos_renyi_space, gamma,
    heat_flow, hopf_lax, laplacian, make_space, path_space, slope, two_point_space,
)
from .entropy import EntropyModel, make_entropy, regularize_pressure, sigma_coeff, green_weight

__version__ = "0.1.0"

__all__ = [
    "CheckReport", "Gamma2Report", "export_report", "parse_reports",
    "FiniteSpace", "circle_space", "complete_space", "energy", "erdos_renyi_space", "gamma",
    "heat_flow", "hopf_lax", "laplacian", "make_space", "path_space", "slope", "two_point_space",
    "EntropyModel", "make_entropy", "regularize_pressure", "sigma_coeff", "green_weight",
]
