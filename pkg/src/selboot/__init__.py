"""Multiscale bootstrap p-values (BP, AU and selective SI) for the problem of regions."""

from .errors import EXIT_CODES
from .normal_theory import GeometricQuantities, PValueTriple, pvalues_from_geometry
from .scaling_fit import MultiscaleCounts, fit_counts, geometry_at_unit_scale

__all__ = [
    "EXIT_CODES",
    "GeometricQuantities",
    "MultiscaleCounts",
    "PValueTriple",
    "fit_counts",
    "geometry_at_unit_scale",
    "pvalues_from_geometry",
]
