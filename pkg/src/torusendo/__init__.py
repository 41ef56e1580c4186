"""Numerical toolkit for expanding-on-average self-covers of the 2-torus.

Maps are lifts ``F: R^2 -> R^2`` with ``F(p + v) = F(p) + L v``; the
modules cover preimage trees, backward sampling, solenoid coding,
averaged inverse expansion, Lyapunov exponents, a conservative Anosov
perturbation and backward iteration of curves.
"""

from .errors import (
    BranchInverseError,
    CapacityError,
    ConfigError,
    CoverageError,
    GrowthStalledError,
    NumericalError,
    PreconditionError,
    TorusEndoError,
)
from .lattice import IntMatrix2, coset_representatives, smith_normal_form, torus_distance, wrap
from .maps import compose, jet2, make_linear, make_shear, parse_map
from .perturbation import make_bump, make_g_epsilon, make_s_epsilon

__version__ = "0.1.0"

__all__ = [
    "BranchInverseError",
    "CapacityError",
    "ConfigError",
    "CoverageError",
    "GrowthStalledError",
    "IntMatrix2",
    "NumericalError",
    "PreconditionError",
    "TorusEndoError",
    "compose",
    "coset_representatives",
    "jet2",
    "make_bump",
    "make_g_epsilon",
    "make_linear",
    "make_s_epsilon",
    "make_shear",
    "parse_map",
    "smith_normal_form",
    "torus_distance",
    "wrap",
]
