"""dnslab: a solver laboratory for isentropic compressible Navier-Stokes with
degenerate viscosity mu = alpha rho^delta, lambda = beta rho^delta and far-field vacuum."""

from .errors import (
    CFLError,
    ConfigError,
    DnslabError,
    KrylovError,
    NonContractionError,
    OverflowFieldError,
    ParamError,
    PositivityError,
    ShapeError,
    SnapshotError,
)
from .grid import FARFIELD, PERIODIC, Grid
from .params import DerivedConstants, Params, check_params, derive_constants, validate_params
from .state import PrimitiveState, ReformState

__version__ = "0.1.0"

__all__ = [
    "CFLError",
    "ConfigError",
    "DerivedConstants",
    "DnslabError",
    "FARFIELD",
    "Grid",
    "KrylovError",
    "NonContractionError",
    "OverflowFieldError",
    "PERIODIC",
    "ParamError",
    "Params",
    "PositivityError",
    "PrimitiveState",
    "ReformState",
    "ShapeError",
    "SnapshotError",
    "check_params",
    "derive_constants",
    "validate_params",
]
