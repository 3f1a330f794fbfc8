"""Isogeometric A-EFIE (PEEC) solver on NURBS multipatch surfaces."""

from .assembly import Medium, QuadratureOrders, VACUUM, assemble, assemble_sweep
from .errors import (ConformityError, DesignError, GeometryError, IgaPeecError,
                     InfeasibleDesign, NumericalError, QuadratureError)
from .geometry import MultipatchSurface, apply_design, load_geometry, save_geometry
from .optimize import TrustRegionConfig, minimize, optimize_shape
from .solve import Port, frequency_sweep, goal, solve_system
from .spaces import build_spaces
from .splines import KnotVector, NurbsPatch

__version__ = "0.1.0"

__all__ = [
    "ConformityError", "DesignError", "GeometryError", "IgaPeecError", "InfeasibleDesign",
    "KnotVector", "Medium", "MultipatchSurface", "NumericalError", "NurbsPatch", "Port",
    "QuadratureError", "QuadratureOrders", "TrustRegionConfig", "VACUUM", "apply_design",
    "assemble", "assemble_sweep", "build_spaces", "frequency_sweep", "goal", "load_geometry",
    "minimize", "optimize_shape", "save_geometry", "solve_system",
]
