"""Numerics for correlated random matrices: Dyson equation, cusps, characteristic flows,
local-law verification and Pearcey statistics."""
from .errors import CuspflowError
from .mde import DataPair, MdeSolution, SolverOptions, SpectralPoint, scdos, solve_mde
from .models import build_model, semicircle_model, two_level_family, two_level_model
from .selfenergy import COMPLEX, REAL

__all__ = ["COMPLEX", "REAL", "CuspflowError", "DataPair", "MdeSolution", "SolverOptions",
           "SpectralPoint", "build_model", "scdos", "semicircle_model", "solve_mde",
           "two_level_family", "two_level_model"]
__version__ = "0.1.0"
