"""Two-bubble dynamics for the energy-critical biharmonic NLS in radial symmetry, N >= 13."""
from .radial_core import ConfigError, RadialField, RadialGrid, build_grid, grid_for_scale
from .ground_state import Constants, W_profile, closed_form_constants
from .linearized import EigenPair, solve_eigenpair

__version__ = "0.1.0"
__all__ = ["ConfigError", "RadialField", "RadialGrid", "build_grid", "grid_for_scale", "Constants",
           "W_profile", "closed_form_constants", "EigenPair", "solve_eigenpair"]
