"""Stabilized finite elements for steady advection-diffusion with weakly
enforced Dirichlet conditions.

The package couples Nitsche's method with residual-based multiscale
stabilization, including a boundary stabilization term that accounts for the
non-vanishing fine scales on weakly enforced Dirichlet boundaries, exact 1D
parameter definitions through element-local fine-scale Green's functions, and
a reference projector that defines the target coarse-scale solution.
"""

from .errors import ConfigError, MeshError, QuadratureError, SolverError

__all__ = ["ConfigError", "MeshError", "QuadratureError", "SolverError"]
__version__ = "0.1.0"
