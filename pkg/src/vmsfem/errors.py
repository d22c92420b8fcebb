"""Exception types shared across the package."""


class MeshError(Exception):
    """Invalid mesh: parse failure, bad topology or inverted elements."""


class ConfigError(Exception):
    """Invalid run configuration or field expression."""


class SolverError(Exception):
    """Linear solve failed or produced an unacceptable residual."""


class QuadratureError(Exception):
    """Numerical quadrature failed to converge to the requested tolerance."""
