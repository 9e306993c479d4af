"""Exception types shared across the package."""


class PorovemError(Exception):
    """Base class for all package errors."""


class MeshError(PorovemError, ValueError):
    """Invalid mesh construction arguments or broken mesh invariants."""


class InterfaceMismatchError(MeshError):
    """Subdomain traces do not line up within tolerance when merging."""


class UnsupportedOrderError(PorovemError, ValueError):
    """Polynomial degree outside the supported range (k >= 2)."""


class ConditioningError(PorovemError, RuntimeError):
    """A local dense solve is numerically rank deficient."""


class SolverError(PorovemError, RuntimeError):
    """Global factorization or solve failed."""


class ConfigError(PorovemError, ValueError):
    """Invalid run configuration."""


class NoExactSolution(PorovemError, LookupError):
    """The requested case has no closed-form solution to evaluate."""
