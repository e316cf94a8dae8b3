"""Exception hierarchy shared by all modules."""


class LeoBHError(Exception):
    """Base class for every error raised by the package."""


class ParameterError(LeoBHError, ValueError):
    """An input violates a documented invariant."""


class VisibilityError(LeoBHError):
    """A ground point is below the horizon of the satellite."""


class HorizonError(VisibilityError):
    """A translated beam center falls outside the UV unit disk."""


class CoverageError(LeoBHError):
    """Too few satellites are visible to position a user."""


class InsufficientAnchorsError(LeoBHError):
    """Fewer than four satellites were supplied for a 3D TDOA fix."""


class DegenerateGeometryError(LeoBHError):
    """The Fisher information is (numerically) rank deficient."""


class UnusableSatelliteError(LeoBHError):
    """A satellite without an associated beam entered the covariance."""


class AssociationError(LeoBHError):
    """No active beam is available for a required (user, satellite) pair."""


class AssemblyError(LeoBHError):
    """The power-allocation SDP could not be assembled."""


class SolverConditioningError(LeoBHError):
    """The Newton system of the interior-point solver became singular."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(LeoBHError, ValueError):
    """The scenario configuration file is malformed or invalid."""
