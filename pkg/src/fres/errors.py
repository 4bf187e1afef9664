"""Exception types shared across the package."""


class FresError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FresError, ValueError):
    """Invalid configuration value or combination."""


class InfeasibleLinkError(FresError):
    """A task is offloaded over a link whose data rate is zero."""


class InvalidAllocationError(FresError, ValueError):
    """A remote task was granted no computing resource."""


class DegenerateGeometryError(FresError, ValueError):
    """Two entities that must be apart share a position."""


class ShapeError(FresError, ValueError):
    """Array dimensions do not line up."""


class CheckpointError(FresError):
    """A checkpoint payload is corrupt or has an unsupported version."""


class ProgressiveAdjustRequired(FresError):
    """The agent was asked to act for more UAVs than it has slices for."""


class BudgetExceeded(FresError):
    """An exhaustive enumeration would exceed its evaluation budget."""
