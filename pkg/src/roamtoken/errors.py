"""Exception types shared across the package."""


class RoamTokenError(Exception):
    """Base class for all package-specific errors."""


class SingularModel(RoamTokenError):
    """The combined observation model is numerically singular."""


class GenerationFailed(RoamTokenError):
    """Random graph generation exhausted its retry budget."""


class SequenceExhausted(RoamTokenError):
    """A non-cyclic deterministic graph sequence has no frame for the requested time."""


class UnsupportedProcess(RoamTokenError):
    """The operation is undefined for this kind of graph process."""


class SolveFailed(RoamTokenError):
    """A linear solve left a residual above tolerance."""


class MissingTrace(RoamTokenError):
    """A metric was requested from traces that did not record the needed series."""


class NonFiniteMetric(RoamTokenError):
    """A metric series contains NaN or infinity."""


class ConfigError(RoamTokenError):
    """Invalid configuration file, key, or override."""
