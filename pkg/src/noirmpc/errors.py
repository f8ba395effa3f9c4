"""Exception types shared across the package."""


class NoirError(Exception):
    """Base class for package-specific errors."""


class NetworkFormatError(NoirError):
    """A network document could not be parsed or is structurally malformed.

    ``line`` carries the 1-based line number when the offending line is known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GridPlacementError(NoirError):
    """Requested grid dimensions or boundary-road counts cannot be realized."""


class ConfigError(NoirError):
    """A run configuration file is missing, malformed, or has unknown keys."""


class ConditioningError(NoirError):
    """A linear system tied to the flow model is singular or too ill-conditioned.

    Usually signals a violated spectral-radius premise of the sampled model.
    """


class SimulationError(NoirError):
    """A closed-loop run failed; the message names the offending step."""


class InvariantBreachError(NoirError):
    """An internal invariant failed to hold; indicates a defect, not bad input."""
