"""Exception types raised by the package."""


class BBMPEError(Exception):
    """Base class for all package errors."""


class SpectralError(BBMPEError):
    """The discretized eigenproblem produced an unusable solution."""


class BracketError(BBMPEError):
    """A root or minimum could not be bracketed."""


class SimulationError(BBMPEError):
    """Invalid simulation request or unusable simulation output."""


class InsufficientSamplesError(BBMPEError):
    """Too few replicates (or too small an effective sample) for a statistic."""


class StabilityError(BBMPEError):
    """PDE step violates the scheme's stability or invariant-region bounds."""


class DomainError(BBMPEError):
    """Input outside an operation's domain, e.g. a PDE front reaching the grid edge."""


class ConfigError(BBMPEError):
    """Malformed experiment configuration."""

    def __init__(self, message, key=None, line=None):
        self.base_message = message
        self.key = key
        self.line = line
        where = []
        if key is not None:
            where.append(f"key {key!r}")
        if line is not None:
            where.append(f"line {line}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
