"""Exception hierarchy shared by all modules."""


class SynthPIError(Exception):
    """Base class for package errors."""


class SchemaError(SynthPIError):
    """Input file lacks a required column or key."""


class DataError(SynthPIError):
    """Input data is unusable (missing cells, bad values, bad ranges)."""


class ConfigError(SynthPIError):
    """Inconsistent configuration or unknown option."""


class UsageError(SynthPIError, ValueError):
    """An argument is outside its documented domain."""


class ConvergenceError(SynthPIError):
    """An iterative solver hit its iteration cap.

    ``best`` carries the best iterate found so far.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class UnderdeterminedError(SynthPIError):
    """Too few observations for the requested regression basis."""


class UnboundedError(SynthPIError):
    """Optimization region is not compact along flat curvature directions."""
