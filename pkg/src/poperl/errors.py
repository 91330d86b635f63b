"""Exception hierarchy shared across the package.

Each class carries a short ``category`` string that the CLI reports as the
machine-readable error kind.
"""


class PoperlError(Exception):
    category = "error"


class ConfigError(PoperlError, ValueError):
    """Invalid configuration or mismatched dimensions."""

    category = "config"


class NumericError(PoperlError, FloatingPointError):
    """NaN/inf detected where a finite value is required."""

    category = "numeric"


class NotReadyError(PoperlError):
    """A replay store cannot serve the requested batch yet."""

    category = "not_ready"


class DomainError(PoperlError, ValueError):
    category = "domain"


class SequencingError(PoperlError):
    """An operation was invoked before its inputs were produced."""

    category = "sequencing"


class WorkerError(PoperlError):
    category = "worker"
