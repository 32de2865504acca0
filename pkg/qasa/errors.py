"""Exception types raised by `qasa`.

Every class also derives from a builtin exception, so callers that only care about
the builtin category (e.g. ``ValueError``) can keep catching that.
"""
from typing import Optional


class QasaError(Exception):
    """Base class for all errors raised by `qasa`."""


class DimensionError(QasaError, ValueError):
    """Array shapes do not fit the operation."""


class ContractViolation(QasaError, ValueError):
    """A precondition of an operation is not met."""


class ConfigurationError(QasaError, ValueError):
    """A configuration value is unknown or invalid.

    Parameters
    ----------
    message : str
        Human-readable description.

    field : str, optional
        Dotted path of the offending configuration field, e.g. ``"train.lr"``.
    """

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class UnsupportedGateError(QasaError, ValueError):
    """A gate cannot be handled by the requested routine."""


class NumericalAbort(QasaError, RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(
            f"Non-finite loss ({loss}) in epoch {epoch}, batch {batch}. Training aborted."
        )
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
