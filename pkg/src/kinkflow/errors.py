"""Exception hierarchy.

Validation problems derive from :class:`ValueError`; numerical breakdowns
derive from :class:`ArithmeticError`. The CLI maps the two families onto
different exit codes.
"""


class KinkflowError(Exception):
    """Base class for all package errors."""


class ValidationError(KinkflowError, ValueError):
    pass


class InvalidSizeError(ValidationError):
    pass


class ConstraintViolationError(ValidationError):
    """Intra-block couplings fail to dominate every inter-block coupling."""


class SingularCouplingError(ValidationError):
    pass


class RGValidityError(ValidationError):
    """Bare field too large for the block-spin decimation step."""


class OracleSizeError(ValidationError):
    pass


class NumericError(KinkflowError, ArithmeticError):
    pass


class WorkspaceError(NumericError):
    """A banded product would exceed the allotted bandwidth."""


class StepFailureError(NumericError):
    pass


class IntegrationError(NumericError):
    """Orthogonality drift exceeded tolerance; carries the last good time."""

    def __init__(self, message: str, last_good_t: float):
        super().__init__(message)
        self.last_good_t = last_good_t
