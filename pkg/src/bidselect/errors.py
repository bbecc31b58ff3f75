"""Exception hierarchy shared by all modules.

The CLI maps :class:`ValidationError` to exit code 2 and every other
:class:`BidSelectError` to exit code 3.
"""


class BidSelectError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 3


class ValidationError(BidSelectError, ValueError):
    """Input data or configuration violates a contract."""

    exit_code = 2

    def __init__(self, message, field=None, row=None):
        self.field = field
        self.row = row
        super().__init__(message)


class ColumnMismatchError(ValidationError):
    """Feature columns do not match what a model was trained on."""


class NoCrossingError(BidSelectError):
    """Bid and ask curves do not intersect on the shared price grid."""

    def __init__(self, message, side=None):
        self.side = side
        super().__init__(message)


class TrainingDivergedError(BidSelectError):
    """A training loop produced a non-finite loss."""

    def __init__(self, message, epoch):
        self.epoch = epoch
        super().__init__(message)
