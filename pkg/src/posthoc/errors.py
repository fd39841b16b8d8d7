"""Exception hierarchy shared by every module."""


class PosthocError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(PosthocError, ValueError):
    """An input violates a documented precondition or invariant."""


class FormatError(PosthocError):
    """A byte stream or file does not follow the expected layout."""


class TrainingError(PosthocError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
