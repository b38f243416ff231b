"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition."""


class DegenerateInputError(ValueError):
    """Numerically degenerate input, e.g. a zero-norm vector fed to cosine."""


class UndefinedAPError(ValueError):
    """Average precision requested for a query with no relevant items."""


class TrainingFailureError(RuntimeError):
    """Training diverged or produced a non-finite loss."""
