# -*- coding: utf-8 -*-


class ConfigError(ValueError):
    """Experiment config failed validation."""


class UsageError(ValueError):
    """An argument violates an operation's precondition."""


class ShapeError(UsageError):
    """Tensor shapes are incompatible."""

    def __init__(self, message: str, *shapes):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(tuple(_s)) for _s in shapes)})"
        super().__init__(message)
        self.shapes = tuple(tuple(_s) for _s in shapes)


class FoldError(ValueError):
    """Batch-norm statistics cannot be folded into an integer threshold."""


class CorruptFileError(ValueError):
    """A binary artifact has a bad magic, version or payload."""


class MissingInputError(FileNotFoundError):
    """A required input artifact does not exist."""


class VerificationError(RuntimeError):
    """Deployed network is not equivalent to its trained network."""
