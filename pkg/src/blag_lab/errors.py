"""Exception hierarchy shared by all modules."""

from __future__ import annotations


class BlagLabError(Exception):
    """Base class for every error raised by this package."""


class InvalidParameters(BlagLabError, ValueError):
    pass


class ParseError(BlagLabError, ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class Infeasible(BlagLabError):
    pass


class EmptyTargetSet(BlagLabError):
    pass


class InvalidCombination(BlagLabError, ValueError):
    pass


class InstanceTooLarge(BlagLabError):
    pass


class ConfigValidationError(BlagLabError):
    """Carries every violated constraint, each prefixed by its key path."""

    def __init__(self, errors: list[str]) -> None:
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class ReplicateError(BlagLabError):
    """A module error raised inside one replicate, tagged with its seed."""

    def __init__(self, seed: int, cause: BaseException) -> None:
        self.seed = seed
        self.cause = cause
        super().__init__(f"replicate seed={seed}: {type(cause).__name__}: {cause}")
