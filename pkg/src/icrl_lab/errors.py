from __future__ import annotations

from collections.abc import Sequence


class IcrlLabError(Exception):
    """Base class for all errors raised by icrl_lab."""

    exit_code = 1


class ConfigError(IcrlLabError, ValueError):
    """Invalid or inconsistent configuration value."""

    exit_code = 2


class NetworkShapeError(IcrlLabError, ValueError):
    """Array shape does not match what a network expects."""

    def __init__(self, what: str, expected: object, actual: object):
        super().__init__(f"{what}: expected {expected}, got {actual}")
        self.what = what
        self.expected = expected
        self.actual = actual


class NonFiniteError(IcrlLabError, ArithmeticError):
    """A loss, gradient or weight became NaN or infinite."""


class NonConvergenceError(IcrlLabError):
    """An iterative solver ran out of budget without meeting its target."""

    exit_code = 3


class DatasetError(IcrlLabError):
    """Malformed, empty or dirty trajectory dataset / run directory."""

    exit_code = 4


class EnvError(IcrlLabError, ValueError):
    """Invalid environment name, action or operation."""


class FeatureMismatchError(IcrlLabError, ValueError):
    """A constraint net asks for features the target environment cannot supply."""

    exit_code = 2

    def __init__(self, missing: Sequence[str]):
        self.missing = tuple(missing)
        super().__init__(f"target environment is missing features: {', '.join(self.missing)}")
