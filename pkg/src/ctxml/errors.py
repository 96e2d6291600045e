"""Exception hierarchy shared across the package.

The CLI maps each class to a fixed exit code, so library code raises the
most specific class that applies.
"""

from __future__ import annotations


class CtxmlError(Exception):
    """Base class for all package errors."""


class ShapeError(CtxmlError, ValueError):
    pass


class ConfigError(CtxmlError, ValueError):
    pass


class DataError(CtxmlError, ValueError):
    pass


class NumericError(CtxmlError, ArithmeticError):
    pass


class StateError(CtxmlError, RuntimeError):
    pass


class VersionError(CtxmlError, ValueError):
    pass
