"""Exception hierarchy shared by every module.

Each failure class maps onto one CLI exit code (see :mod:`entropic_stopping.cli`).
"""
from __future__ import annotations


class EngineError(Exception):
    """Base class for all errors raised by the engine."""


class ConfigurationError(EngineError, ValueError):
    """Invalid market, grid, scheme or experiment configuration."""


class DomainError(EngineError, ValueError):
    """A special function was called outside its domain."""


class InsufficientDataError(EngineError, ValueError):
    """Too few samples to fit the requested regression basis."""


class StateError(EngineError, RuntimeError):
    """An object was used before it was ready (e.g. unfitted timestep)."""


class NumericalError(EngineError, ArithmeticError):
    """A numerical routine produced a non-finite or otherwise unusable result."""
