"""
Exceptions raised by the market simulator and the potential toolkit.

Every domain error derives from ``MarketError`` (itself a ``ValueError``),
so callers that only care about "bad input" can catch ``ValueError``.
"""

from __future__ import annotations

from typing import Sequence


class MarketError(ValueError):
    """Base class for all domain errors."""


class ConfigurationError(MarketError):
    """A parameter record violates one of its invariants."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class InsufficientHistoryError(MarketError):
    """Not enough ticks (or returns) for the requested operation."""


class DegenerateWindowError(MarketError):
    """The displacement spread of a window is too small for a fit."""


class NoEstimatesError(MarketError):
    """An average was requested over an empty set of estimates."""


class UnderdeterminedFitError(MarketError):
    """A line fit needs at least two distinct abscissae."""


class MarketStalledError(MarketError):
    """The step budget ran out before the requested number of ticks."""

    def __init__(self, ticks_obtained: int, ticks_requested: int, max_steps: int):
        self.ticks_obtained = ticks_obtained
        self.ticks_requested = ticks_requested
        self.max_steps = max_steps
        super().__init__(
            f"market stalled: {ticks_obtained} of {ticks_requested} ticks "
            f"after {max_steps} steps"
        )


class TickFormatError(MarketError):
    """A tick file could not be parsed."""

    def __init__(self, path: str, message: str, lines: Sequence[int] = ()):
        self.path = path
        self.lines = list(lines)
        where = f" (lines {', '.join(str(n) for n in self.lines[:10])})" if self.lines else ""
        super().__init__(f"{path}: {message}{where}")


class TradeInvariantError(AssertionError):
    """Internal invariant of the matching step broken; never a user error."""
