"""Roots of the exception hierarchy.

Module-specific errors are declared next to the operation that raises them; they all derive from one of the two
classes below, so that callers (the CLI in particular) can tell a broken input from a violated hypothesis.
"""
from typing import Optional


class HeteroMelnikovError(Exception):
    """Base class of errors raised on purpose by this package."""


class AssumptionViolation(HeteroMelnikovError):
    """A modelling hypothesis needed for the persistence analysis does not hold."""

    assumption = "unspecified"

    def __init__(self, message: str, assumption: Optional[str] = None) -> None:
        super().__init__(message)
        if assumption is not None:
            self.assumption = assumption
