"""WorkingBox class implements the region of state space where a system is trusted.

Fields are declared on the whole space but validated (and trajectories kept) inside an axis-aligned box;
main methods support
* membership, excursion and face margin of points, and
* sampling and conversion from/to dictionaries.
"""
from __future__ import annotations

import logging
from typing import Dict, Iterable, List

import numpy as np

from hetero_melnikov.errors import HeteroMelnikovError

logger = logging.getLogger(__name__)


class LeftWorkingBox(HeteroMelnikovError):
    """A trajectory left the declared working box."""


class WorkingBox:
    """Data class for storing n-dimensional boxes.

    The need of this arose to make explicit where a piecewise field has been validated, instead of silently
    extending it to the whole space.
    """

    def __init__(self, lower: Iterable[float], upper: Iterable[float]) -> None:
        """Define lower and upper corners of the box.

        :param lower: lower bounds per coordinate
        :param upper: upper bounds per coordinate, same length as lower
        """
        self.lower = np.asarray(list(lower), dtype=float)
        self.upper = np.asarray(list(upper), dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise ValueError(f"box corners must be vectors of equal length, got {self.lower} and {self.upper}")
        if np.any(self.lower > self.upper):
            logger.warning(f"box lower bound is larger than upper bound (lower: {self.lower}, upper: {self.upper})")

    @property
    def dim(self) -> int:
        """Get dimension of the box."""
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        """Get side lengths of the box."""
        return self.upper - self.lower

    @property
    def as_dict(self) -> Dict[str, List[float]]:
        """Convert to dict."""
        return {
            "lower": [float(v) for v in self.lower],
            "upper": [float(v) for v in self.upper],
        }

    @classmethod
    def from_dict(cls, box_dict: Dict) -> WorkingBox:
        """Create a box from a dictionary.

        :param box_dict: dictionary with keys 'lower', 'upper'.
        """
        return WorkingBox(**box_dict)

    def contains(self, x: np.ndarray) -> bool:
        """Check if the point x lies in the closed box."""
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def excursion(self, x: np.ndarray) -> float:
        """Return the Euclidean distance of x from the box (0 inside)."""
        x = np.asarray(x, dtype=float)
        outside = np.maximum(self.lower - x, 0) + np.maximum(x - self.upper, 0)
        return float(np.linalg.norm(outside))

    def margin(self, x: np.ndarray) -> float:
        """Signed distance to the nearest face, positive inside; used as an integration event."""
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lower), np.min(self.upper - x)))

    def check(self, x: np.ndarray, what: str = "point") -> None:
        """Raise LeftWorkingBox if x is outside the box."""
        if not self.contains(x):
            raise LeftWorkingBox(f"{what} {x} is outside the working box {self} (excursion {self.excursion(x):.3g})")

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        """Draw `count` uniform points from the box, one per row."""
        return self.lower + rng.random((count, self.dim)) * self.widths

    def __eq__(self, other: object) -> bool:
        return isinstance(other, WorkingBox) and self.as_dict == other.as_dict

    def __repr__(self) -> str:
        return f"<WorkingBox(lower={list(self.lower)}, upper={list(self.upper)})>"
