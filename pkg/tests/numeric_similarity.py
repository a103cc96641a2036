"""This module contains helper functions to better test similarity of numerical objects.

In the tests, we often cannot enforce equality of a computed object with its closed form up to the last digit,
and subspaces are only defined up to a change of basis.
"""
import numpy as np
from scipy.linalg import subspace_angles


def relative_error(computed: np.ndarray, expected: np.ndarray) -> float:
    """|computed - expected| / |expected|, falling back to the absolute error when expected vanishes."""
    computed, expected = np.asarray(computed, dtype=float), np.asarray(expected, dtype=float)
    scale = np.linalg.norm(expected)
    error = np.linalg.norm(computed - expected)
    return float(error / scale) if scale > 0 else float(error)


def subspace_angle(first: np.ndarray, second: np.ndarray) -> float:
    """Largest principal angle between the column spans of two matrices (vectors are single columns)."""
    first, second = np.asarray(first, dtype=float), np.asarray(second, dtype=float)
    if first.ndim == 1:
        first = first[:, None]
    if second.ndim == 1:
        second = second[:, None]
    return float(np.max(subspace_angles(first, second)))


def spans_are_similar(first: np.ndarray, second: np.ndarray, tolerance: float = 1e-6) -> bool:
    """Check the two column spans coincide, up to the principal-angle tolerance."""
    return subspace_angle(first, second) < tolerance
