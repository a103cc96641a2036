"""Catalogue of scalar parameter families a(y).

Families are restricted to a fixed catalogue so that every system description stays serializable.
"""
from __future__ import annotations

import logging
from typing import Dict, Tuple, Union

import numpy as np

logger = logging.getLogger(__name__)

FAMILY_KINDS = ("constant", "affine", "tanh", "sin")


class ParameterFamily:
    """One scalar function of the slow variable y, acting through a single coordinate of y."""

    def __init__(self,
                 kind: str,
                 offset: float = 0.0,
                 amplitude: float = 0.0,
                 shift: float = 0.0,
                 coordinate: int = 0) -> None:
        """Create a family.

        :param kind: one of FAMILY_KINDS
        :param offset: additive constant
        :param amplitude: slope (affine) or amplitude (tanh, sin); ignored for constant
        :param shift: the argument is y[coordinate] - shift
        :param coordinate: which coordinate of y the family depends on
        """
        if kind not in FAMILY_KINDS:
            raise ValueError(f"unsupported family kind '{kind}', expected one of {FAMILY_KINDS}")
        if coordinate < 0:
            raise ValueError(f"coordinate must be non-negative, got {coordinate}")
        self.kind = kind
        self.offset = float(offset)
        self.amplitude = float(amplitude) if kind != "constant" else 0.0
        self.shift = float(shift)
        self.coordinate = int(coordinate)

    @classmethod
    def constant(cls, value: float) -> ParameterFamily:
        """Shortcut for a constant family."""
        return cls("constant", offset=value)

    def _argument(self, y: Union[float, np.ndarray]) -> float:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.coordinate >= y.size:
            raise ValueError(f"family acts on coordinate {self.coordinate} but y has only {y.size} entries")
        return float(y[self.coordinate]) - self.shift

    def __call__(self, y: Union[float, np.ndarray]) -> float:
        s = self._argument(y)
        if self.kind == "affine":
            return self.offset + self.amplitude * s
        if self.kind == "tanh":
            return self.offset + self.amplitude * np.tanh(s)
        if self.kind == "sin":
            return self.offset + self.amplitude * np.sin(s)
        return self.offset

    def derivative(self, y: Union[float, np.ndarray]) -> float:
        """Derivative with respect to the coordinate the family acts on."""
        s = self._argument(y)
        if self.kind == "affine":
            return self.amplitude
        if self.kind == "tanh":
            return self.amplitude / np.cosh(s) ** 2
        if self.kind == "sin":
            return self.amplitude * np.cos(s)
        return 0.0

    def gradient(self, y: Union[float, np.ndarray]) -> np.ndarray:
        """Gradient with respect to the whole vector y."""
        y = np.atleast_1d(np.asarray(y, dtype=float))
        grad = np.zeros(y.size)
        grad[self.coordinate] = self.derivative(y)
        return grad

    def bounds(self, y_lower: float, y_upper: float, samples: int = 401) -> Tuple[float, float]:
        """Return (min, max) of the family over y[coordinate] in [y_lower, y_upper].

        The catalogue functions are monotone (constant, affine, tanh) or periodic (sin); for sin the extrema
        inside the interval are added to the sampled values.
        """
        s = np.linspace(y_lower, y_upper, samples)
        values = [self(np.full(self.coordinate + 1, v)) for v in s]
        if self.kind == "sin" and self.amplitude != 0:
            for k in range(int(np.floor((y_lower - self.shift) / np.pi)) - 1,
                           int(np.ceil((y_upper - self.shift) / np.pi)) + 1):
                peak = self.shift + np.pi / 2 + k * np.pi
                if y_lower <= peak <= y_upper:
                    values.append(self(np.full(self.coordinate + 1, peak)))
        return float(min(values)), float(max(values))

    def shifted(self, delta: float) -> ParameterFamily:
        """Create the family a(y) + delta."""
        return ParameterFamily(self.kind, self.offset + delta, self.amplitude, self.shift, self.coordinate)

    @property
    def as_dict(self) -> Dict[str, Union[str, float, int]]:
        """Convert to dict."""
        return {
            "kind": self.kind,
            "offset": self.offset,
            "amplitude": self.amplitude,
            "shift": self.shift,
            "coordinate": self.coordinate,
        }

    @classmethod
    def from_dict(cls, family_dict: Dict) -> ParameterFamily:
        """Create a family from a dictionary with key 'kind' and optional 'offset', 'amplitude', 'shift', 'coordinate'.

        Unknown keys raise TypeError, as any unexpected keyword argument does.
        """
        return ParameterFamily(**family_dict)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ParameterFamily) and self.as_dict == other.as_dict

    def __repr__(self) -> str:
        return (f"<ParameterFamily(kind={self.kind}, offset={self.offset}, amplitude={self.amplitude}, "
                f"shift={self.shift}, coordinate={self.coordinate})>")
