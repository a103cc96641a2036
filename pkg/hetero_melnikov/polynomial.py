"""Polynomial fields in (x, y) with optional parameter-family coefficients.

A term is `coeff * family(y) * prod(x_i ** p_i) * prod(y_j ** q_j)`; a field is a list of components, each a sum
of terms. Values and Jacobians are exact, which is what the variational machinery needs.
"""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence

import numpy as np

from hetero_melnikov.families import ParameterFamily

logger = logging.getLogger(__name__)


def _monomial(v: np.ndarray, powers: np.ndarray) -> float:
    return float(np.prod(v ** powers))


def _monomial_gradient(v: np.ndarray, powers: np.ndarray) -> np.ndarray:
    grad = np.zeros(v.size)
    for i in np.flatnonzero(powers):
        lowered = powers.copy()
        lowered[i] -= 1
        grad[i] = powers[i] * _monomial(v, lowered)
    return grad


class PolynomialTerm:
    """One term of a polynomial component."""

    def __init__(self,
                 coeff: float,
                 x_powers: Sequence[int],
                 y_powers: Sequence[int],
                 family: Optional[ParameterFamily] = None,
                 family_name: Optional[str] = None) -> None:
        self.coeff = float(coeff)
        self.x_powers = np.asarray(x_powers, dtype=int)
        self.y_powers = np.asarray(y_powers, dtype=int)
        if np.any(self.x_powers < 0) or np.any(self.y_powers < 0):
            raise ValueError(f"negative exponent in x^{list(self.x_powers)} y^{list(self.y_powers)}")
        self.family = family
        self.family_name = family_name

    def _factor(self, y: np.ndarray) -> float:
        return self.coeff * (self.family(y) if self.family is not None else 1.0)

    def value(self, x: np.ndarray, y: np.ndarray) -> float:
        """Evaluate the term."""
        return self._factor(y) * _monomial(x, self.x_powers) * _monomial(y, self.y_powers)

    def grad_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of the term in x."""
        return self._factor(y) * _monomial(y, self.y_powers) * _monomial_gradient(x, self.x_powers)

    def grad_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of the term in y, family factor included."""
        x_part = self.coeff * _monomial(x, self.x_powers)
        family_value = self.family(y) if self.family is not None else 1.0
        grad = family_value * _monomial_gradient(y, self.y_powers)
        if self.family is not None:
            grad = grad + self.family.gradient(y) * _monomial(y, self.y_powers)
        return x_part * grad

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        term = {"coeff": self.coeff, "x": [int(p) for p in self.x_powers], "y": [int(q) for q in self.y_powers]}
        if self.family_name is not None:
            term["family"] = self.family_name
        return term

    @classmethod
    def from_dict(cls, term_dict: Dict, n: int, m: int, families: Dict[str, ParameterFamily]) -> PolynomialTerm:
        """Create a term from {'coeff': c, 'x': [...], 'y': [...], 'family': name}; 'y' and 'family' optional."""
        unknown = set(term_dict) - {"coeff", "x", "y", "family"}
        if unknown:
            raise KeyError(f"unknown keys {sorted(unknown)} in polynomial term")
        x_powers = term_dict.get("x", [0] * n)
        y_powers = term_dict.get("y", [0] * m)
        if len(x_powers) != n or len(y_powers) != m:
            raise ValueError(f"term {term_dict} must have {n} x-exponents and {m} y-exponents")
        name = term_dict.get("family")
        if name is not None and name not in families:
            raise KeyError(f"term refers to undeclared family '{name}'")
        return cls(term_dict.get("coeff", 1.0), x_powers, y_powers,
                   family=families[name] if name is not None else None, family_name=name)

    def __repr__(self) -> str:
        return f"<PolynomialTerm({self.as_dict})>"


class PolynomialField:
    """Vector of polynomial components, f: (x, y) -> R^k."""

    def __init__(self, components: List[List[PolynomialTerm]], n: int, m: int) -> None:
        self.components = components
        self.n = n
        self.m = m

    @property
    def size(self) -> int:
        """Number of components."""
        return len(self.components)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.array([sum(term.value(x, y) for term in component) for component in self.components])

    def jacobian_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Jacobian in x, shape (size, n)."""
        x = np.asarray(x, dtype=float)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        jac = np.zeros((self.size, self.n))
        for row, component in enumerate(self.components):
            for term in component:
                jac[row] += term.grad_x(x, y)
        return jac

    def jacobian_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Jacobian in y, shape (size, m)."""
        x = np.asarray(x, dtype=float)
        y = np.atleast_1d(np.asarray(y, dtype=float))
        jac = np.zeros((self.size, self.m))
        for row, component in enumerate(self.components):
            for term in component:
                jac[row] += term.grad_y(x, y)
        return jac

    @property
    def as_dict(self) -> List[List[Dict]]:
        """Convert to a list of components, each a list of term dicts."""
        return [[term.as_dict for term in component] for component in self.components]

    @classmethod
    def from_dict(cls,
                  components: List[List[Dict]],
                  n: int,
                  m: int,
                  families: Dict[str, ParameterFamily]) -> PolynomialField:
        """Create a field from nested lists of term dicts."""
        return cls([[PolynomialTerm.from_dict(term, n, m, families) for term in component]
                    for component in components], n, m)

    def __repr__(self) -> str:
        return f"<PolynomialField(n={self.n}, m={self.m}, components={self.size})>"
