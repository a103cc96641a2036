"""Numerical tolerances shared by all stages of the analysis.

Defaults are class attributes; an instance only stores what was overridden.
"""
from __future__ import annotations

import logging
from typing import Any, Dict, Union

logger = logging.getLogger(__name__)

Number = Union[int, float]


class Tolerances:
    """Tolerances and budgets of one analysis run."""

    # endpoints
    newton_tol = 1e-12
    newton_max_iter = 50
    delta0_min = 1e-6

    # integration
    rtol = 1e-10
    atol = 1e-12
    event_tol = 1e-12
    rho_asym = 1e-9
    rho_dichotomy = 1e-4
    seed_scale = 1e-10
    t_budget = 200.0

    # dichotomy and adjoints
    rank_gap = 1e-8
    projection_tol = 1e-10
    chunk_length = 4.0

    # melnikov
    fd_step = 1e-5
    root_tol = 1e-12
    degenerate_derivative = 1e-8
    melnikov_rank_tol = 1e-6
    melnikov_noise_floor = 1e-7
    connection_tol = 1e-8
    quad_rel = 1e-10
    quad_abs = 1e-13

    # shooting
    shoot_tol = 1e-10
    shoot_max_iter = 40
    shoot_seed = 1e-7
    verify_tol = 0.05

    _integer_fields = ("newton_max_iter", "shoot_max_iter")

    def __init__(self, **overrides: Number) -> None:
        """Create tolerances, replacing the defaults named in `overrides`.

        :param overrides: positive numbers keyed by attribute name
        :raises ValueError: unknown name or non-positive value
        """
        self._overrides: Dict[str, Number] = {}
        for name, value in overrides.items():
            self._set(name, value)

    @classmethod
    def names(cls) -> tuple:
        """Names of all tunable tolerances, in declaration order."""
        return tuple(name for name, value in vars(cls).items()
                     if not name.startswith("_") and isinstance(value, (int, float)))

    def _set(self, name: str, value: Any) -> None:
        if name not in self.names():
            raise ValueError(f"unknown tolerance '{name}'")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValueError(f"tolerance '{name}' must be a number, got {value!r}")
        if not value > 0:
            raise ValueError(f"tolerance '{name}' must be positive, got {value}")
        if name in self._integer_fields:
            value = int(value)
        self._overrides[name] = value
        setattr(self, name, value)

    def event_tol_at(self, level: float) -> float:
        """Event tolerance for a crossing of the level `level`."""
        return self.event_tol * max(1.0, abs(level))

    def updated(self, **overrides: Number) -> Tolerances:
        """Return a copy with further overrides applied."""
        return Tolerances(**{**self._overrides, **overrides})

    def tightened(self, factor: float = 100.0) -> Tolerances:
        """Return a copy whose integrator tolerances are divided by `factor`."""
        return self.updated(rtol=self.rtol / factor, atol=self.atol / factor)

    @property
    def as_dict(self) -> Dict[str, Number]:
        """Convert to dict of all values, defaults included."""
        return {name: getattr(self, name) for name in self.names()}

    @classmethod
    def from_dict(cls, values: Dict[str, Number]) -> Tolerances:
        """Create tolerances from a (partial) dictionary; unknown keys are rejected."""
        return cls(**values)

    @staticmethod
    def parse_overrides(text: str) -> Dict[str, float]:
        """Parse a string like 'rtol=1e-11,shoot_tol=1e-9' into a dict (names are checked on construction)."""
        overrides = {}
        for item in filter(None, (part.strip() for part in text.split(","))):
            if "=" not in item:
                raise ValueError(f"tolerance override '{item}' is not of the form key=value")
            key, value = (s.strip() for s in item.split("=", 1))
            try:
                overrides[key] = float(value)
            except ValueError:
                raise ValueError(f"tolerance override '{item}' has a non-numeric value")
        logger.debug(f"tolerance overrides: {overrides}")
        return overrides

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Tolerances) and self.as_dict == other.as_dict

    def __repr__(self) -> str:
        return f"<Tolerances({', '.join(f'{k}={v}' for k, v in self._overrides.items())})>"
