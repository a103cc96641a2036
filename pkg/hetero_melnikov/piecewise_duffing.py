"""Piecewise Duffing oscillator x'' = x (x - a(y)) (x - 1), with a = a_- for x < c and a = a_+ for x > c.

Closed forms of the frozen half-orbits, the persistence function D(y), and the windows of switching levels c for
which the frozen heteroclinic from (0, 0) to (1, 0) exists.
"""
from __future__ import annotations

import logging
from typing import Dict, Optional, Tuple, Union

import numpy as np

from hetero_melnikov.errors import AssumptionViolation, HeteroMelnikovError
from hetero_melnikov.families import ParameterFamily
from hetero_melnikov.system_model import PiecewiseSlowFastSystem, SmoothField, SwitchingSpec
from hetero_melnikov.working_box import WorkingBox

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# D is this multiple of the energy mismatch at the switching level; the flow-normalized Melnikov entry is D_y / D_SCALE
D_SCALE = 6.0


class InfeasibleRadicand(HeteroMelnikovError):
    """3c^2 - 4(a+1)c + 6a < 0: the level c is beyond the turning point of the frozen orbit."""


class DomainError(HeteroMelnikovError):
    """Parameters outside (0, 1)."""


class InfeasibleParameters(AssumptionViolation):
    """The switching level lies outside the feasibility window of the parameter range."""

    assumption = "c-feasibility window"


def radicand(a: float, c: float) -> float:
    """3c^2 - 4(a+1)c + 6a."""
    return 3 * c ** 2 - 4 * (a + 1) * c + 6 * a


def mu_coeffs(a: float, c: float) -> Tuple[float, float]:
    """Coefficients of the closed form 1/u = mu1 cosh(t sqrt(a)) - mu2 sinh(t sqrt(a)) + (a+1)/(3a).

    :raises InfeasibleRadicand: 3c^2 - 4(a+1)c + 6a < 0
    """
    value = radicand(a, c)
    if value < 0:
        if value < -1e-14:
            raise InfeasibleRadicand(f"radicand 3c^2 - 4(a+1)c + 6a = {value:.6g} < 0 for a={a}, c={c}")
        value = 0.0
    mu1 = 1 / c - (1 + 1 / a) / 3
    mu2 = float(np.sqrt(value / (6 * a * c ** 2)))
    return mu1, mu2


def mu_sum_positive(a: float, c: float) -> bool:
    """mu1 + mu2 > 0, which makes the closed form tend to 0 as t -> -inf."""
    mu1, mu2 = mu_coeffs(a, c)
    return mu1 + mu2 > 0


def turning_point(a: float) -> float:
    """Smaller root of 3u^2 - 4(a+1)u + 6a, where the frozen orbit leaving 0 turns back (0 < a < 1/2)."""
    return (2 * (a + 1) - np.sqrt(4 * a ** 2 - 10 * a + 4)) / 3


def v_closed(t: ArrayLike, a: float, c: float) -> Tuple[ArrayLike, ArrayLike]:
    """Increasing solution of x'' = x (x - a)(x - 1) with x(-inf) = 0 and x(0) = c, for t <= 0.

    :return: (u, u') evaluated at t
    """
    mu1, mu2 = mu_coeffs(a, c)
    if not mu_sum_positive(a, c):
        raise InfeasibleRadicand(f"mu1 + mu2 = {mu1 + mu2:.6g} <= 0 for a={a}, c={c}; the orbit does not leave 0")
    root = np.sqrt(a)
    grow, decay = np.exp(np.asarray(t, dtype=float) * root), np.exp(-np.asarray(t, dtype=float) * root)
    inverse = 0.5 * (mu1 - mu2) * grow + 0.5 * (mu1 + mu2) * decay + (a + 1) / (3 * a)
    u = 1 / inverse
    udot = -u ** 2 * root * (0.5 * (mu1 - mu2) * grow - 0.5 * (mu1 + mu2) * decay)
    return u, udot


def quartic_integral(a: float, lower: float, upper: float) -> float:
    """∫ u (u - a)(u - 1) du from lower to upper."""
    def antiderivative(u: float) -> float:
        return u ** 4 / 4 - (a + 1) * u ** 3 / 3 + a * u ** 2 / 2
    return antiderivative(upper) - antiderivative(lower)


def critical_a_plus(c: float) -> float:
    """Value of a_+ with D = 0 when a_- - a_+ = 1/2: (2c^3 - 3c^2 + 1) / 2."""
    return (2 * c ** 3 - 3 * c ** 2 + 1) / 2


def _check_unit_interval(**values: float) -> None:
    for name, value in values.items():
        if not 0 < value < 1:
            raise DomainError(f"{name} = {value} must lie in (0, 1)")


def feasibility_window(a_min: float, a_max: float) -> Optional[Tuple[float, float]]:
    """Open interval of switching levels c for which both frozen half-orbits reach x = c, or None if empty.

    a_min bounds a_- from below and a_max bounds a_+ from above. 3c < 2(a_min+1) - sqrt(4a_min^2 - 10a_min + 4) is
    required when a_min < 1/2 (the orbit leaving 0 turns back before c otherwise), and
    3c > 2a_max - 1 + sqrt(4a_max^2 + 2a_max - 2) when a_max > 1/2.

    :raises DomainError: a_min or a_max outside (0, 1)
    """
    _check_unit_interval(a_min=a_min, a_max=a_max)
    # the plus-side orbit is the minus-side one mirrored by x -> 1 - x, a -> 1 - a
    upper = turning_point(a_min) if a_min < 0.5 else 1.0
    lower = 1 - turning_point(1 - a_max) if a_max > 0.5 else 0.0
    if lower >= upper:
        return None
    return float(lower), float(upper)


def kappa_window(kappa: float) -> bool:
    """Whether the window is nonempty for a ranging over [1/2 - kappa, 1/2 + kappa]; true iff kappa < 3/16."""
    if not 0 <= kappa < 0.5:
        raise DomainError(f"kappa = {kappa} must lie in [0, 1/2)")
    return feasibility_window(0.5 - kappa, 0.5 + kappa) is not None


class DuffingParams:
    """Parameter families a_-(y), a_+(y), the switching level c and the working y-interval."""

    def __init__(self,
                 a_minus: ParameterFamily,
                 a_plus: ParameterFamily,
                 c: float,
                 y_interval: Tuple[float, float] = (-1.0, 1.0),
                 m: int = 1) -> None:
        _check_unit_interval(c=c)
        if y_interval[1] < y_interval[0]:
            raise ValueError(f"y_interval {y_interval} is reversed")
        if max(a_minus.coordinate, a_plus.coordinate) >= m:
            raise ValueError(f"families act on coordinates beyond m = {m}")
        self.a_minus = a_minus
        self.a_plus = a_plus
        self.c = float(c)
        self.y_interval = (float(y_interval[0]), float(y_interval[1]))
        self.m = int(m)

    def _y(self, y: ArrayLike) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if y.size == 1 and self.m > 1:
            y = np.full(self.m, float(y[0]))
        return y

    def a(self, side: str, y: ArrayLike) -> float:
        """a_-(y) or a_+(y)."""
        return float((self.a_minus if side == "minus" else self.a_plus)(self._y(y)))

    @property
    def a_range(self) -> Tuple[float, float]:
        """(a_min, a_max): infimum of a_- and supremum of a_+ over the y-interval."""
        return self.a_minus.bounds(*self.y_interval)[0], self.a_plus.bounds(*self.y_interval)[1]

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        return {
            "a_minus": self.a_minus.as_dict,
            "a_plus": self.a_plus.as_dict,
            "c": self.c,
            "y_interval": list(self.y_interval),
            "m": self.m,
        }

    @classmethod
    def from_dict(cls, params: Dict) -> DuffingParams:
        """Create parameters from a dictionary with keys 'a_minus', 'a_plus', 'c' and optional 'y_interval', 'm'."""
        unknown = set(params) - {"a_minus", "a_plus", "c", "y_interval", "m"}
        if unknown:
            raise KeyError(f"unknown keys {sorted(unknown)} in duffing parameters")
        return cls(ParameterFamily.from_dict(params["a_minus"]), ParameterFamily.from_dict(params["a_plus"]),
                   params["c"], tuple(params.get("y_interval", (-1.0, 1.0))), params.get("m", 1))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, DuffingParams) and self.as_dict == other.as_dict

    def __repr__(self) -> str:
        return f"<DuffingParams(c={self.c}, a_minus={self.a_minus}, a_plus={self.a_plus})>"


def demo_params() -> DuffingParams:
    """a_+ = 1/4 + 0.05 tanh y, a_- = a_+ + 1/2, c = 1/2; simple zero of D at y = 0 with D'(0) = 0.05."""
    return DuffingParams(ParameterFamily("tanh", offset=0.75, amplitude=0.05),
                         ParameterFamily("tanh", offset=0.25, amplitude=0.05), 0.5)


def constant_gap_params(c: float = 0.5) -> DuffingParams:
    """a_+ = critical_a_plus(c), a_- = a_+ + 1/2 (3/4 and 1/4 at c = 1/2): D vanishes identically."""
    a_plus = critical_a_plus(c)
    return DuffingParams(ParameterFamily.constant(a_plus + 0.5), ParameterFamily.constant(a_plus), c)


def sin_params() -> DuffingParams:
    """a_+ = 0.25 + 0.05 sin y, a_- = 0.75 + 0.08 sin(y + 0.3), c = 1/2; simple zero of D near y = -0.185."""
    return DuffingParams(ParameterFamily("sin", offset=0.75, amplitude=0.08, shift=-0.3),
                         ParameterFamily("sin", offset=0.25, amplitude=0.05), 0.5)


def sweep_params(kappa: float, c: float, y_interval: Tuple[float, float] = (-1.0, 1.0)) -> DuffingParams:
    """Symmetric family a_± = 1/2 ± kappa tanh y, with D(0) = 0 and D'(0) = kappa (4c^3 - 6c^2 + 1)."""
    return DuffingParams(ParameterFamily("tanh", offset=0.5, amplitude=-kappa),
                         ParameterFamily("tanh", offset=0.5, amplitude=kappa), c, y_interval)


def u_minus_closed(params: DuffingParams, t: ArrayLike, y: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Frozen half-orbit u_-(t, y) for t <= 0, anchored at u_-(0) = c."""
    return v_closed(t, params.a("minus", y), params.c)


def u_plus_closed(params: DuffingParams, t: ArrayLike, y: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """Frozen half-orbit u_+(t, y) = 1 - v(-t) for t >= 0, v the closed form with (1 - a_+, 1 - c)."""
    v, vdot = v_closed(-np.asarray(t, dtype=float), 1 - params.a("plus", y), 1 - params.c)
    return 1 - v, vdot


def persistence_D(params: DuffingParams, y: ArrayLike) -> float:  # noqa N802
    """D(y) = c^2 (2c - 3)(a_+ - a_-) + a_+ - 1/2; zero exactly when the frozen heteroclinic exists."""
    c, a_plus, a_minus = params.c, params.a("plus", y), params.a("minus", y)
    return c ** 2 * (2 * c - 3) * (a_plus - a_minus) + a_plus - 0.5


def persistence_D_integrals(params: DuffingParams, y: ArrayLike) -> float:  # noqa N802
    """6 (∫_0^c u(u-a_-)(u-1) du + ∫_c^1 u(u-a_+)(u-1) du), equal to D(y)."""
    return D_SCALE * (quartic_integral(params.a("minus", y), 0.0, params.c)
                + quartic_integral(params.a("plus", y), params.c, 1.0))


def persistence_D_derivative(params: DuffingParams, y: ArrayLike, coordinate: int = 0) -> float:  # noqa N802
    """Partial derivative of D in y[coordinate]."""
    yv = params._y(y)
    da_plus = params.a_plus.gradient(yv)[coordinate]
    da_minus = params.a_minus.gradient(yv)[coordinate]
    c = params.c
    return c ** 2 * (2 * c - 3) * (da_plus - da_minus) + da_plus


def analytic_melnikov(params: DuffingParams, y: ArrayLike) -> np.ndarray:
    """1 x m Melnikov matrix D_y(y)/6 for the flow normalization psi(0-) = J u'(0-)."""
    return np.array([[persistence_D_derivative(params, y, j) / D_SCALE for j in range(params.m)]])


def check_feasibility(params: DuffingParams) -> Tuple[float, float]:
    """Check that c lies in the feasibility window of the parameter range and that the closed forms exist.

    :return: the window
    :raises InfeasibleParameters: empty window, or c outside it
    """
    a_min, a_max = params.a_range
    minus_low, minus_high = params.a_minus.bounds(*params.y_interval)
    plus_low, plus_high = params.a_plus.bounds(*params.y_interval)
    try:
        _check_unit_interval(a_minus_low=minus_low, a_minus_high=minus_high, a_plus_low=plus_low,
                             a_plus_high=plus_high)
        window = feasibility_window(a_min, a_max)
    except DomainError as error:
        raise InfeasibleParameters(f"parameters leave (0, 1) on the y-interval {params.y_interval}: {error}")
    where = f"inf a_- = {a_min:.4g}, sup a_+ = {a_max:.4g}"
    if window is None:
        raise InfeasibleParameters(f"no switching level works for {where}")
    if not window[0] < params.c < window[1]:
        raise InfeasibleParameters(f"c = {params.c} outside the feasibility window ({window[0]:.4g}, "
                                   f"{window[1]:.4g}) for {where}")
    return window


def _duffing_field(family: ParameterFamily, m: int) -> SmoothField:
    def expand(y: np.ndarray) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        return np.full(m, float(y[0])) if y.size == 1 and m > 1 else y

    def f(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        a = family(expand(y))
        return np.array([x[1], x[0] * (x[0] - a) * (x[0] - 1)])

    def f_x(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        a = family(expand(y))
        return np.array([[0.0, 1.0], [3 * x[0] ** 2 - 2 * (a + 1) * x[0] + a, 0.0]])

    def f_y(x: np.ndarray, y: np.ndarray) -> np.ndarray:
        grad = family.gradient(expand(y))
        return np.vstack([np.zeros(m), -x[0] * (x[0] - 1) * grad])

    return SmoothField(f, f_x, f_y)


def as_system(params: DuffingParams) -> PiecewiseSlowFastSystem:
    """Piecewise slow-fast system with h(x, y) = x_1, threshold c (also the anchor) and y' = eps."""
    m = params.m
    switching = SwitchingSpec(h=lambda x, y: float(x[0]),
                              h_x=lambda x, y: np.array([1.0, 0.0]),
                              thresholds=[params.c],
                              anchor=params.c)
    return PiecewiseSlowFastSystem(2, m, switching,
                                   {0: _duffing_field(params.a_minus, m), 1: _duffing_field(params.a_plus, m)},
                                   slow=lambda x, y, eps: np.ones(m),
                                   working_box=WorkingBox([-0.5, -1.0], [1.5, 1.0]),
                                   endpoint_guesses={"minus": [0.0, 0.0], "plus": [1.0, 0.0]},
                                   name="piecewise-duffing")
