"""Piecewise-smooth slow-fast systems and their hyperbolic endpoints.

A system is ẋ = f_ℓ(x, y), ẏ = ε g(x, y, ε), where the region index ℓ is decided by the value of one
scalar switching function h(x, y) relative to an increasing list of thresholds. Regions are numbered consecutively
from `lowest_region`; region ℓ is the band between the thresholds just below and just above it.
"""
from __future__ import annotations

import logging
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.linalg import orth, schur

from hetero_melnikov.errors import AssumptionViolation, HeteroMelnikovError
from hetero_melnikov.tolerances import Tolerances
from hetero_melnikov.working_box import WorkingBox

logger = logging.getLogger(__name__)

SIDES = ("minus", "plus")

ScalarFn = Callable[[np.ndarray, np.ndarray], float]
VectorFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


class InvalidSystem(HeteroMelnikovError):
    """The system description is inconsistent."""


class NoConvergence(HeteroMelnikovError):
    """Newton iteration for an endpoint did not converge."""


class NotHyperbolic(AssumptionViolation):
    """An endpoint has an eigenvalue too close to the imaginary axis."""

    assumption = "hyperbolic endpoints"


class WrongRegion(AssumptionViolation):
    """An endpoint does not lie strictly inside the outermost region of its side."""

    assumption = "endpoint regions"


class SpectralGapViolated(AssumptionViolation):
    """A matrix has eigenvalues with real part inside the forbidden gap."""

    assumption = "hyperbolic endpoints"


def central_difference_jacobian(fun: Callable[[np.ndarray], np.ndarray], z: np.ndarray) -> np.ndarray:
    """Order-2 central-difference Jacobian of fun at z.

    Only used when a field explicitly opts in; the step is cbrt(eps) * max(1, |z|).
    """
    z = np.asarray(z, dtype=float)
    step = np.cbrt(np.finfo(float).eps) * max(1.0, float(np.linalg.norm(z)))
    columns = []
    for i in range(z.size):
        dz = np.zeros_like(z)
        dz[i] = step
        columns.append((np.atleast_1d(fun(z + dz)) - np.atleast_1d(fun(z - dz))) / (2 * step))
    return np.column_stack(columns)


class OnBoundary:
    """Result of classifying a state that lies on a switching surface."""

    def __init__(self, level_index: int, level: float, below: int, above: int) -> None:
        self.level_index = level_index
        self.level = level
        self.below = below
        self.above = above

    def __eq__(self, other: object) -> bool:
        return isinstance(other, OnBoundary) and (self.level_index, self.below) == (other.level_index, other.below)

    def __repr__(self) -> str:
        return f"<OnBoundary(level={self.level}, between regions {self.below} and {self.above})>"


class SwitchingSpec:
    """Switching function h, its thresholds and the transversality margin."""

    def __init__(self,
                 h: ScalarFn,
                 h_x: VectorFn,
                 thresholds: Sequence[float],
                 eta: float = 1e-3,
                 boundary_tol: float = 1e-12,
                 lowest_region: int = 0,
                 h_y: Optional[VectorFn] = None,
                 anchor: Optional[float] = None) -> None:
        """Create the switching data.

        :param h: scalar switching function h(x, y)
        :param h_x: gradient of h in x
        :param thresholds: strictly increasing levels c
        :param eta: transversality margin, crossings need |h_x . x'| > eta on both sides
        :param boundary_tol: |h - c| below which a state counts as lying on the surface
        :param lowest_region: index of the region below the first threshold
        :param h_y: gradient of h in y, zero if omitted
        :param anchor: level of the section that fixes the time origin of half-orbits
        """
        self.thresholds = [float(c) for c in thresholds]
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise InvalidSystem(f"thresholds must be strictly increasing, got {self.thresholds}")
        if eta <= 0 or boundary_tol <= 0:
            raise InvalidSystem(f"eta and boundary_tol must be positive, got {eta}, {boundary_tol}")
        self.h = h
        self.h_x = h_x
        self.h_y = h_y
        self.eta = float(eta)
        self.boundary_tol = float(boundary_tol)
        self.lowest_region = int(lowest_region)
        self.anchor = float(anchor) if anchor is not None else None

    @property
    def regions(self) -> List[int]:
        """All region indices, increasing."""
        return list(range(self.lowest_region, self.lowest_region + len(self.thresholds) + 1))

    @property
    def highest_region(self) -> int:
        """Index of the region above the last threshold."""
        return self.lowest_region + len(self.thresholds)

    def gradient_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Gradient of h in y (zeros when h does not depend on y)."""
        if self.h_y is None:
            return np.zeros(np.atleast_1d(y).size)
        return np.atleast_1d(self.h_y(x, y))

    def classify(self, value: float) -> Union[int, OnBoundary]:
        """Classify a value of h into a region index or OnBoundary."""
        for i, level in enumerate(self.thresholds):
            if abs(value - level) <= self.boundary_tol:
                return OnBoundary(i, level, self.lowest_region + i, self.lowest_region + i + 1)
        return self.lowest_region + sum(1 for level in self.thresholds if level < value)

    def band(self, region: int) -> Tuple[Optional[float], Optional[float]]:
        """Return (lower level, upper level) of a region; None stands for -inf/+inf."""
        i = region - self.lowest_region
        if not 0 <= i <= len(self.thresholds):
            raise ValueError(f"region {region} does not exist")
        lower = self.thresholds[i - 1] if i > 0 else None
        upper = self.thresholds[i] if i < len(self.thresholds) else None
        return lower, upper

    def level_between(self, region: int, other: int) -> float:
        """Threshold separating two adjacent regions."""
        if abs(region - other) != 1:
            raise ValueError(f"regions {region} and {other} are not adjacent")
        return self.thresholds[min(region, other) - self.lowest_region]

    def is_threshold(self, level: float) -> bool:
        """Check whether level coincides with one of the thresholds."""
        return any(abs(level - c) <= self.boundary_tol for c in self.thresholds)


class SmoothField:
    """One smooth piece f_ℓ with its Jacobians."""

    def __init__(self,
                 f: VectorFn,
                 f_x: Optional[Callable] = None,
                 f_y: Optional[Callable] = None,
                 fd_fallback: bool = False) -> None:
        if (f_x is None or f_y is None) and not fd_fallback:
            raise InvalidSystem("analytic Jacobians f_x and f_y are required unless fd_fallback is set")
        self.f = f
        self._f_x = f_x
        self._f_y = f_y

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return np.asarray(self.f(x, y), dtype=float)

    def jacobian_x(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Jacobian in x."""
        if self._f_x is not None:
            return np.atleast_2d(np.asarray(self._f_x(x, y), dtype=float))
        return central_difference_jacobian(lambda z: self.f(z, y), x)

    def jacobian_y(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Jacobian in y."""
        if self._f_y is not None:
            return np.asarray(self._f_y(x, y), dtype=float).reshape(len(np.atleast_1d(x)), -1)
        return central_difference_jacobian(lambda z: self.f(x, z), np.atleast_1d(y))


class PiecewiseSlowFastSystem:
    """A piecewise-smooth slow-fast system ẋ = f_ℓ(x, y), ẏ = ε g(x, y, ε)."""

    def __init__(self,
                 n: int,
                 m: int,
                 switching: SwitchingSpec,
                 fields: Dict[int, SmoothField],
                 slow: Callable[[np.ndarray, np.ndarray, float], np.ndarray],
                 working_box: Optional[WorkingBox] = None,
                 endpoint_guesses: Optional[Dict[str, Iterable[float]]] = None,
                 name: str = "system") -> None:
        """Create the system.

        :param n: fast dimension
        :param m: slow dimension
        :param switching: switching function and thresholds
        :param fields: one SmoothField per region index
        :param slow: slow field g(x, y, eps)
        :param working_box: box in x where the fields are trusted; no restriction if None
        :param endpoint_guesses: Newton guesses for w_- and w_+, keyed 'minus' and 'plus'
        :param name: label used in reports
        """
        missing = [r for r in switching.regions if r not in fields]
        if missing:
            raise InvalidSystem(f"no field given for regions {missing}")
        extra = sorted(set(fields) - set(switching.regions))
        if extra:
            raise InvalidSystem(f"fields given for nonexistent regions {extra}")
        if working_box is not None and working_box.dim != n:
            raise InvalidSystem(f"working box has dimension {working_box.dim}, expected {n}")
        self.n = int(n)
        self.m = int(m)
        self.switching = switching
        self.fields = dict(fields)
        self.slow = slow
        self.working_box = working_box
        self.endpoint_guesses = {side: np.asarray(list(g), dtype=float)
                                 for side, g in (endpoint_guesses or {}).items()}
        self.name = name

    @property
    def lowest_region(self) -> int:
        """Region containing w_-."""
        return self.switching.lowest_region

    @property
    def highest_region(self) -> int:
        """Region containing w_+."""
        return self.switching.highest_region

    def side_region(self, side: str) -> int:
        """Region of the endpoint on a side."""
        if side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got '{side}'")
        return self.lowest_region if side == "minus" else self.highest_region

    @property
    def anchor(self) -> float:
        """Level of the anchor section; defaults to the midpoint of region 0 (or its finite side)."""
        if self.switching.anchor is not None:
            return self.switching.anchor
        lower, upper = self.switching.band(0) if 0 in self.switching.regions else (None, None)
        if lower is not None and upper is not None:
            return (lower + upper) / 2
        if lower is not None or upper is not None:
            return lower if lower is not None else upper
        raise InvalidSystem("no anchor level given and region 0 is unbounded on both sides")

    def region_of(self, x: np.ndarray, y: np.ndarray) -> Union[int, OnBoundary]:
        """Region of the state (x, y), or OnBoundary."""
        return self.switching.classify(float(self.switching.h(np.asarray(x, dtype=float), np.atleast_1d(y))))

    def field(self, region: int) -> SmoothField:
        """Smooth piece of region."""
        return self.fields[region]

    def evaluate(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Evaluate the piecewise field; states on a switching surface are rejected (the field is two-valued)."""
        region = self.region_of(x, y)
        if isinstance(region, OnBoundary):
            raise ValueError(f"state {x} lies on a switching surface: {region}")
        return self.fields[region](x, y)

    def slow_field(self, x: np.ndarray, y: np.ndarray, epsilon: float) -> np.ndarray:
        """Slow field g(x, y, eps) as an m-vector."""
        return np.atleast_1d(np.asarray(self.slow(x, y, epsilon), dtype=float))

    def crossing_rate(self, region: int, x: np.ndarray, y: np.ndarray) -> float:
        """h_x . f_ℓ(x, y): rate at which h changes along the fast flow of a region."""
        return float(np.dot(self.switching.h_x(x, y), self.fields[region](x, y)))

    def check_fields(self, y_values: Iterable[np.ndarray], samples: int = 50, seed: int = 0) -> None:
        """Sample every field and Jacobian on the working box and raise InvalidSystem on non-finite values."""
        if self.working_box is None:
            logger.info(f"{self.name}: no working box declared, field sampling skipped")
            return
        rng = np.random.default_rng(seed)
        points = self.working_box.sample(samples, rng)
        for y in y_values:
            y = np.atleast_1d(np.asarray(y, dtype=float))
            for region, piece in self.fields.items():
                for x in points:
                    values = (piece(x, y), piece.jacobian_x(x, y), piece.jacobian_y(x, y))
                    if not all(np.all(np.isfinite(v)) for v in values):
                        raise InvalidSystem(f"field of region {region} is not finite at x={x}, y={y}")

    def __repr__(self) -> str:
        return (f"<PiecewiseSlowFastSystem(name={self.name}, n={self.n}, m={self.m}, "
                f"regions={self.switching.regions})>")


def region_of(system: PiecewiseSlowFastSystem, x: np.ndarray, y: np.ndarray) -> Union[int, OnBoundary]:
    """Classify the state (x, y) into a region index or OnBoundary."""
    return system.region_of(x, y)


def invariant_subspaces(jacobian: np.ndarray, delta0: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Orthonormal bases of the stable and unstable invariant subspaces, via ordered real Schur forms.

    :return: (stable basis n x k, unstable basis n x (n-k), eigenvalues)
    :raises SpectralGapViolated: an eigenvalue has |Re| < delta0
    """
    jacobian = np.atleast_2d(np.asarray(jacobian, dtype=float))
    eigenvalues = np.linalg.eigvals(jacobian)
    gap = float(np.min(np.abs(eigenvalues.real)))
    if gap < delta0:
        raise SpectralGapViolated(f"eigenvalues {eigenvalues} violate the spectral gap {delta0} (min |Re| = {gap:.3g})")
    _, z_stable, k = schur(jacobian, output="real", sort="lhp")
    _, z_unstable, n_unstable = schur(jacobian, output="real", sort="rhp")
    return z_stable[:, :k], z_unstable[:, :n_unstable], eigenvalues


def projection_from_bases(range_basis: np.ndarray, null_basis: np.ndarray) -> np.ndarray:
    """Projection with the given range along the given null space."""
    n = range_basis.shape[0]
    frame = np.hstack([range_basis, null_basis])
    selector = np.zeros((n, n))
    k = range_basis.shape[1]
    selector[:k, :k] = np.eye(k)
    return frame @ selector @ np.linalg.inv(frame)


def spectral_projection(jacobian: np.ndarray, delta0: float) -> Tuple[np.ndarray, int]:
    """Spectral projection onto the stable invariant subspace along the unstable one.

    :return: (P0, k) with k the number of eigenvalues with negative real part
    """
    stable, unstable, _ = invariant_subspaces(jacobian, delta0)
    return projection_from_bases(stable, unstable), stable.shape[1]


class HyperbolicEndpoint:
    """One hyperbolic equilibrium w_±(y) of the frozen system, with its spectral data."""

    def __init__(self,
                 side: str,
                 y: np.ndarray,
                 w: np.ndarray,
                 jacobian: np.ndarray,
                 delta0: float,
                 mu0: float,
                 residual: float,
                 iterations: int) -> None:
        self.side = side
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.w = np.asarray(w, dtype=float)
        self.jacobian = jacobian
        stable, unstable, self.eigenvalues = invariant_subspaces(jacobian, delta0)
        self.stable_basis = orth(stable) if stable.size else stable
        self.unstable_basis = orth(unstable) if unstable.size else unstable
        self.P0 = projection_from_bases(stable, unstable)
        self.k = stable.shape[1]
        self.delta0 = float(np.min(np.abs(self.eigenvalues.real)))
        self.mu0 = mu0
        self.residual = residual
        self.iterations = iterations

    def launch_direction(self, gradient: np.ndarray) -> np.ndarray:
        """Unit vector along which a half-orbit leaves (minus) or enters (plus) the endpoint.

        The direction lies in the unstable (minus) or stable (plus) subspace and is the one most aligned with
        increasing h (minus) or decreasing h (plus), i.e. pointing from the endpoint towards region 0.
        """
        basis = self.unstable_basis if self.side == "minus" else self.stable_basis
        if basis.shape[1] == 0:
            raise NotHyperbolic(f"{self.side} endpoint {self.w} has no {'un' if self.side == 'minus' else ''}"
                                f"stable directions to launch from")
        target = gradient if self.side == "minus" else -gradient
        direction = basis @ (basis.T @ target)
        if np.linalg.norm(direction) <= 1e-12 * max(1.0, float(np.linalg.norm(target))):
            logger.warning(f"{self.side} launch subspace is orthogonal to h_x; using its first basis vector")
            direction = basis[:, 0] * (1.0 if np.dot(basis[:, 0], target) >= 0 else -1.0)
        return direction / np.linalg.norm(direction)

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        return {
            "side": self.side,
            "y": [float(v) for v in self.y],
            "w": [float(v) for v in self.w],
            "k": int(self.k),
            "delta0": self.delta0,
            "mu0": self.mu0,
            "residual": self.residual,
            "iterations": self.iterations,
            "eigenvalues_real": [float(v) for v in self.eigenvalues.real],
            "eigenvalues_imag": [float(v) for v in self.eigenvalues.imag],
        }

    def __repr__(self) -> str:
        return f"<HyperbolicEndpoint(side={self.side}, w={self.w}, k={self.k}, delta0={self.delta0:.4g})>"


def find_endpoint(system: PiecewiseSlowFastSystem,
                  side: str,
                  y: Union[float, np.ndarray],
                  guess: Optional[np.ndarray] = None,
                  tolerances: Optional[Tolerances] = None,
                  max_iter: Optional[int] = None) -> HyperbolicEndpoint:
    """Locate w_±(y) by Newton's method on the field of the outermost region of a side.

    :param system: the piecewise system
    :param side: 'minus' or 'plus'
    :param y: frozen slow variable
    :param guess: starting point; the system's endpoint guess of that side if None
    :param tolerances: tolerances (newton_tol, newton_max_iter, delta0_min)
    :param max_iter: iteration cap overriding tolerances.newton_max_iter (0 only checks the guess)
    :raises NoConvergence: Newton failed
    :raises WrongRegion: the root is not strictly inside the outermost region
    :raises NotHyperbolic: spectral gap below delta0_min
    """
    tolerances = tolerances or Tolerances()
    max_iter = tolerances.newton_max_iter if max_iter is None else max_iter
    region = system.side_region(side)
    piece = system.field(region)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if guess is None:
        if side not in system.endpoint_guesses:
            raise ValueError(f"no guess for the {side} endpoint of {system.name}")
        guess = system.endpoint_guesses[side]
    w = np.array(guess, dtype=float)

    iterations = 0
    while True:
        residual = piece(w, y)
        if not np.all(np.isfinite(residual)):
            raise NoConvergence(f"{side} endpoint: Newton produced non-finite values at {w}")
        if np.linalg.norm(residual) <= tolerances.newton_tol:
            break
        if iterations >= max_iter:
            raise NoConvergence(f"{side} endpoint: no convergence in {max_iter} iterations from {guess} "
                                f"(|f| = {np.linalg.norm(residual):.3g})")
        try:
            w = w - np.linalg.solve(piece.jacobian_x(w, y), residual)
        except np.linalg.LinAlgError:
            raise NoConvergence(f"{side} endpoint: singular Jacobian at {w}")
        iterations += 1
    logger.debug(f"{side} endpoint at y={y}: w={w} after {iterations} Newton steps")

    h_value = float(system.switching.h(w, y))
    thresholds = system.switching.thresholds
    if not thresholds:
        mu0 = float("inf")
    elif side == "minus":
        mu0 = thresholds[0] - h_value
    else:
        mu0 = h_value - thresholds[-1]
    if not mu0 > 0:
        raise WrongRegion(f"{side} endpoint {w} has h = {h_value}, outside region {region} (margin {mu0:.3g})")

    try:
        return HyperbolicEndpoint(side, y, w, piece.jacobian_x(w, y), tolerances.delta0_min, mu0,
                                  float(np.linalg.norm(residual)), iterations)
    except SpectralGapViolated as error:
        raise NotHyperbolic(f"{side} endpoint {w}: {error}")
