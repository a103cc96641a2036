"""Finite-eps check of persistence: connecting solutions of the full slow-fast system by two-sided shooting.

For a given eps, a left leg is launched from the unstable direction of w_-(y_L) and a right leg from the stable
direction of w_+(y_R); both are integrated with the slow drift switched on until they hit the anchor section.
Newton's method on (y_L, y_R) closes the gap at the section.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import null_space

from hetero_melnikov.errors import HeteroMelnikovError
from hetero_melnikov.system_model import PiecewiseSlowFastSystem, find_endpoint
from hetero_melnikov.tolerances import Tolerances
from hetero_melnikov.trajectory import (AnchorNotReached, FrozenOrbitFamily, FrozenOrbitPair, PiecewiseTrajectory,
                                        YMode, compute_frozen_halforbits, launch_halforbit)

logger = logging.getLogger(__name__)


class NewtonDiverged(HeteroMelnikovError):
    """The shooting Newton iteration failed to reduce the mismatch."""


class SectionMissed(HeteroMelnikovError):
    """A shooting leg did not reach the anchor section."""


class ConnectionResult:
    """A connecting solution of the full system for one eps, re-anchored so that it meets the section at t = 0."""

    def __init__(self,
                 epsilon: float,
                 y_init_left: np.ndarray,
                 y_init_right: np.ndarray,
                 y_at_section: np.ndarray,
                 mismatch: float,
                 newton_iters: int,
                 left_leg: PiecewiseTrajectory,
                 right_leg: PiecewiseTrajectory,
                 duration_gap: Tuple[float, float] = (0.0, 0.0),
                 sup_dev: Optional[float] = None) -> None:
        self.epsilon = epsilon
        self.y_init_left = y_init_left
        self.y_init_right = y_init_right
        self.y_at_section = y_at_section
        self.mismatch = mismatch
        self.newton_iters = newton_iters
        self.left_leg = left_leg
        self.right_leg = right_leg
        self.duration_gap = duration_gap
        self.sup_dev = sup_dev

    @property
    def durations(self) -> Tuple[float, float]:
        """Times spent by the left and right legs between the seeds and the section."""
        return -self.left_leg.t_start, self.right_leg.t_end

    @property
    def t_range(self) -> Tuple[float, float]:
        """Computed time range."""
        return self.left_leg.t_start, self.right_leg.t_end

    def leg(self, t: float) -> PiecewiseTrajectory:
        """Leg covering t (left for t <= 0)."""
        return self.left_leg if t <= 0 else self.right_leg

    def x(self, t: float) -> np.ndarray:
        """x(t, eps)."""
        return self.leg(t).x(t)

    def y(self, t: float) -> np.ndarray:
        """y(t, eps)."""
        return self.leg(t).y(t)

    @classmethod
    def from_frozen(cls, pair: FrozenOrbitPair, system: Optional[PiecewiseSlowFastSystem] = None) -> ConnectionResult:
        """The eps = 0 connection given by a frozen orbit pair."""
        gap = pair.gap
        if system is not None and system.n == 2:
            hx = np.asarray(system.switching.h_x(pair.w0_plus, pair.y), dtype=float)
            gap = np.array([hx[1], -hx[0]]) @ gap / np.linalg.norm(hx)
        return cls(0.0, pair.y, pair.y, pair.y, float(np.linalg.norm(gap)), 0, pair.u_minus, pair.u_plus)

    @property
    def as_dict(self) -> Dict:
        """Convert to dict (summary, without the trajectories)."""
        return {
            "epsilon": self.epsilon,
            "y_init_left": [float(v) for v in self.y_init_left],
            "y_init_right": [float(v) for v in self.y_init_right],
            "y_at_section": [float(v) for v in self.y_at_section],
            "mismatch": self.mismatch,
            "newton_iters": self.newton_iters,
            "durations": list(self.durations),
            "duration_gap": list(self.duration_gap),
            "sup_dev": self.sup_dev,
        }

    def __repr__(self) -> str:
        return (f"<ConnectionResult(epsilon={self.epsilon}, y_at_section={list(self.y_at_section)}, "
                f"mismatch={self.mismatch:.3g})>")


class _Shooter:
    """Residual of the two-sided shooting problem for one eps."""

    def __init__(self, system: PiecewiseSlowFastSystem, epsilon: float, seed: float, tolerances: Tolerances) -> None:
        self.system = system
        self.epsilon = epsilon
        self.seed = seed
        self.tolerances = tolerances
        self._guesses: Dict[str, np.ndarray] = {}

    def leg(self, side: str, y: np.ndarray) -> PiecewiseTrajectory:
        endpoint = find_endpoint(self.system, side, y, self._guesses.get(side), self.tolerances)
        self._guesses[side] = endpoint.w
        try:
            return launch_halforbit(self.system, endpoint, YMode.slow(y, self.epsilon), self.seed, self.tolerances)
        except AnchorNotReached as error:
            raise SectionMissed(f"y={list(y)}: {error}")

    def __call__(self, unknowns: np.ndarray) -> Tuple[np.ndarray, PiecewiseTrajectory, PiecewiseTrajectory]:
        m = self.system.m
        left, right = self.leg("minus", unknowns[:m]), self.leg("plus", unknowns[m:])
        x_left, x_right = left.x(0.0, "left"), right.x(0.0, "right")
        hx = np.atleast_2d(np.asarray(self.system.switching.h_x(x_right, right.y(0.0)), dtype=float))
        in_section = null_space(hx)
        if self.system.n == 2:
            in_section = np.array([[-hx[0, 1]], [hx[0, 0]]]) / np.linalg.norm(hx)
        residual = np.concatenate([in_section.T @ (x_left - x_right), left.y(0.0, "left") - right.y(0.0, "right")])
        return residual, left, right


def shoot_connection(system: PiecewiseSlowFastSystem,
                     epsilon: float,
                     y_guess: Sequence[float],
                     tolerances: Optional[Tolerances] = None,
                     frozen: Optional[FrozenOrbitPair] = None) -> ConnectionResult:
    """Find the connecting solution for one eps by damped Newton on the launch values (y_L, y_R).

    :param system: the piecewise system
    :param epsilon: slow rate, > 0
    :param y_guess: y0 of the frozen analysis (the Melnikov zero)
    :param tolerances: shoot_tol, shoot_max_iter, shoot_seed and integrator tolerances (tightened internally)
    :param frozen: frozen orbit pair at y_guess, launched with the same seed offset, for the initial guess
    :raises ValueError: epsilon <= 0
    :raises NewtonDiverged: no decrease of the mismatch, or no convergence within shoot_max_iter
    :raises SectionMissed: a leg never reaches the section
    """
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    tolerances = tolerances or Tolerances()
    fine = tolerances.tightened()
    y0 = np.atleast_1d(np.asarray(y_guess, dtype=float))
    m = system.m
    w_minus = find_endpoint(system, "minus", y0, tolerances=tolerances).w
    w_plus = find_endpoint(system, "plus", y0, tolerances=tolerances).w
    seed = tolerances.shoot_seed * float(np.linalg.norm(w_plus - w_minus))
    if frozen is None:
        frozen = compute_frozen_halforbits(system, y0, seed_scale=seed, tolerances=fine)

    t_left, t_right = -frozen.u_minus.t_start, frozen.u_plus.t_end
    drift_left = system.slow_field(frozen.endpoint_minus.w, y0, epsilon)
    drift_right = system.slow_field(frozen.endpoint_plus.w, y0, epsilon)
    unknowns = np.concatenate([y0 - epsilon * t_left * drift_left, y0 + epsilon * t_right * drift_right])
    shooter = _Shooter(system, epsilon, seed, fine)
    residual, left, right = shooter(unknowns)
    norm = float(np.linalg.norm(residual))

    iterations = 0
    while norm > tolerances.shoot_tol:
        if iterations >= tolerances.shoot_max_iter:
            raise NewtonDiverged(f"eps={epsilon}: mismatch {norm:.3g} after {iterations} Newton steps")
        jacobian = np.zeros((residual.size, unknowns.size))
        for j in range(unknowns.size):
            step = tolerances.fd_step * max(1.0, abs(unknowns[j]))
            shift = np.zeros(unknowns.size)
            shift[j] = step
            jacobian[:, j] = (shooter(unknowns + shift)[0] - shooter(unknowns - shift)[0]) / (2 * step)
        update = np.linalg.lstsq(jacobian, -residual, rcond=None)[0]
        scale, accepted = 1.0, False
        for _ in range(12):
            try:
                trial = shooter(unknowns + scale * update)
            except HeteroMelnikovError as error:
                logger.debug(f"eps={epsilon}: trial step {scale} failed ({error})")
                scale /= 2
                continue
            if np.linalg.norm(trial[0]) < norm:
                unknowns = unknowns + scale * update
                residual, left, right = trial
                norm, accepted = float(np.linalg.norm(residual)), True
                break
            scale /= 2
        iterations += 1
        if not accepted:
            raise NewtonDiverged(f"eps={epsilon}: damped Newton could not reduce the mismatch {norm:.3g}")
        logger.debug(f"eps={epsilon}: Newton step {iterations}, mismatch {norm:.3g}")

    result = ConnectionResult(epsilon, unknowns[:m], unknowns[m:], left.y(0.0, "left"), norm, iterations,
                              left, right)
    result.duration_gap = (result.durations[0] - t_left, result.durations[1] - t_right)
    logger.info(f"eps={epsilon}: connection with y at section {list(result.y_at_section)} "
                f"after {iterations} Newton steps (mismatch {norm:.2e})")
    return result


def sup_norm_deviation(result: ConnectionResult, family: FrozenOrbitFamily, samples: int = 200,
                       interpolate: bool = True) -> float:
    """max_t |x(t, eps) - u(t, y(t, eps))| over a grid spanning both legs.

    For m = 1 the frozen orbits are interpolated in y across Chebyshev nodes; otherwise each sample uses the
    frozen pair at exactly y(t, eps). Samples outside the computed range of a frozen orbit are skipped.
    """
    lo, hi = result.t_range
    times = np.unique(np.concatenate([np.linspace(lo, hi, max(samples, 200)), [0.0]]))
    ys = np.array([result.y(t) for t in times])
    if interpolate and family.system.m == 1:
        frozen = family.interpolator(float(ys.min()), float(ys.max()))
    else:
        def frozen(t: float, y: np.ndarray) -> np.ndarray:
            pair = family(y)
            return pair.x(t) if pair.t_range[0] <= t <= pair.t_range[1] else np.full(pair.n, np.nan)
    deviations = np.array([np.linalg.norm(result.x(t) - frozen(t, y if y.size > 1 else float(y[0])))
                           for t, y in zip(times, ys)])
    if np.all(np.isnan(deviations)):
        raise ValueError("no sample of the connection lies inside the frozen orbits' range")
    return float(np.nanmax(deviations))


class ConvergenceStudy:
    """Connections for a list of eps values, with trend statistics."""

    header = ["epsilon", "converged", "y0_eps", "deviation", "sup_dev", "mismatch", "newton_iters",
              "duration_gap_left", "duration_gap_right"]

    def __init__(self, y0: np.ndarray, eps_list: Sequence[float], results: List[Optional[ConnectionResult]],
                 failures: List[Optional[str]]) -> None:
        self.y0 = y0
        self.eps_list = list(eps_list)
        self.results = results
        self.failures = failures

    @property
    def converged(self) -> List[ConnectionResult]:
        """Successful results, in input order."""
        return [r for r in self.results if r is not None]

    @property
    def all_converged(self) -> bool:
        """True when every eps produced a connection."""
        return all(r is not None for r in self.results)

    def deviations(self) -> np.ndarray:
        """Signed y0(eps) - y0 of the converged runs (first coordinate)."""
        return np.array([r.y_at_section[0] - self.y0[0] for r in self.converged])

    @property
    def slope(self) -> Optional[float]:
        """Slope of log|y0(eps) - y0| against log eps, None with fewer than two usable runs."""
        pairs = [(r.epsilon, abs(r.y_at_section[0] - self.y0[0])) for r in self.converged]
        pairs = [(e, v) for e, v in pairs if v > 0]
        if len(pairs) < 2:
            return None
        eps, dev = np.array(pairs).T
        return float(np.polyfit(np.log(eps), np.log(dev), 1)[0])

    @property
    def sign_consistent(self) -> bool:
        """All deviations share one sign."""
        signs = np.sign(self.deviations())
        return bool(signs.size == 0 or np.all(signs == signs[0]))

    def _decreasing(self, values: List[float]) -> bool:
        return all(b <= a for a, b in zip(values, values[1:]))

    @property
    def deviation_decreasing(self) -> bool:
        """|y0(eps) - y0| decreases along the (decreasing) eps list."""
        return self._decreasing(list(np.abs(self.deviations())))

    @property
    def sup_dev_decreasing(self) -> bool:
        """sup_dev decreases along the eps list."""
        return self._decreasing([r.sup_dev for r in self.converged if r.sup_dev is not None])

    @property
    def duration_gap_decreasing(self) -> bool:
        """Leg durations approach the frozen ones along the eps list."""
        return self._decreasing([max(abs(g) for g in r.duration_gap) for r in self.converged])

    def rows(self) -> List[List]:
        """One row per eps, in input order, matching `header`."""
        rows = []
        for epsilon, result in zip(self.eps_list, self.results):
            if result is None:
                rows.append([epsilon, 0] + [float("nan")] * (len(self.header) - 2))
                continue
            y_eps = float(result.y_at_section[0])
            rows.append([epsilon, 1, y_eps, y_eps - float(self.y0[0]),
                         float("nan") if result.sup_dev is None else result.sup_dev, result.mismatch,
                         result.newton_iters, *result.duration_gap])
        return rows

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        return {
            "y0": [float(v) for v in self.y0],
            "connections": [None if r is None else r.as_dict for r in self.results],
            "failures": self.failures,
            "slope": self.slope,
            "sign_consistent": self.sign_consistent,
            "deviation_decreasing": self.deviation_decreasing,
            "sup_dev_decreasing": self.sup_dev_decreasing,
            "duration_gap_decreasing": self.duration_gap_decreasing,
        }

    def __repr__(self) -> str:
        return f"<ConvergenceStudy(eps={self.eps_list}, converged={len(self.converged)}, slope={self.slope})>"


def convergence_study(system: PiecewiseSlowFastSystem,
                      eps_list: Sequence[float],
                      y0: Sequence[float],
                      tolerances: Optional[Tolerances] = None,
                      workers: int = 1) -> ConvergenceStudy:
    """Shoot one connection per eps and measure its distance from the frozen family.

    Failures are recorded per eps and do not stop the other runs.

    :param workers: number of concurrent eps runs
    """
    tolerances = tolerances or Tolerances()
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    eps_list = [float(e) for e in eps_list]
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        logger.warning(f"eps list {eps_list} is not decreasing; trend statistics assume it is")
    fine = tolerances.tightened()
    w_minus = find_endpoint(system, "minus", y0, tolerances=tolerances).w
    w_plus = find_endpoint(system, "plus", y0, tolerances=tolerances).w
    frozen = compute_frozen_halforbits(system, y0, tolerances.shoot_seed * float(np.linalg.norm(w_plus - w_minus)),
                                       fine)

    def run(epsilon: float) -> Tuple[Optional[ConnectionResult], Optional[str]]:
        try:
            result = shoot_connection(system, epsilon, y0, tolerances, frozen)
            result.sup_dev = sup_norm_deviation(result, FrozenOrbitFamily(system, tolerances=tolerances))
            return result, None
        except (HeteroMelnikovError, ValueError) as error:
            logger.warning(f"eps={epsilon}: {type(error).__name__}: {error}")
            return None, f"{type(error).__name__}: {error}"

    if workers > 1 and len(eps_list) > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            outcomes = list(executor.map(run, eps_list))
    else:
        outcomes = [run(e) for e in eps_list]
    study = ConvergenceStudy(y0, eps_list, [o[0] for o in outcomes], [o[1] for o in outcomes])
    logger.info(f"convergence study: {len(study.converged)}/{len(eps_list)} converged, slope {study.slope}")
    return study
