"""Event-detected integration of piecewise systems and construction of frozen half-orbits.

Integration runs region by region with an explicit high-order Runge-Kutta method (DOP853) and dense output;
leaving the current band of h is a terminal event, after which the crossing is polished, checked for
transversality and integration restarts in the neighbouring region from the very same state.
"""
from __future__ import annotations

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import BarycentricInterpolator

from hetero_melnikov.errors import AssumptionViolation, HeteroMelnikovError
from hetero_melnikov.system_model import (HyperbolicEndpoint, OnBoundary, PiecewiseSlowFastSystem, find_endpoint)
from hetero_melnikov.tolerances import Tolerances
from hetero_melnikov.working_box import LeftWorkingBox

logger = logging.getLogger(__name__)


class TangentialCrossing(AssumptionViolation):
    """A crossing is not transversal: some one-sided rate h_x . x' is below eta or the signs disagree."""

    assumption = "transversal crossings"


class DegenerateCrossing(AssumptionViolation):
    """Two thresholds are crossed simultaneously, or h leaves its band between detected events."""

    assumption = "monotone band structure"


class StepFailure(HeteroMelnikovError):
    """The integrator failed to take a step or produced non-finite values."""


class AnchorNotReached(HeteroMelnikovError):
    """A half-orbit did not reach the anchor section within the time budget."""


class NotConverged(HeteroMelnikovError):
    """A trajectory does not settle at the endpoint it should converge to."""


class YMode:
    """How the slow variable behaves during an integration: frozen at y, or drifting with rate epsilon."""

    def __init__(self, y: Union[float, Sequence[float]], epsilon: float = 0.0) -> None:
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.epsilon = float(epsilon)
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {epsilon}")

    @classmethod
    def frozen(cls, y: Union[float, Sequence[float]]) -> YMode:
        """Frozen slow variable (eps = 0)."""
        return cls(y)

    @classmethod
    def slow(cls, y0: Union[float, Sequence[float]], epsilon: float) -> YMode:
        """Slow drift from y0 with rate epsilon."""
        if epsilon <= 0:
            raise ValueError(f"slow mode needs a positive epsilon, got {epsilon}")
        return cls(y0, epsilon)

    @property
    def is_frozen(self) -> bool:
        """True when y does not move."""
        return self.epsilon == 0.0

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        return {"y": [float(v) for v in self.y], "epsilon": self.epsilon}

    def __repr__(self) -> str:
        return f"<YMode(y={list(self.y)}, epsilon={self.epsilon})>"


class CrossingEvent:
    """One transversal crossing of a switching surface, described in forward time."""

    def __init__(self,
                 t: float,
                 x: np.ndarray,
                 y: np.ndarray,
                 level: float,
                 region_from: int,
                 region_to: int,
                 margin_minus: float,
                 margin_plus: float) -> None:
        self.t = float(t)
        self.x = x
        self.y = y
        self.level = level
        self.region_from = region_from
        self.region_to = region_to
        self.margin_minus = margin_minus
        self.margin_plus = margin_plus

    def shifted(self, dt: float) -> CrossingEvent:
        """Same event with time shifted by dt."""
        return CrossingEvent(self.t + dt, self.x, self.y, self.level, self.region_from, self.region_to,
                             self.margin_minus, self.margin_plus)

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        return {
            "t": self.t,
            "x": [float(v) for v in self.x],
            "y": [float(v) for v in self.y],
            "level": self.level,
            "region_from": self.region_from,
            "region_to": self.region_to,
            "margin_minus": self.margin_minus,
            "margin_plus": self.margin_plus,
        }

    def __repr__(self) -> str:
        return (f"<CrossingEvent(t={self.t:.6g}, {self.region_from}->{self.region_to}, "
                f"margins=({self.margin_minus:.3g}, {self.margin_plus:.3g}))>")


class Segment:
    """Smooth piece of a trajectory inside one region; stores its exact end states."""

    def __init__(self,
                 region: int,
                 t_a: float,
                 t_b: float,
                 dense: Optional[Callable],
                 z_a: np.ndarray,
                 z_b: np.ndarray,
                 offset: float = 0.0) -> None:
        self.region = region
        self.t_a = float(t_a)
        self.t_b = float(t_b)
        self.dense = dense
        self.z_a = z_a
        self.z_b = z_b
        self.offset = offset

    def __call__(self, t: float) -> np.ndarray:
        if t == self.t_a:
            return self.z_a
        if t == self.t_b:
            return self.z_b
        return self.dense(t - self.offset)

    def shifted(self, dt: float) -> Segment:
        """Same segment with time shifted by dt."""
        return Segment(self.region, self.t_a + dt, self.t_b + dt, self.dense, self.z_a, self.z_b, self.offset + dt)


class PiecewiseTrajectory:
    """A continuous, piecewise smooth solution: segments ordered in increasing time plus crossing events."""

    def __init__(self,
                 segments: List[Segment],
                 events: List[CrossingEvent],
                 y_mode: YMode,
                 n: int,
                 section_time: Optional[float] = None,
                 stop_reason: str = "t_end") -> None:
        self.segments = sorted(segments, key=lambda s: s.t_a)
        self.events = sorted(events, key=lambda e: e.t)
        self.y_mode = y_mode
        self.n = n
        self.section_time = section_time
        self.stop_reason = stop_reason

    @property
    def t_start(self) -> float:
        """Earliest time covered."""
        return self.segments[0].t_a

    @property
    def t_end(self) -> float:
        """Latest time covered."""
        return self.segments[-1].t_b

    @property
    def crossing_times(self) -> List[float]:
        """Times of all crossing events."""
        return [e.t for e in self.events]

    def segment_at(self, t: float, side: str = "right") -> Segment:
        """Segment active at t; at a crossing 'right' gives the later and 'left' the earlier one."""
        if not self.t_start - 1e-12 <= t <= self.t_end + 1e-12:
            raise ValueError(f"t={t} outside the trajectory range [{self.t_start}, {self.t_end}]")
        candidates = [s for s in self.segments if s.t_a <= t <= s.t_b]
        if not candidates:
            return self.segments[0] if t < self.t_start else self.segments[-1]
        return candidates[-1] if side == "right" else candidates[0]

    def state(self, t: float, side: str = "right") -> np.ndarray:
        """Full state (x, or (x, y) when y drifts); at event times both sides give the same point."""
        return self.segment_at(t, side)(t)

    def x(self, t: float, side: str = "right") -> np.ndarray:
        """Fast state x(t)."""
        return self.state(t, side)[:self.n]

    def y(self, t: float, side: str = "right") -> np.ndarray:
        """Slow state y(t)."""
        if self.y_mode.is_frozen:
            return self.y_mode.y
        return self.state(t, side)[self.n:]

    def region_at(self, t: float, side: str = "right") -> int:
        """Region of the segment active at t (right- or left-continuous)."""
        return self.segment_at(t, side).region

    def velocity(self, system: PiecewiseSlowFastSystem, t: float, side: str = "right") -> np.ndarray:
        """One-sided fast velocity x'(t±)."""
        return system.field(self.region_at(t, side))(self.x(t, side), self.y(t, side))

    def times(self, num: int = 400) -> np.ndarray:
        """Uniform grid over the covered range, segment ends included."""
        grid = np.linspace(self.t_start, self.t_end, max(num, 2))
        ends = [s.t_a for s in self.segments] + [self.t_end]
        return np.unique(np.concatenate([grid, ends]))

    def shifted(self, dt: float) -> PiecewiseTrajectory:
        """Same trajectory with time shifted by dt."""
        return PiecewiseTrajectory([s.shifted(dt) for s in self.segments], [e.shifted(dt) for e in self.events],
                                   self.y_mode, self.n,
                                   None if self.section_time is None else self.section_time + dt, self.stop_reason)

    def check_bands(self, system: PiecewiseSlowFastSystem, samples: int = 25) -> None:
        """Sampled check that h stays inside the band of each segment's region between events."""
        for segment in self.segments:
            lower, upper = system.switching.band(segment.region)
            for t in np.linspace(segment.t_a, segment.t_b, samples)[1:-1]:
                z = segment(t)
                value = float(system.switching.h(z[:self.n], self.y(t) if self.y_mode.is_frozen else z[self.n:]))
                if (lower is not None and value < lower) or (upper is not None and value > upper):
                    raise DegenerateCrossing(f"h = {value} left the band ({lower}, {upper}) of region "
                                             f"{segment.region} at t = {t} without a detected crossing")

    def table(self, num: int = 400) -> Tuple[List[str], np.ndarray]:
        """Trajectory samples with columns t, x1..xn, y1..ym, region."""
        rows = []
        for t in self.times(num):
            rows.append(np.concatenate([[t], self.x(t), self.y(t), [self.region_at(t)]]))
        m = len(self.y_mode.y)
        header = ["t"] + [f"x{i + 1}" for i in range(self.n)] + [f"y{j + 1}" for j in range(m)] + ["region"]
        return header, np.array(rows)

    def event_table(self) -> Tuple[List[str], np.ndarray]:
        """Event samples with columns t, level, region_from, region_to, margin_minus, margin_plus."""
        header = ["t", "level", "region_from", "region_to", "margin_minus", "margin_plus"]
        rows = [[e.t, e.level, e.region_from, e.region_to, e.margin_minus, e.margin_plus] for e in self.events]
        return header, np.array(rows, dtype=float).reshape(len(rows), len(header))

    def __repr__(self) -> str:
        return (f"<PiecewiseTrajectory(t=[{self.t_start:.4g}, {self.t_end:.4g}], segments={len(self.segments)}, "
                f"events={len(self.events)})>")


def _terminal(fun: Callable, direction: float) -> Callable:
    fun.terminal = True
    fun.direction = direction
    return fun


def _split(system: PiecewiseSlowFastSystem, z: np.ndarray, y_mode: YMode) -> Tuple[np.ndarray, np.ndarray]:
    if y_mode.is_frozen:
        return z, y_mode.y
    return z[:system.n], z[system.n:]


def _rhs(system: PiecewiseSlowFastSystem, region: int, y_mode: YMode) -> Callable:
    piece = system.field(region)
    if y_mode.is_frozen:
        y = y_mode.y
        return lambda t, z: piece(z, y)
    n, epsilon = system.n, y_mode.epsilon

    def full(t: float, z: np.ndarray) -> np.ndarray:
        x, y = z[:n], z[n:]
        return np.concatenate([piece(x, y), epsilon * system.slow_field(x, y, epsilon)])
    return full


def _h_rate(system: PiecewiseSlowFastSystem, region: int, x: np.ndarray, y: np.ndarray, y_mode: YMode) -> float:
    rate = system.crossing_rate(region, x, y)
    if not y_mode.is_frozen:
        rate += float(np.dot(system.switching.gradient_y(x, y), y_mode.epsilon * system.slow_field(x, y,
                                                                                                     y_mode.epsilon)))
    return rate


def _check_transversal(system: PiecewiseSlowFastSystem, x: np.ndarray, y: np.ndarray,
                       below: int, above: int, t: float) -> Tuple[float, float]:
    """Rates h_x . f on both sides of a surface; raise TangentialCrossing unless both exceed eta with one sign."""
    rate_below = system.crossing_rate(below, x, y)
    rate_above = system.crossing_rate(above, x, y)
    eta = system.switching.eta
    if np.sign(rate_below) != np.sign(rate_above) or min(abs(rate_below), abs(rate_above)) <= eta:
        raise TangentialCrossing(f"crossing at t={t:.6g}, x={x}: rates h_x.f = ({rate_below:.3g}, {rate_above:.3g}) "
                                 f"on regions ({below}, {above}) are not transversal with eta={eta}")
    return rate_below, rate_above


def _initial_region(system: PiecewiseSlowFastSystem, x0: np.ndarray, y0: np.ndarray, direction: float) -> int:
    region = system.region_of(x0, y0)
    if not isinstance(region, OnBoundary):
        return region
    rate, _ = _check_transversal(system, x0, y0, region.below, region.above, 0.0)
    moving_up = (rate > 0) == (direction > 0)
    logger.debug(f"start on {region}, moving {'up' if moving_up else 'down'}")
    return region.above if moving_up else region.below


def _refine_crossing(system: PiecewiseSlowFastSystem,
                     dense: Callable,
                     t_event: float,
                     level: float,
                     region: int,
                     y_mode: YMode,
                     tolerance: float) -> Tuple[float, np.ndarray]:
    """Polish a bracketed crossing with one Newton step in t, then place x exactly on the surface."""
    z = dense(t_event)
    x, y = _split(system, z, y_mode)
    rate = _h_rate(system, region, x, y, y_mode)
    t_c = t_event - (float(system.switching.h(x, y)) - level) / rate
    z = np.array(dense(t_c), dtype=float)
    x, y = _split(system, z, y_mode)
    h_x = np.asarray(system.switching.h_x(x, y), dtype=float)
    gap = float(system.switching.h(x, y)) - level
    z[:system.n] = x - gap * h_x / np.dot(h_x, h_x)
    x, y = _split(system, z, y_mode)
    residual = abs(float(system.switching.h(x, y)) - level)
    if residual > tolerance:
        raise StepFailure(f"crossing of level {level} near t={t_c} could not be refined below {tolerance:.1e} "
                          f"(|h - c| = {residual:.3g})")
    return t_c, z


def integrate_with_events(system: PiecewiseSlowFastSystem,
                          x0: np.ndarray,
                          y_mode: YMode,
                          t_span: Tuple[float, float],
                          tolerances: Optional[Tolerances] = None,
                          stop_level: Optional[float] = None,
                          stop_near: Optional[Tuple[np.ndarray, float]] = None) -> PiecewiseTrajectory:
    """Integrate the piecewise system with crossing detection, forward or backward in time.

    :param system: the piecewise system
    :param x0: initial fast state (off the switching surfaces, or on one with a transversal flow)
    :param y_mode: frozen y, or slow drift from y with rate epsilon
    :param t_span: (t0, t1), finite; t1 < t0 integrates backward
    :param tolerances: rtol, atol and event tolerance
    :param stop_level: stop at the first crossing of h = stop_level (the anchor section)
    :param stop_near: (w, rho), stop once |x - w| < rho
    :raises TangentialCrossing: a crossing is not transversal
    :raises StepFailure: the integrator failed
    :raises LeftWorkingBox: the trajectory left the working box
    """
    tolerances = tolerances or Tolerances()
    t0, t1 = (float(t) for t in t_span)
    if not (np.isfinite(t0) and np.isfinite(t1)) or t0 == t1:
        raise ValueError(f"t_span must be finite with distinct ends, got {t_span}")
    direction = np.sign(t1 - t0)
    n = system.n
    x0 = np.asarray(x0, dtype=float)
    z = x0.copy() if y_mode.is_frozen else np.concatenate([x0, y_mode.y])
    region = _initial_region(system, x0, y_mode.y, direction)
    switching = system.switching
    box = system.working_box
    if box is not None:
        box.check(x0, "initial state")

    def h_of(z_: np.ndarray) -> float:
        x_, y_ = _split(system, z_, y_mode)
        return float(switching.h(x_, y_))

    segments, events = [], []
    t, section_time, stop_reason = t0, None, "t_end"
    while True:
        lower, upper = switching.band(region)
        # name -> (event function, level or None)
        watchers = {}
        for name, level, leaving_sign in (("upper", upper, 1.0), ("lower", lower, -1.0)):
            if level is None:
                continue
            is_section = stop_level is not None and abs(level - stop_level) <= switching.boundary_tol
            watchers["section" if is_section else name] = (
                _terminal(lambda t_, z_, c=level: h_of(z_) - c, leaving_sign), level)
        if stop_level is not None and "section" not in watchers and (
                (lower is None or lower < stop_level) and (upper is None or stop_level < upper)):
            watchers["section"] = (_terminal(lambda t_, z_: h_of(z_) - stop_level, 0.0), stop_level)
        if box is not None:
            watchers["box"] = (_terminal(lambda t_, z_: box.margin(z_[:n]), -1.0), None)
        if stop_near is not None:
            target, rho = stop_near
            watchers["near"] = (_terminal(lambda t_, z_: float(np.linalg.norm(z_[:n] - target)) - rho, -1.0), None)

        names = list(watchers)
        sol = solve_ivp(_rhs(system, region, y_mode), (t, t1), z, method="DOP853", dense_output=True,
                        rtol=tolerances.rtol, atol=tolerances.atol, events=[watchers[k][0] for k in names])
        if sol.status == -1 or not np.all(np.isfinite(sol.y)):
            raise StepFailure(f"integration failed in region {region} after t={t}: {sol.message}")
        z_end = sol.y[:, -1]
        if sol.status == 0:
            segments.append(Segment(region, *sorted((t, sol.t[-1])), sol.sol, *_ends(direction, z, z_end)))
            break

        fired = [name for name, t_events in zip(names, sol.t_events) if t_events.size]
        if len(fired) > 1 and {"upper", "lower", "section"} & set(fired) and len(
                {watchers[k][1] for k in fired if watchers[k][1] is not None}) > 1:
            raise DegenerateCrossing(f"events {fired} fired simultaneously at t={sol.t[-1]}")
        kind = fired[0] if len(fired) == 1 else next(k for k in ("box", "section", "upper", "lower", "near")
                                                    if k in fired)
        t_event = float(sol.t_events[names.index(kind)][0])
        if kind == "box":
            raise LeftWorkingBox(f"trajectory left the working box at t={t_event}, x={z_end[:n]}")
        if kind == "near":
            segments.append(Segment(region, *sorted((t, t_event)), sol.sol, *_ends(direction, z, z_end)))
            stop_reason = "near"
            break

        level = watchers[kind][1]
        t_c, z_c = _refine_crossing(system, sol.sol, t_event, level, region, y_mode, tolerances.event_tol_at(level))
        segments.append(Segment(region, *sorted((t, t_c)), sol.sol, *_ends(direction, z, z_c)))
        if kind == "section":
            section_time, stop_reason = t_c, "section"
            break

        next_region = region + (1 if kind == "upper" else -1)
        earlier, later = (region, next_region) if direction > 0 else (next_region, region)
        x_c, y_c = _split(system, z_c, y_mode)
        rate_earlier, rate_later = (system.crossing_rate(earlier, x_c, y_c), system.crossing_rate(later, x_c, y_c))
        _check_transversal(system, x_c, y_c, min(region, next_region), max(region, next_region), t_c)
        if (later > earlier) != (rate_earlier > 0):
            raise TangentialCrossing(f"crossing at t={t_c} runs against the fast flow (rate {rate_earlier:.3g})")
        events.append(CrossingEvent(t_c, x_c.copy(), np.array(y_c, dtype=float), level, earlier, later,
                                    rate_earlier, rate_later))
        logger.debug(f"crossing {earlier}->{later} at t={t_c:.10g}, rates ({rate_earlier:.4g}, {rate_later:.4g})")
        t, z, region = t_c, z_c, next_region

    return PiecewiseTrajectory(segments, events, y_mode, n, section_time, stop_reason)


def _ends(direction: float, z_first: np.ndarray, z_last: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Order segment end states by increasing time."""
    return (z_first, z_last) if direction > 0 else (z_last, z_first)


def asymptotic_time(trajectory: PiecewiseTrajectory,
                    endpoint: HyperbolicEndpoint,
                    rho: float,
                    samples: int = 2000,
                    window: float = 0.1) -> float:
    """Time beyond which the trajectory stays within rho of the endpoint.

    For the plus side this is the smallest sampled T after the last crossing with |x(t) - w| <= rho for all
    sampled t >= T; the minus side is mirrored.

    :raises NotConverged: distance not decreasing over the last window, or never below rho
    """
    times = trajectory.times(samples)
    if endpoint.side == "plus":
        if trajectory.events:
            times = times[times > trajectory.events[-1].t]
    else:
        if trajectory.events:
            times = times[times < trajectory.events[0].t]
        times = times[::-1]
    if times.size < 2:
        raise NotConverged(f"no samples beyond the crossings to check convergence to {endpoint.w}")
    distance = np.array([np.linalg.norm(trajectory.x(t) - endpoint.w) for t in times])

    tail = distance[-max(2, int(window * distance.size)):]
    increasing = np.diff(tail) > 1e-12 * (1 + tail[:-1])
    if np.any(increasing) or distance[-1] > rho:
        raise NotConverged(f"trajectory does not settle at {endpoint.w} within {rho:.1e} "
                           f"(final distance {distance[-1]:.3g})")
    outside = np.flatnonzero(distance > rho)
    index = 0 if outside.size == 0 else outside[-1] + 1
    return float(times[index])


class FrozenOrbitPair:
    """Frozen half-orbits u_- (t <= 0) and u_+ (t >= 0) anchored at the section h = anchor."""

    def __init__(self,
                 y: np.ndarray,
                 u_minus: PiecewiseTrajectory,
                 u_plus: PiecewiseTrajectory,
                 endpoint_minus: HyperbolicEndpoint,
                 endpoint_plus: HyperbolicEndpoint,
                 T_minus: float,  # noqa N803
                 T_plus: float,  # noqa N803
                 anchor: float,
                 seed_scale: float) -> None:
        self.y = np.atleast_1d(np.asarray(y, dtype=float))
        self.u_minus = u_minus
        self.u_plus = u_plus
        self.endpoint_minus = endpoint_minus
        self.endpoint_plus = endpoint_plus
        self.T_minus = T_minus
        self.T_plus = T_plus
        self.anchor = anchor
        self.seed_scale = seed_scale

    @property
    def n(self) -> int:
        """Fast dimension."""
        return self.u_minus.n

    @property
    def w0_minus(self) -> np.ndarray:
        """u_-(0, y)."""
        return self.u_minus.x(0.0, "left")

    @property
    def w0_plus(self) -> np.ndarray:
        """u_+(0, y)."""
        return self.u_plus.x(0.0, "right")

    @property
    def gap(self) -> np.ndarray:
        """w0_minus - w0_plus; zero when the frozen heteroclinic exists."""
        return self.w0_minus - self.w0_plus

    @property
    def t_range(self) -> Tuple[float, float]:
        """Computed time range of the pair."""
        return self.u_minus.t_start, self.u_plus.t_end

    @property
    def crossing_times(self) -> List[float]:
        """Crossing times t_ℓ(y) of both half-orbits."""
        return self.u_minus.crossing_times + self.u_plus.crossing_times

    def leg(self, t: float, side: Optional[str] = None) -> PiecewiseTrajectory:
        """Half-orbit covering t; at t = 0 the minus leg unless side == 'right'."""
        if t > 0 or (t == 0 and side == "right"):
            return self.u_plus
        return self.u_minus

    def x(self, t: float, side: str = "right") -> np.ndarray:
        """u(t, y): u_- for t <= 0 and u_+ for t > 0."""
        leg = self.leg(t, side)
        return leg.x(t, side)

    def velocity(self, system: PiecewiseSlowFastSystem, t: float, side: str = "right") -> np.ndarray:
        """One-sided velocity of the pair; at t = 0 'left' is u_-'(0) and 'right' is u_+'(0)."""
        return self.leg(t, side).velocity(system, t, side)

    def anchor_on_switching_surface(self, system: PiecewiseSlowFastSystem) -> bool:
        """True when the anchor section coincides with a threshold (the time origin is itself a crossing)."""
        return system.switching.is_threshold(self.anchor)

    @property
    def as_dict(self) -> Dict:
        """Convert to dict (summary, without the dense trajectories)."""
        return {
            "y": [float(v) for v in self.y],
            "w0_minus": [float(v) for v in self.w0_minus],
            "w0_plus": [float(v) for v in self.w0_plus],
            "T_minus": self.T_minus,
            "T_plus": self.T_plus,
            "t_range": list(self.t_range),
            "anchor": self.anchor,
            "seed_scale": self.seed_scale,
            "crossings_minus": [e.as_dict for e in self.u_minus.events],
            "crossings_plus": [e.as_dict for e in self.u_plus.events],
        }

    def __repr__(self) -> str:
        return f"<FrozenOrbitPair(y={list(self.y)}, w0_minus={self.w0_minus}, w0_plus={self.w0_plus})>"


def launch_halforbit(system: PiecewiseSlowFastSystem,
                     endpoint: HyperbolicEndpoint,
                     y_mode: YMode,
                     seed_scale: float,
                     tolerances: Tolerances) -> PiecewiseTrajectory:
    """Integrate from the seed w + s*v towards the anchor section and re-anchor time at the section.

    Minus side integrates forward along the unstable direction, plus side backward along the stable one.
    """
    direction = endpoint.launch_direction(np.asarray(system.switching.h_x(endpoint.w, endpoint.y), dtype=float))
    seed = endpoint.w + seed_scale * direction
    if system.region_of(seed, y_mode.y) != system.side_region(endpoint.side):
        raise AnchorNotReached(f"{endpoint.side} seed {seed} is not inside region "
                               f"{system.side_region(endpoint.side)}; reduce seed_scale")
    t_budget = tolerances.t_budget if endpoint.side == "minus" else -tolerances.t_budget
    leg = integrate_with_events(system, seed, y_mode, (0.0, t_budget), tolerances, stop_level=system.anchor)
    if leg.section_time is None:
        raise AnchorNotReached(f"{endpoint.side} half-orbit did not reach h = {system.anchor} within "
                               f"{tolerances.t_budget} time units")
    return leg.shifted(-leg.section_time)


def compute_frozen_halforbits(system: PiecewiseSlowFastSystem,
                              y: Union[float, Sequence[float]],
                              seed_scale: Optional[float] = None,
                              tolerances: Optional[Tolerances] = None,
                              guesses: Optional[Dict[str, np.ndarray]] = None) -> FrozenOrbitPair:
    """Construct the anchored frozen half-orbits u_±(t, y).

    :param system: the piecewise system
    :param y: frozen slow variable
    :param seed_scale: distance of the seeds from the endpoints (tolerances.seed_scale if None)
    :param tolerances: tolerances
    :param guesses: Newton guesses per side, overriding the system's
    """
    tolerances = tolerances or Tolerances()
    seed_scale = tolerances.seed_scale if seed_scale is None else seed_scale
    guesses = guesses or {}
    y = np.atleast_1d(np.asarray(y, dtype=float))
    mode = YMode.frozen(y)
    endpoints = {side: find_endpoint(system, side, y, guesses.get(side), tolerances) for side in ("minus", "plus")}
    u_minus = launch_halforbit(system, endpoints["minus"], mode, seed_scale, tolerances)
    u_plus = launch_halforbit(system, endpoints["plus"], mode, seed_scale, tolerances)
    for leg in (u_minus, u_plus):
        leg.check_bands(system)

    pair = FrozenOrbitPair(y, u_minus, u_plus, endpoints["minus"], endpoints["plus"],
                           asymptotic_time(u_minus, endpoints["minus"], tolerances.rho_asym),
                           asymptotic_time(u_plus, endpoints["plus"], tolerances.rho_asym),
                           system.anchor, seed_scale)
    for label, point in (("u_-(0)", pair.w0_minus), ("u_+(0)", pair.w0_plus)):
        region = system.region_of(point, y)
        if region != 0 and not (isinstance(region, OnBoundary) and 0 in (region.below, region.above)):
            logger.warning(f"{label} = {point} is not in region 0 (got {region})")
    logger.info(f"frozen orbits at y={list(y)}: gap {np.linalg.norm(pair.gap):.3e}, "
                f"crossings {pair.crossing_times}")
    return pair


class FrozenOrbitFamily:
    """The map y -> FrozenOrbitPair, with caching and interpolation across y."""

    def __init__(self,
                 system: PiecewiseSlowFastSystem,
                 seed_scale: Optional[float] = None,
                 tolerances: Optional[Tolerances] = None) -> None:
        self.system = system
        self.tolerances = tolerances or Tolerances()
        self.seed_scale = seed_scale
        self._cache: Dict[Tuple[float, ...], FrozenOrbitPair] = {}
        self._last_guesses: Dict[str, np.ndarray] = {}

    def __call__(self, y: Union[float, Sequence[float]]) -> FrozenOrbitPair:
        key = tuple(float(v) for v in np.atleast_1d(y))
        if key not in self._cache:
            pair = compute_frozen_halforbits(self.system, np.array(key), self.seed_scale, self.tolerances,
                                             self._last_guesses or None)
            self._last_guesses = {"minus": pair.endpoint_minus.w, "plus": pair.endpoint_plus.w}
            self._cache[key] = pair
        return self._cache[key]

    def state(self, t: float, y: Union[float, Sequence[float]]) -> np.ndarray:
        """u(t, y) computed at exactly this y."""
        return self(y).x(t)

    def interpolator(self, y_lower: float, y_upper: float, nodes: int = 9) -> Callable[[float, float], np.ndarray]:
        """Return (t, y) -> u(t, y), interpolated in y across Chebyshev nodes of [y_lower, y_upper] (m = 1 only).

        Times outside the computed range of some node give NaN.
        """
        if self.system.m != 1:
            raise ValueError("interpolation in y is only available for m = 1")
        if y_upper <= y_lower:
            pair = self(y_lower)
            return lambda t, y: pair.x(t) if pair.t_range[0] <= t <= pair.t_range[1] else np.full(pair.n, np.nan)
        k = np.arange(nodes)
        y_nodes = (y_lower + y_upper) / 2 + (y_upper - y_lower) / 2 * np.cos((2 * k + 1) * np.pi / (2 * nodes))
        pairs = [self(yn) for yn in y_nodes]

        def evaluate(t: float, y: float) -> np.ndarray:
            if any(not p.t_range[0] <= t <= p.t_range[1] for p in pairs):
                return np.full(self.system.n, np.nan)
            values = np.array([p.x(t) for p in pairs])
            return BarycentricInterpolator(y_nodes, values)(float(y))
        return evaluate
