"""Melnikov matrix of an orbit pair in boundary and integral form, its rank, and the zeros y0 when m = 1."""
from __future__ import annotations

import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import quad_vec
from scipy.optimize import brentq

from hetero_melnikov.analysis_setup import AnalysisSetup
from hetero_melnikov.errors import AssumptionViolation, HeteroMelnikovError
from hetero_melnikov.system_model import PiecewiseSlowFastSystem
from hetero_melnikov.tolerances import Tolerances
from hetero_melnikov.trajectory import FrozenOrbitFamily, FrozenOrbitPair, PiecewiseTrajectory
from hetero_melnikov.variational import (J2, AdjointSolution, DichotomyData, adjoint_transport, anchor_saltation,
                                         bounded_solution_gap, dichotomy_projections, fit_decay)

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("orthonormal", "flow")


class NoSignChange(HeteroMelnikovError):
    """The persistence function has the same sign at both ends of the bracket."""


class DegenerateRoot(AssumptionViolation):
    """The zero of the persistence function is not simple."""

    assumption = "simple zero"


class TailNotDecaying(HeteroMelnikovError):
    """The Melnikov integrand does not decay at the ends of the computed orbit."""


class NoConnection(AssumptionViolation):
    """The frozen half-orbits do not connect at y0 (d = 0)."""

    assumption = "connection at y0"


class RankVerdict:
    """Numerical rank of a Melnikov matrix, with its stability under a 10x change of tolerance."""

    def __init__(self, rank: int, singular_values: np.ndarray, tol: float, neighbour_ranks: Tuple[int, int]) -> None:
        self.rank = rank
        self.singular_values = singular_values
        self.tol = tol
        self.neighbour_ranks = neighbour_ranks

    @property
    def stable(self) -> bool:
        """Same rank at tol * 10 and tol / 10."""
        return all(r == self.rank for r in self.neighbour_ranks)

    def full(self, d: int) -> bool:
        """True when the rank equals d."""
        return self.rank == d

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        return {
            "rank": self.rank,
            "singular_values": [float(s) for s in self.singular_values],
            "tol": self.tol,
            "stable": self.stable,
        }

    def __repr__(self) -> str:
        return f"<RankVerdict(rank={self.rank}, stable={self.stable})>"


def _rank(singular_values: np.ndarray, tol: float) -> int:
    if singular_values.size == 0 or singular_values[0] <= 0:
        return 0
    return int(np.count_nonzero(singular_values >= tol * float(singular_values[0])))


def rank_check(matrix: np.ndarray, tol: float = 1e-6) -> RankVerdict:
    """Numerical rank: the number of singular values >= tol * sigma_max."""
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    singular_values = np.linalg.svd(matrix, compute_uv=False) if matrix.size else np.zeros(0)
    rank = _rank(singular_values, tol)
    neighbours = (_rank(singular_values, tol * 10), _rank(singular_values, tol / 10))
    verdict = RankVerdict(rank, singular_values, tol, neighbours)
    if not verdict.stable:
        logger.warning(f"rank {rank} of the Melnikov matrix changes under a 10x tolerance change: {neighbours}")
    return verdict


def find_y0(fn: Callable[[float], float],
            bracket: Tuple[float, float],
            tolerances: Optional[Tolerances] = None) -> Tuple[float, float]:
    """Simple zero of a scalar function inside a bracket.

    :return: (y0, fn'(y0)), the derivative by central differences
    :raises NoSignChange: fn has the same sign at both ends
    :raises DegenerateRoot: |fn'(y0)| < degenerate_derivative
    """
    tolerances = tolerances or Tolerances()
    a, b = bracket
    fa, fb = fn(a), fn(b)
    if fa * fb > 0:
        raise NoSignChange(f"no sign change on [{a}, {b}]: f(a) = {fa:.6g}, f(b) = {fb:.6g}")
    if fa == 0:
        y0 = a
    elif fb == 0:
        y0 = b
    else:
        y0 = brentq(fn, a, b, xtol=1e-14, maxiter=200)
    value = fn(y0)
    if abs(value) > tolerances.root_tol:
        logger.warning(f"root y0 = {y0:.15g} leaves residual {value:.3g} above {tolerances.root_tol}")
    step = tolerances.fd_step * max(1.0, abs(y0))
    derivative = (fn(y0 + step) - fn(y0 - step)) / (2 * step)
    if abs(derivative) < tolerances.degenerate_derivative:
        raise DegenerateRoot(f"zero at y0 = {y0:.10g} is not simple (derivative {derivative:.3g})")
    logger.info(f"y0 = {y0:.12g}, derivative {derivative:.6g}")
    return float(y0), float(derivative)


def section_direction(system: PiecewiseSlowFastSystem, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Unit tangent J h_x / |h_x| of the anchor section (n = 2)."""
    if system.n != 2:
        raise ValueError(f"the section tangent is only defined for n = 2, got n = {system.n}; pass a direction")
    hx = np.asarray(system.switching.h_x(x, y), dtype=float)
    return J2 @ hx / np.linalg.norm(hx)


def signed_gap(family: FrozenOrbitFamily, y: float, direction: Optional[np.ndarray] = None) -> float:
    """Component of w0_-(y) - w0_+(y) along a direction inside the anchor section (its tangent for n = 2)."""
    pair = family(y)
    if direction is None:
        direction = section_direction(family.system, pair.w0_plus, pair.y)
    return float(np.dot(pair.gap, direction))


def locate_y0(system: PiecewiseSlowFastSystem,
              family: FrozenOrbitFamily,
              y_bracket: Tuple[float, float],
              y_guess: Sequence[float],
              tolerances: Optional[Tolerances] = None) -> Tuple[np.ndarray, Optional[float], bool]:
    """Locate y0 for m = 1 (n = 2) by the signed gap; otherwise take the guess.

    :return: (y0, derivative of the signed gap or None, degenerate family flag)
    """
    tolerances = tolerances or Tolerances()
    if system.m != 1 or system.n != 2:
        logger.info(f"no scalar persistence function for n={system.n}, m={system.m}; using y0 = {list(y_guess)}")
        return np.asarray(y_guess, dtype=float), None, False

    def gap(y: float) -> float:
        return signed_gap(family, y)

    ends = gap(y_bracket[0]), gap(y_bracket[1])
    if max(abs(v) for v in ends) <= tolerances.connection_tol:
        logger.warning(f"signed gap vanishes at both ends of {y_bracket}: degenerate family, y0 = {list(y_guess)}")
        return np.asarray(y_guess, dtype=float), None, True
    y0, derivative = find_y0(gap, y_bracket, tolerances)
    return np.array([y0]), derivative, False


def normalized_psi_basis(system: PiecewiseSlowFastSystem, pair: FrozenOrbitPair, dichotomy: DichotomyData,
                         normalization: str) -> np.ndarray:
    """psi-basis scaled for reporting; 'flow' makes psi(0-) = J u'(0-) for planar systems with d = 1."""
    if normalization not in NORMALIZATIONS:
        raise ValueError(f"normalization must be one of {NORMALIZATIONS}, got '{normalization}'")
    basis = dichotomy.psi_basis
    if normalization == "orthonormal":
        return basis
    if pair.n != 2 or dichotomy.d != 1:
        logger.warning(f"flow normalization needs n = 2 and d = 1 (n={pair.n}, d={dichotomy.d}); kept orthonormal")
        return basis
    target = J2 @ pair.velocity(system, 0.0, "left")
    return basis * float(np.dot(basis[:, 0], target))


def melnikov_boundary_form(family: FrozenOrbitFamily,
                           psi_basis: np.ndarray,
                           y0: Sequence[float],
                           fd_step: float = 1e-5,
                           anchor_inverse: Optional[np.ndarray] = None) -> np.ndarray:
    """d x m matrix psi_j^T [d/dy w0_-(y0) - B_0^{-1} d/dy w0_+(y0)] by central differences.

    :param family: frozen orbits as a function of y (anchored at the same section for every y)
    :param psi_basis: n x d basis of bounded adjoint initial conditions at 0-
    :param y0: base point
    :param fd_step: relative step, scaled by max(1, |y0_j|)
    :param anchor_inverse: B_0^{-1} when the anchor section is a switching surface
    """
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    columns = []
    for j in range(y0.size):
        step = fd_step * max(1.0, abs(y0[j]))
        shift = np.zeros(y0.size)
        shift[j] = step
        upper, lower = family(y0 + shift), family(y0 - shift)
        dw_minus = (upper.w0_minus - lower.w0_minus) / (2 * step)
        dw_plus = (upper.w0_plus - lower.w0_plus) / (2 * step)
        if anchor_inverse is not None:
            dw_plus = anchor_inverse @ dw_plus
        columns.append(psi_basis.T @ (dw_minus - dw_plus))
    return np.column_stack(columns) if columns else np.zeros((psi_basis.shape[1], 0))


def _f_y(system: PiecewiseSlowFastSystem, leg: PiecewiseTrajectory, t: float, region: int) -> np.ndarray:
    x = leg.x(t)
    return system.field(region).jacobian_y(x, leg.y_mode.y).reshape(leg.n, -1)


def _tail_bound(integrand_norm: Callable[[float], float], leg: PiecewiseTrajectory, side: str,
                samples: int = 80) -> float:
    """Bound of the integrand beyond the computed leg from an exponential envelope fitted on its outer half."""
    if side == "plus":
        times = np.linspace(leg.t_end / 2, leg.t_end, samples)
        horizon = leg.t_end
    else:
        times = np.linspace(leg.t_start, leg.t_start / 2, samples)
        horizon = leg.t_start
    norms = np.array([integrand_norm(t) for t in times])
    if np.max(norms) == 0:
        return 0.0
    K, delta = fit_decay(times, norms)  # noqa N806
    if not delta > 0:
        raise TailNotDecaying(f"Melnikov integrand does not decay on the {side} leg (fitted rate {delta:.3g})")
    return K * float(np.exp(-delta * abs(horizon))) / delta


def melnikov_integral_form(system: PiecewiseSlowFastSystem,
                           pair: FrozenOrbitPair,
                           adjoints: List[AdjointSolution],
                           tolerances: Optional[Tolerances] = None) -> Tuple[np.ndarray, float]:
    """d x m matrix ∫ psi_j(t)^T f_y(u(t, y0), y0) dt, segment by segment over the computed orbit.

    :return: (matrix, tail bound); the tails beyond the computed range are bounded, not added
    :raises TailNotDecaying: the integrand does not decay towards either end
    """
    tolerances = tolerances or Tolerances()
    d, m = len(adjoints), system.m
    if d == 0:
        return np.zeros((0, m)), 0.0

    def integrand(t: float, leg: PiecewiseTrajectory, region: int) -> np.ndarray:
        psi = np.column_stack([adjoint(t) for adjoint in adjoints])
        return (psi.T @ _f_y(system, leg, t, region)).ravel()

    total = np.zeros(d * m)
    for leg in (pair.u_minus, pair.u_plus):
        for segment in leg.segments:
            value, _ = quad_vec(lambda t, leg=leg, region=segment.region: integrand(t, leg, region),
                                segment.t_a, segment.t_b, epsrel=tolerances.quad_rel, epsabs=tolerances.quad_abs)
            total += value

    def norm_on(leg: PiecewiseTrajectory) -> Callable[[float], float]:
        return lambda t: float(np.linalg.norm(integrand(t, leg, leg.region_at(t))))

    tail = (_tail_bound(norm_on(pair.u_minus), pair.u_minus, "minus")
            + _tail_bound(norm_on(pair.u_plus), pair.u_plus, "plus"))
    return total.reshape(d, m), tail


def planar_line_integral(system: PiecewiseSlowFastSystem, pair: FrozenOrbitPair,
                         tolerances: Optional[Tolerances] = None) -> np.ndarray:
    """1 x m line integral ∫ (F_2,y u'_1 - F_1,y u'_2) dt along the orbit.

    It equals the Melnikov integral with psi = J u' when tr A vanishes and the field jumps are tangent to the
    switching surfaces.
    """
    if pair.n != 2:
        raise ValueError(f"the line integral needs n = 2, got n = {pair.n}")
    tolerances = tolerances or Tolerances()
    total = np.zeros(system.m)
    for leg in (pair.u_minus, pair.u_plus):
        for segment in leg.segments:
            def integrand(t: float, leg=leg, region=segment.region) -> np.ndarray:
                velocity = system.field(region)(leg.x(t), leg.y_mode.y)
                return (J2 @ velocity) @ _f_y(system, leg, t, region)
            value, _ = quad_vec(integrand, segment.t_a, segment.t_b, epsrel=tolerances.quad_rel,
                                epsabs=tolerances.quad_abs)
            total += value
    return total.reshape(1, -1)


def integrand_table(system: PiecewiseSlowFastSystem, pair: FrozenOrbitPair, adjoints: List[AdjointSolution],
                    num: int = 400) -> Tuple[List[str], np.ndarray]:
    """Samples with columns t, psi1_1..psi1_n (first adjoint) and the d*m integrand entries."""
    d, m, n = len(adjoints), system.m, pair.n
    header = ["t"] + [f"psi1_{i + 1}" for i in range(n)] + [f"m_{j + 1}_{k + 1}" for j in range(d) for k in range(m)]
    rows = []
    for leg in (pair.u_minus, pair.u_plus):
        for t in leg.times(num // 2):
            region = leg.region_at(t)
            psi = np.column_stack([adjoint(t) for adjoint in adjoints]) if d else np.zeros((n, 0))
            first = psi[:, 0] if d else np.full(n, np.nan)
            rows.append(np.concatenate([[t], first, (psi.T @ _f_y(system, leg, t, region)).ravel()]))
    return header, np.array(rows)


class MelnikovReport:
    """Melnikov matrices at y0 with the rank verdict."""

    def __init__(self,
                 y0: np.ndarray,
                 d: int,
                 m: int,
                 M_boundary: np.ndarray,  # noqa N803
                 M_integral: np.ndarray,  # noqa N803
                 M_bounded: np.ndarray,  # noqa N803
                 tail_bound: float,
                 rank: RankVerdict,
                 normalization: str,
                 psi_basis: np.ndarray,
                 connection_gap: float,
                 dDdy: Optional[float] = None,  # noqa N803
                 degenerate_family: bool = False,
                 M_planar: Optional[np.ndarray] = None,  # noqa N803
                 dichotomy: Optional[DichotomyData] = None,
                 integrand: Optional[Tuple[List[str], np.ndarray]] = None) -> None:
        self.y0 = y0
        self.d = d
        self.m = m
        self.M_boundary = M_boundary
        self.M_integral = M_integral
        self.M_bounded = M_bounded
        self.tail_bound = tail_bound
        self.rank = rank
        self.normalization = normalization
        self.psi_basis = psi_basis
        self.connection_gap = connection_gap
        self.dDdy = dDdy
        self.degenerate_family = degenerate_family
        self.M_planar = M_planar
        self.dichotomy = dichotomy
        self.integrand = integrand

    @property
    def form_gap(self) -> float:
        """|M_boundary - M_integral|."""
        return float(np.linalg.norm(self.M_boundary - self.M_integral)) if self.M_integral.size else 0.0

    @property
    def consistent(self) -> bool:
        """Boundary and integral forms agree within max(1e-6, 1e-3 |M|)."""
        return self.form_gap <= max(1e-6, 1e-3 * float(np.linalg.norm(self.M_integral)))

    @property
    def resolution(self) -> float:
        """Error estimate of the Melnikov matrix: boundary-integral discrepancy plus the truncated tails."""
        return self.form_gap + self.tail_bound

    @property
    def resolved(self) -> bool:
        """The d-th singular value stands above the error estimate."""
        values = self.rank.singular_values
        return self.d > 0 and values.size >= self.d and float(values[self.d - 1]) > self.resolution

    @property
    def persistent(self) -> bool:
        """Rank d, stably decided and resolved: the connection persists for small eps."""
        return self.d > 0 and self.rank.full(self.d) and self.rank.stable and self.resolved

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        return {
            "y0": [float(v) for v in self.y0],
            "d": self.d,
            "m": self.m,
            "M_boundary": self.M_boundary.tolist(),
            "M_integral": self.M_integral.tolist(),
            "M_bounded": self.M_bounded.tolist(),
            "M_planar": None if self.M_planar is None else self.M_planar.tolist(),
            "tail_bound": self.tail_bound,
            "form_gap": self.form_gap,
            "consistent": self.consistent,
            "resolution": self.resolution,
            "resolved": self.resolved,
            "rank": self.rank.as_dict,
            "persistent": self.persistent,
            "normalization": self.normalization,
            "psi_basis": self.psi_basis.T.tolist(),
            "connection_gap": self.connection_gap,
            "dDdy": self.dDdy,
            "degenerate_family": self.degenerate_family,
        }

    def __repr__(self) -> str:
        return (f"<MelnikovReport(y0={list(self.y0)}, d={self.d}, rank={self.rank.rank}, "
                f"M_integral={self.M_integral.tolist()})>")


def melnikov_report(setup: AnalysisSetup,
                    normalization: Optional[str] = None,
                    family: Optional[FrozenOrbitFamily] = None) -> MelnikovReport:
    """Locate y0, build the orbit pair and dichotomy there and evaluate the Melnikov matrix three ways.

    :param setup: system, bracket, guess and tolerances
    :param normalization: 'flow' (default for n = 2) or 'orthonormal'
    :param family: frozen orbit family to reuse
    :raises NoConnection: the dichotomy at y0 has d = 0
    """
    system, tolerances = setup.system, setup.tolerances
    normalization = normalization or ("flow" if system.n == 2 else "orthonormal")
    family = family or FrozenOrbitFamily(system, tolerances=tolerances.tightened())
    y0, derivative, degenerate = locate_y0(system, family, setup.y_bracket, setup.y_guess, tolerances)
    pair = family(y0)
    dichotomy = dichotomy_projections(system, pair, tolerances)
    if dichotomy.d == 0:
        raise NoConnection(f"R(Q+) ∩ N(Q-) is trivial at y0 = {list(y0)} (gap {np.linalg.norm(pair.gap):.3g})")

    basis = normalized_psi_basis(system, pair, dichotomy, normalization)
    jump = anchor_saltation(system, pair)
    m_boundary = melnikov_boundary_form(family, basis, y0, tolerances.fd_step,
                                        None if jump is None else jump.inverse)
    adjoints = [adjoint_transport(dichotomy, basis[:, j]) for j in range(dichotomy.d)]
    m_integral, tail = melnikov_integral_form(system, pair, adjoints, tolerances)
    gap_minus, gap_plus = bounded_solution_gap(system, pair, dichotomy, tolerances=tolerances)
    m_bounded = basis.T @ (gap_minus - gap_plus)
    m_planar = planar_line_integral(system, pair, tolerances) if system.n == 2 else None
    verdict = rank_check(m_integral, tolerances.melnikov_rank_tol)

    report = MelnikovReport(y0, dichotomy.d, system.m, m_boundary, m_integral, m_bounded, tail, verdict,
                            normalization, basis, float(np.linalg.norm(pair.gap)), derivative, degenerate,
                            m_planar, dichotomy, integrand_table(system, pair, adjoints))
    if not report.consistent:
        logger.warning(f"boundary and integral Melnikov forms differ by {report.form_gap:.3g}")
    if report.rank.full(report.d) and not report.resolved:
        logger.warning(f"Melnikov matrix {m_integral.tolist()} is within its error estimate {report.resolution:.3g}")
    logger.info(f"Melnikov matrix at y0={list(y0)}: {m_integral.tolist()} (rank {verdict.rank}, d {dichotomy.d})")
    return report
