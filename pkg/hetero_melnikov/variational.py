"""Variational equation along frozen orbits: saltation matrices, fundamental matrices, dichotomy projections, adjoints.

Conventions
-----------
* Times are forward times; the plus leg covers t >= 0 and the minus leg t <= 0.
* When the anchor section is itself a switching surface, the jump at t = 0 belongs to the plus leg: X_+(0-) = I and
  X_+(0) = B_0. Everything at t = 0 (projections, psi-basis) is expressed in the 0- frame.
* Bounded adjoint solutions are never obtained by inverting large fundamental matrices. They are transported in the
  direction in which they grow, with QR renormalization (`AdjointSubspace`).
"""
from __future__ import annotations

import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from scipy.integrate import quad_vec, solve_ivp
from scipy.linalg import null_space, orth, solve_triangular

from hetero_melnikov.errors import AssumptionViolation, HeteroMelnikovError
from hetero_melnikov.system_model import PiecewiseSlowFastSystem, projection_from_bases
from hetero_melnikov.tolerances import Tolerances
from hetero_melnikov.trajectory import (CrossingEvent, FrozenOrbitPair, PiecewiseTrajectory, StepFailure,
                                        asymptotic_time)

logger = logging.getLogger(__name__)

J2 = np.array([[0.0, -1.0], [1.0, 0.0]])
# X(T) beyond this condition number no longer separates the transported subspaces
CONDITION_LIMIT = 1e12


class TangentialData(AssumptionViolation):
    """Saltation data with |h_x . x'(t-)| <= eta."""

    assumption = "transversal crossings"


class RankDeficient(AssumptionViolation):
    """The numerical rank of the dichotomy data cannot be decided at the requested tolerance."""

    assumption = "dichotomy rank"


class NotInComplement(HeteroMelnikovError):
    """A vector is not in the space of bounded adjoint initial conditions."""


class NotPlanar(HeteroMelnikovError):
    """The planar closed form was requested for n != 2."""


class SaltationMatrix:
    """Jump B of the variational equation at one crossing, B x = x - (h_x.x)/(h_x.u'-) (u'- - u'+)."""

    def __init__(self,
                 B: np.ndarray,  # noqa N803
                 hx: np.ndarray,
                 udot_minus: np.ndarray,
                 udot_plus: np.ndarray,
                 event: Optional[CrossingEvent] = None) -> None:
        self.B = B
        self.hx = hx
        self.udot_minus = udot_minus
        self.udot_plus = udot_plus
        self.event = event

    @property
    def det(self) -> float:
        """Determinant, equal to (h_x.u'+)/(h_x.u'-)."""
        return float(np.linalg.det(self.B))

    @property
    def inverse(self) -> np.ndarray:
        """B^{-1}; the inverse of a rank-one update is again a rank-one update, with u'-/u'+ swapped."""
        return np.eye(self.B.shape[0]) - np.outer(self.udot_plus - self.udot_minus, self.hx) / np.dot(self.hx,
                                                                                                       self.udot_plus)

    def residuals(self) -> Tuple[float, float]:
        """(|B u'- - u'+|, |det B - (h_x.u'+)/(h_x.u'-)|)."""
        flow = float(np.linalg.norm(self.B @ self.udot_minus - self.udot_plus))
        ratio = np.dot(self.hx, self.udot_plus) / np.dot(self.hx, self.udot_minus)
        return flow, abs(self.det - ratio)

    def __repr__(self) -> str:
        return f"<SaltationMatrix(B={self.B.tolist()}, det={self.det:.6g})>"


def saltation(hx: np.ndarray, udot_minus: np.ndarray, udot_plus: np.ndarray, eta: float = 1e-3,
              event: Optional[CrossingEvent] = None) -> SaltationMatrix:
    """Build the saltation matrix of a crossing.

    :param hx: gradient of h at the crossing point
    :param udot_minus: velocity just before the crossing (forward time)
    :param udot_plus: velocity just after the crossing
    :param eta: transversality margin
    :raises TangentialData: |h_x . udot_minus| <= eta
    """
    hx = np.asarray(hx, dtype=float).ravel()
    udot_minus = np.asarray(udot_minus, dtype=float)
    udot_plus = np.asarray(udot_plus, dtype=float)
    rate = float(np.dot(hx, udot_minus))
    if abs(rate) <= eta:
        raise TangentialData(f"h_x . u'(t-) = {rate:.3g} is not above eta = {eta}")
    B = np.eye(hx.size) - np.outer(udot_minus - udot_plus, hx) / rate  # noqa N806
    return SaltationMatrix(B, hx, udot_minus, udot_plus, event)


def event_saltation(system: PiecewiseSlowFastSystem, event: CrossingEvent) -> SaltationMatrix:
    """Saltation matrix of a recorded crossing event."""
    x, y = event.x, event.y
    return saltation(system.switching.h_x(x, y), system.field(event.region_from)(x, y),
                     system.field(event.region_to)(x, y), system.switching.eta, event)


def anchor_saltation(system: PiecewiseSlowFastSystem, pair: FrozenOrbitPair) -> Optional[SaltationMatrix]:
    """Jump B_0 of the plus leg at t = 0 when the anchor section is a switching surface, else None."""
    region_before = pair.u_minus.segments[-1].region
    region_after = pair.u_plus.segments[0].region
    if region_before == region_after:
        return None
    x, y = pair.w0_plus, pair.y
    return saltation(system.switching.h_x(x, y), system.field(region_before)(x, y),
                     system.field(region_after)(x, y), system.switching.eta)


def _split_interval(a: float, b: float, length: float) -> List[Tuple[float, float]]:
    pieces = max(1, int(np.ceil((b - a) / length)))
    edges = np.linspace(a, b, pieces + 1)
    return list(zip(edges[:-1], edges[1:]))


def _system_matrix(system: PiecewiseSlowFastSystem, trajectory: PiecewiseTrajectory, region: int,
                   segment_fn: Callable, y: np.ndarray) -> Callable[[float], np.ndarray]:
    piece = system.field(region)
    return lambda t: piece.jacobian_x(segment_fn(t)[:trajectory.n], y)


class _Piece:
    """Fundamental solution Phi(t, t_ref) of one chunk, with X(t) = Phi(t) X_ref."""

    def __init__(self, t_lo: float, t_hi: float, region: int, dense: Callable, x_ref: np.ndarray, n: int) -> None:
        self.t_lo = t_lo
        self.t_hi = t_hi
        self.region = region
        self.dense = dense
        self.x_ref = x_ref
        self.n = n

    def __call__(self, t: float) -> np.ndarray:
        return self.dense(t).reshape(self.n, self.n) @ self.x_ref


class PiecewiseFundamental:
    """Fundamental matrix X_±(t) of the variational equation along one leg, with jumps at events.

    The plus side is right-continuous (X(t_i+) = B_i X(t_i-)), the minus side left-continuous
    (X(t_j-) = B_j^{-1} X(t_j+)).
    """

    def __init__(self,
                 side: str,
                 pieces: List[_Piece],
                 jumps: List[SaltationMatrix],
                 system_matrix: Callable[[float, str], np.ndarray],
                 origin: float) -> None:
        self.side = side
        self.pieces = sorted(pieces, key=lambda p: p.t_lo)
        self.jumps = jumps
        self._system_matrix = system_matrix
        self.origin = origin

    @property
    def t_range(self) -> Tuple[float, float]:
        """Covered time range."""
        return self.pieces[0].t_lo, self.pieces[-1].t_hi

    def _piece(self, t: float, side: Optional[str]) -> _Piece:
        side = side or ("right" if self.side == "plus" else "left")
        lo, hi = self.t_range
        if not lo - 1e-12 <= t <= hi + 1e-12:
            raise ValueError(f"t={t} outside the fundamental matrix range [{lo}, {hi}]")
        candidates = [p for p in self.pieces if p.t_lo <= t <= p.t_hi] or [self.pieces[0 if t < lo else -1]]
        return candidates[-1] if side == "right" else candidates[0]

    def __call__(self, t: float, side: Optional[str] = None) -> np.ndarray:
        if self.side == "plus" and t == self.origin and side == "left":
            return np.eye(self.pieces[0].n)
        return self._piece(t, side)(t)

    def system_matrix(self, t: float, side: Optional[str] = None) -> np.ndarray:
        """A(t) = f_{ℓ,x}(u(t), y) on the segment active at t."""
        return self._system_matrix(t, self._piece(t, side).region)

    def derivative(self, t: float, side: Optional[str] = None) -> np.ndarray:
        """X'(t) = A(t) X(t)."""
        return self.system_matrix(t, side) @ self(t, side)

    def condition(self, t: float) -> float:
        """Condition number of X(t)."""
        return float(np.linalg.cond(self(t)))

    def __repr__(self) -> str:
        return f"<PiecewiseFundamental(side={self.side}, t_range={self.t_range}, jumps={len(self.jumps)})>"


def _solve_matrix_ode(system_matrix: Callable[[float], np.ndarray], t0: float, t1: float, start: np.ndarray,
                      tolerances: Tolerances, adjoint: bool = False) -> Callable:
    n, r = start.shape

    def rhs(t: float, z: np.ndarray) -> np.ndarray:
        a = system_matrix(t)
        y = z.reshape(n, r)
        return (-(a.T @ y) if adjoint else a @ y).ravel()

    sol = solve_ivp(rhs, (t0, t1), start.ravel(), method="DOP853", dense_output=True,
                    rtol=tolerances.rtol, atol=tolerances.atol)
    if sol.status != 0 or not np.all(np.isfinite(sol.y)):
        raise StepFailure(f"variational integration failed on [{t0}, {t1}]: {sol.message}")
    return sol.sol


def fundamental_matrix(system: PiecewiseSlowFastSystem,
                       trajectory: PiecewiseTrajectory,
                       side: str,
                       t_limit: Optional[float] = None,
                       tolerances: Optional[Tolerances] = None,
                       initial_jump: Optional[SaltationMatrix] = None) -> PiecewiseFundamental:
    """Fundamental matrix along a frozen trajectory.

    The plus side starts at the trajectory's first time and runs forward, the minus side starts at its last time
    and runs backward. Products are accumulated chunk by chunk (chunk_length) so that no single solve has to
    represent a badly conditioned matrix.

    :param system: the piecewise system
    :param trajectory: frozen trajectory (a leg of a FrozenOrbitPair)
    :param side: 'plus' or 'minus'
    :param t_limit: stop at this time instead of the trajectory end
    :param tolerances: integrator tolerances and chunk_length
    :param initial_jump: jump applied right after the origin (plus side only)
    """
    if side not in ("plus", "minus"):
        raise ValueError(f"side must be 'plus' or 'minus', got '{side}'")
    if not trajectory.y_mode.is_frozen:
        raise ValueError("fundamental matrices are defined along frozen trajectories only")
    tolerances = tolerances or Tolerances()
    n, y = trajectory.n, trajectory.y_mode.y
    origin = trajectory.t_start if side == "plus" else trajectory.t_end
    if t_limit is None:
        t_limit = trajectory.t_end if side == "plus" else trajectory.t_start
    segments = trajectory.segments if side == "plus" else list(reversed(trajectory.segments))
    events = {e.t: e for e in trajectory.events}

    current = np.eye(n)
    jumps: List[SaltationMatrix] = []
    if initial_jump is not None:
        if side != "plus":
            raise ValueError("an initial jump is only defined for the plus side")
        current = initial_jump.B.copy()
        jumps.append(initial_jump)
    pieces = []
    for segment in segments:
        lo, hi = max(segment.t_a, min(origin, t_limit)), min(segment.t_b, max(origin, t_limit))
        if hi <= lo:
            continue
        if side == "minus" and segment.t_b in events and segment.t_b < origin:
            jump = event_saltation(system, events[segment.t_b])
            jumps.append(jump)
            current = jump.inverse @ current
        matrix = _system_matrix(system, trajectory, segment.region, segment, y)
        chunks = _split_interval(lo, hi, tolerances.chunk_length)
        for a, b in (chunks if side == "plus" else reversed(chunks)):
            t_ref, t_end = (a, b) if side == "plus" else (b, a)
            dense = _solve_matrix_ode(matrix, t_ref, t_end, np.eye(n), tolerances)
            piece = _Piece(a, b, segment.region, dense, current, n)
            pieces.append(piece)
            current = piece(t_end)
        if side == "plus" and segment.t_b in events and segment.t_b < t_limit:
            jump = event_saltation(system, events[segment.t_b])
            jumps.append(jump)
            current = jump.B @ current
    if not pieces:
        raise ValueError(f"empty range between {origin} and {t_limit}")
    logger.debug(f"{side} fundamental matrix at t={t_limit}: cond {np.linalg.cond(current):.2e}")

    def system_matrix(t: float, region: int) -> np.ndarray:
        return system.field(region).jacobian_x(trajectory.x(t), y)
    return PiecewiseFundamental(side, pieces, jumps, system_matrix, origin)


def fundamental_pair(system: PiecewiseSlowFastSystem,
                     pair: FrozenOrbitPair,
                     t_minus: Optional[float] = None,
                     t_plus: Optional[float] = None,
                     tolerances: Optional[Tolerances] = None) -> Tuple[PiecewiseFundamental, PiecewiseFundamental]:
    """(X_-, X_+) of an orbit pair, the anchor jump attached to the plus side."""
    minus = fundamental_matrix(system, pair.u_minus, "minus", t_minus, tolerances)
    plus = fundamental_matrix(system, pair.u_plus, "plus", t_plus, tolerances, anchor_saltation(system, pair))
    return minus, plus


def fit_decay(times: np.ndarray, norms: np.ndarray) -> Tuple[float, float]:
    """Fit an envelope K e^{-delta |t|} to sampled norms.

    delta comes from a least-squares line through log(norm) against |t|, K is the smallest constant for which the
    envelope bounds every sample. A non-positive delta means no decay was observed.
    """
    times = np.abs(np.asarray(times, dtype=float))
    norms = np.asarray(norms, dtype=float)
    keep = norms > 0
    if np.count_nonzero(keep) < 2:
        return 0.0, float("inf")
    slope, _ = np.polyfit(times[keep], np.log(norms[keep]), 1)
    delta = -float(slope)
    K = float(np.max(norms[keep] * np.exp(delta * times[keep])))  # noqa N806
    return K, delta


class AdjointSubspace:
    """Bounded solutions of the adjoint equation psi' = -A^T psi along one leg.

    Plus side: the forward-bounded solutions, transported backward from the end of the leg to 0-, starting from the
    complement of the stable subspace at w_+. Minus side: the backward-bounded solutions, transported forward from
    the start of the leg, starting from the complement of the unstable subspace at w_-. Both directions are the
    ones in which the solutions grow, so the transport is well conditioned.
    """

    def __init__(self, side: str, n: int, chunks: List[Tuple[float, float, Callable]], factors: List[np.ndarray],
                 final_basis: np.ndarray) -> None:
        self.side = side
        self.n = n
        # chunks and factors in integration order
        self.chunks = chunks
        self.factors = factors
        self.final_basis = final_basis

    @property
    def dim(self) -> int:
        """Dimension of the subspace."""
        return self.final_basis.shape[1]

    @property
    def t_range(self) -> Tuple[float, float]:
        """Covered time range."""
        ends = [t for lo, hi, _ in self.chunks for t in (lo, hi)]
        return min(ends), max(ends)

    def residual(self, psi0: np.ndarray) -> float:
        """Distance of psi0 from the subspace at 0-."""
        return float(np.linalg.norm(psi0 - self.final_basis @ (self.final_basis.T @ psi0)))

    def coefficients(self, psi0: np.ndarray, tolerance: float = 1e-6) -> List[np.ndarray]:
        """Chunk coefficients of the solution through psi0 at 0-.

        :raises NotInComplement: psi0 is not in the subspace
        """
        psi0 = np.asarray(psi0, dtype=float)
        residual = self.residual(psi0)
        if residual > tolerance * max(1.0, float(np.linalg.norm(psi0))):
            raise NotInComplement(f"vector {psi0} is {residual:.3g} away from the bounded {self.side} adjoint space")
        coeffs = [solve_triangular(self.factors[-1], self.final_basis.T @ psi0)]
        for factor in reversed(self.factors[:-1]):
            coeffs.append(solve_triangular(factor, coeffs[-1]))
        return coeffs[::-1]

    def evaluate(self, t: float, coeffs: List[np.ndarray], side: str = "right") -> np.ndarray:
        """psi(t) of the solution with given coefficients; at a jump 'right' gives psi(t+), 'left' psi(t-)."""
        if t == 0.0 and side == "left" and self.side == "plus":
            return self.final_basis @ (self.factors[-1] @ coeffs[-1])
        hits = [i for i, (lo, hi, _) in enumerate(self.chunks) if lo <= t <= hi]
        if not hits:
            raise ValueError(f"t={t} outside the adjoint range {self.t_range}")
        if len(hits) > 1:
            hits = [i for i in hits if (self.chunks[i][0] == t) == (side == "right")] or hits
        index = hits[0]
        return self.chunks[index][2](t).reshape(self.n, self.dim) @ coeffs[index]

    def __repr__(self) -> str:
        return f"<AdjointSubspace(side={self.side}, dim={self.dim}, t_range={self.t_range})>"


def adjoint_subspace(system: PiecewiseSlowFastSystem,
                     pair: FrozenOrbitPair,
                     side: str,
                     tolerances: Optional[Tolerances] = None) -> AdjointSubspace:
    """Transport the bounded adjoint subspace of one leg to 0- (see AdjointSubspace)."""
    tolerances = tolerances or Tolerances()
    n, y = pair.n, pair.y
    leg = pair.u_plus if side == "plus" else pair.u_minus
    endpoint = pair.endpoint_plus if side == "plus" else pair.endpoint_minus
    events = {e.t: e for e in leg.events}
    if side == "plus":
        basis = null_space(endpoint.stable_basis.T) if endpoint.stable_basis.size else np.eye(n)
        segments = list(reversed(leg.segments))
    else:
        basis = null_space(endpoint.unstable_basis.T) if endpoint.unstable_basis.size else np.eye(n)
        segments = leg.segments

    chunks, factors = [], []
    for index, segment in enumerate(segments):
        matrix = _system_matrix(system, leg, segment.region, segment, y)
        intervals = _split_interval(segment.t_a, segment.t_b, tolerances.chunk_length)
        for a, b in (reversed(intervals) if side == "plus" else intervals):
            t0, t1 = (b, a) if side == "plus" else (a, b)
            dense = _solve_matrix_ode(matrix, t0, t1, basis, tolerances, adjoint=True)
            end = dense(t1).reshape(n, basis.shape[1])
            if side == "plus" and t1 in events and t1 == segment.t_a:
                end = event_saltation(system, events[t1]).B.T @ end
            elif side == "minus" and t1 in events and t1 == segment.t_b:
                end = np.linalg.inv(event_saltation(system, events[t1]).B).T @ end
            elif side == "plus" and t1 == 0.0 and index == len(segments) - 1:
                jump = anchor_saltation(system, pair)
                if jump is not None:
                    end = jump.B.T @ end
            chunks.append((a, b, dense))
            basis, factor = np.linalg.qr(end)
            factors.append(factor)
    logger.debug(f"{side} adjoint subspace of dimension {basis.shape[1]} transported in {len(chunks)} chunks")
    return AdjointSubspace(side, n, chunks, factors, basis)


class DichotomyData:
    """Projections Q_± at t = 0-, dimension d of R(Q_+) ∩ N(Q_-), psi-basis and fitted dichotomy constants."""

    def __init__(self,
                 Q_plus: np.ndarray,  # noqa N803
                 Q_minus: np.ndarray,  # noqa N803
                 range_plus: np.ndarray,
                 null_plus: np.ndarray,
                 range_minus: np.ndarray,
                 null_minus: np.ndarray,
                 psi_basis: np.ndarray,
                 singular_values: np.ndarray,
                 K: float,  # noqa N803
                 delta: float,
                 T_minus: float,  # noqa N803
                 T_plus: float,  # noqa N803
                 rho: float,
                 flow_residual: float,
                 fundamentals: Tuple[PiecewiseFundamental, PiecewiseFundamental],
                 adjoints: Dict[str, AdjointSubspace]) -> None:
        self.Q_plus = Q_plus
        self.Q_minus = Q_minus
        self.range_plus = range_plus
        self.null_plus = null_plus
        self.range_minus = range_minus
        self.null_minus = null_minus
        self.psi_basis = psi_basis
        self.singular_values = singular_values
        self.K = K
        self.delta = delta
        self.T_minus = T_minus
        self.T_plus = T_plus
        self.rho = rho
        self.flow_residual = flow_residual
        self.fundamentals = fundamentals
        self.adjoints = adjoints

    @property
    def n(self) -> int:
        """Fast dimension."""
        return self.Q_plus.shape[0]

    @property
    def k(self) -> int:
        """rank Q_+."""
        return self.range_plus.shape[1]

    @property
    def d(self) -> int:
        """dim R(Q_+) ∩ N(Q_-)."""
        return self.psi_basis.shape[1]

    def projection_defects(self) -> Tuple[float, float]:
        """(|Q_+^2 - Q_+|, |Q_-^2 - Q_-|)."""
        return (float(np.linalg.norm(self.Q_plus @ self.Q_plus - self.Q_plus)),
                float(np.linalg.norm(self.Q_minus @ self.Q_minus - self.Q_minus)))

    def annihilation_residual(self) -> float:
        """max_j (|psi_j^T Q_+|, |psi_j^T (I - Q_-)|)."""
        eye = np.eye(self.n)
        return float(max(np.max(np.abs(self.psi_basis.T @ self.Q_plus), initial=0.0),
                         np.max(np.abs(self.psi_basis.T @ (eye - self.Q_minus)), initial=0.0)))

    @property
    def as_dict(self) -> Dict:
        """Convert to dict."""
        return {
            "n": self.n,
            "k": self.k,
            "d": self.d,
            "K": self.K,
            "delta": self.delta,
            "T_minus": self.T_minus,
            "T_plus": self.T_plus,
            "rho": self.rho,
            "Q_plus": self.Q_plus.tolist(),
            "Q_minus": self.Q_minus.tolist(),
            "psi_basis": self.psi_basis.T.tolist(),
            "singular_values": [float(s) for s in self.singular_values],
            "flow_residual": self.flow_residual,
            "projection_defects": list(self.projection_defects()),
        }

    def __repr__(self) -> str:
        return f"<DichotomyData(n={self.n}, k={self.k}, d={self.d}, K={self.K:.3g}, delta={self.delta:.3g})>"


def _horizons(pair: FrozenOrbitPair, rho: float) -> Tuple[float, float]:
    """(T_-, T_+) after which both legs stay within rho of their endpoints."""
    return (asymptotic_time(pair.u_minus, pair.endpoint_minus, rho),
            asymptotic_time(pair.u_plus, pair.endpoint_plus, rho))


def _well_conditioned_horizons(pair: FrozenOrbitPair, minus: PiecewiseFundamental, plus: PiecewiseFundamental,
                               tolerances: Tolerances) -> Tuple[float, float, float]:
    """(rho, T_-, T_+) for the smallest rho = rho_asym * 10^k <= rho_dichotomy with cond X(T) <= CONDITION_LIMIT."""
    rho, decades = tolerances.rho_asym, 0
    t_minus, t_plus = minus.t_range[0], plus.t_range[1]
    while max(minus.condition(t_minus), plus.condition(t_plus)) > CONDITION_LIMIT:
        if tolerances.rho_asym * 10 ** (decades + 1) > tolerances.rho_dichotomy * (1 + 1e-9):
            logger.warning(f"fundamental matrices stay above cond {CONDITION_LIMIT:.0e} up to rho = {rho:.0e}")
            break
        decades += 1
        rho = tolerances.rho_asym * 10 ** decades
        t_minus, t_plus = _horizons(pair, rho)
    if decades:
        logger.info(f"projection horizon raised to rho = {rho:.0e} (cond X(T) above {CONDITION_LIMIT:.0e} at "
                    f"rho_asym = {tolerances.rho_asym:.0e})")
    return rho, t_minus, t_plus


def _transported_decay(fundamental: PiecewiseFundamental, basis: np.ndarray, samples: int = 60) -> Tuple[float, float]:
    lo, hi = fundamental.t_range
    times = np.linspace(lo, hi, samples)
    norms = np.array([max(np.linalg.norm(fundamental(t) @ basis[:, j]) for j in range(basis.shape[1]))
                      for t in times])
    return fit_decay(times, norms)


def dichotomy_projections(system: PiecewiseSlowFastSystem,
                          pair: FrozenOrbitPair,
                          tolerances: Optional[Tolerances] = None) -> DichotomyData:
    """Dichotomy projections of the variational equation along an orbit pair.

    Q_+ = X_+(T_+)^{-1} P_+ X_+(T_+) and Q_- = X_-(T_-)^{-1} P_- X_-(T_-), with P_± the spectral stable projections
    at w_± and T_± the times after which the orbit stays within rho of the endpoints. rho starts at rho_asym and is
    raised by decades, up to rho_dichotomy, while cond X_±(T_±) exceeds CONDITION_LIMIT. The projections are
    assembled from transported bases. d and the psi-basis come from the singular values of [Q_+^T; (I - Q_-)^T].

    :raises RankDeficient: a singular value falls between rank_gap and sqrt(rank_gap) (relative)
    """
    tolerances = tolerances or Tolerances()
    n = pair.n
    minus, plus = fundamental_pair(system, pair, *_horizons(pair, tolerances.rho_asym), tolerances)
    rho, t_minus, t_plus = _well_conditioned_horizons(pair, minus, plus, tolerances)

    x_plus, x_minus = plus(t_plus), minus(t_minus)
    range_plus = orth(np.linalg.solve(x_plus, pair.endpoint_plus.stable_basis))
    null_plus = orth(np.linalg.solve(x_plus, pair.endpoint_plus.unstable_basis))
    range_minus = orth(np.linalg.solve(x_minus, pair.endpoint_minus.stable_basis))
    null_minus = orth(np.linalg.solve(x_minus, pair.endpoint_minus.unstable_basis))
    q_plus = projection_from_bases(range_plus, null_plus)
    q_minus = projection_from_bases(range_minus, null_minus)

    stacked = np.vstack([q_plus.T, (np.eye(n) - q_minus).T])
    _, singular_values, vt = np.linalg.svd(stacked)
    scale = max(float(singular_values[0]), np.finfo(float).tiny)
    null = singular_values <= tolerances.rank_gap * scale
    ambiguous = (~null) & (singular_values <= np.sqrt(tolerances.rank_gap) * scale)
    if np.any(ambiguous):
        raise RankDeficient(f"singular values {singular_values} leave dim R(Q+) ∩ N(Q-) undecided at gap "
                            f"{tolerances.rank_gap}")
    psi_basis = vt[null].T

    K_plus, delta_plus = _transported_decay(plus, range_plus)  # noqa N806
    K_minus, delta_minus = _transported_decay(minus, null_minus)  # noqa N806
    velocity = pair.velocity(system, 0.0, "left")
    flow_residual = float(max(np.linalg.norm(velocity - range_plus @ (range_plus.T @ velocity)),
                              np.linalg.norm(velocity - null_minus @ (null_minus.T @ velocity)))
                          / np.linalg.norm(velocity))
    data = DichotomyData(q_plus, q_minus, range_plus, null_plus, range_minus, null_minus, psi_basis,
                         singular_values, max(K_plus, K_minus), min(delta_plus, delta_minus), t_minus, t_plus, rho,
                         flow_residual, (minus, plus),
                         {side: adjoint_subspace(system, pair, side, tolerances) for side in ("minus", "plus")})
    defects = data.projection_defects()
    if max(defects) > tolerances.projection_tol * max(1.0, float(np.linalg.norm(q_plus)),
                                                      float(np.linalg.norm(q_minus))):
        logger.warning(f"transported projections are not idempotent to {tolerances.projection_tol}: {defects}")
    logger.info(f"dichotomy at y={list(pair.y)}: k={data.k}, d={data.d}, delta={data.delta:.4g}, "
                f"flow residual {flow_residual:.2e}")
    return data


class AdjointSolution:
    """A bounded solution psi(t) of the adjoint equation, defined on both legs."""

    def __init__(self,
                 psi0: np.ndarray,
                 minus: Callable[[float, str], np.ndarray],
                 plus: Callable[[float, str], np.ndarray],
                 t_range: Tuple[float, float],
                 mu: Optional[Dict[float, float]] = None,
                 method: str = "transport") -> None:
        self.psi0 = np.asarray(psi0, dtype=float)
        self._minus = minus
        self._plus = plus
        self.t_range = t_range
        self.mu = mu or {}
        self.method = method

    def __call__(self, t: float, side: str = "right") -> np.ndarray:
        if t > 0 or (t == 0 and side == "right"):
            return self._plus(t, side)
        return self._minus(t, side)

    def pairing(self, t: float, v: np.ndarray, side: str = "right") -> float:
        """psi(t)^T v."""
        return float(np.dot(self(t, side), v))

    def jump_residuals(self, system: PiecewiseSlowFastSystem, events: List[CrossingEvent]) -> List[float]:
        """|B^T psi(t+) - psi(t-)| at each event."""
        return [float(np.linalg.norm(event_saltation(system, e).B.T @ self(e.t, "right") - self(e.t, "left")))
                for e in events]

    @classmethod
    def from_fundamental(cls, fundamentals: Tuple[PiecewiseFundamental, PiecewiseFundamental],
                         psi0: np.ndarray) -> AdjointSolution:
        """psi(t) = X(t)^{-T} psi0 evaluated literally; only sensible on moderate ranges."""
        minus, plus = fundamentals
        psi0 = np.asarray(psi0, dtype=float)
        return cls(psi0,
                   lambda t, side: np.linalg.solve(minus(t, side).T, psi0),
                   lambda t, side: np.linalg.solve(plus(t, side).T, psi0),
                   (minus.t_range[0], plus.t_range[1]), method="fundamental")

    def __repr__(self) -> str:
        return f"<AdjointSolution(psi0={self.psi0}, method={self.method}, t_range={self.t_range})>"


def adjoint_transport(dichotomy: DichotomyData, psi: np.ndarray, tolerance: float = 1e-8) -> AdjointSolution:
    """Bounded adjoint solution through psi at 0-.

    :raises NotInComplement: psi is not in the span of the psi-basis
    """
    psi = np.asarray(psi, dtype=float)
    basis = dichotomy.psi_basis
    residual = float(np.linalg.norm(psi - basis @ (basis.T @ psi)))
    if residual > tolerance * max(1.0, float(np.linalg.norm(psi))):
        raise NotInComplement(f"psi = {psi} is not in [R(Q+) + N(Q-)]^perp (residual {residual:.3g})")
    minus, plus = dichotomy.adjoints["minus"], dichotomy.adjoints["plus"]
    c_minus, c_plus = minus.coefficients(psi), plus.coefficients(psi)
    return AdjointSolution(psi,
                           lambda t, side: minus.evaluate(t, c_minus, side),
                           lambda t, side: plus.evaluate(t, c_plus, side),
                           (minus.t_range[0], plus.t_range[1]))


def jump_tangency(system: PiecewiseSlowFastSystem, x: np.ndarray, y: np.ndarray, region_from: int,
                  region_to: int) -> float:
    """|h_x . (f_to - f_from)| / (|h_x| |f_to - f_from|); 0 when the field jump is tangent to the surface."""
    jump = system.field(region_to)(x, y) - system.field(region_from)(x, y)
    hx = np.asarray(system.switching.h_x(x, y), dtype=float)
    size = float(np.linalg.norm(jump) * np.linalg.norm(hx))
    return 0.0 if size == 0 else abs(float(np.dot(hx, jump))) / size


def _trace_integral(system: PiecewiseSlowFastSystem, leg: PiecewiseTrajectory, side: str,
                    tolerances: Tolerances) -> Callable[[float], float]:
    """t -> ∫_0^t tr A(s) ds along one leg."""
    y = leg.y_mode.y
    segments = leg.segments if side == "plus" else list(reversed(leg.segments))
    pieces, accumulated = [], 0.0
    for segment in segments:
        piece = system.field(segment.region)
        t0, t1 = (segment.t_a, segment.t_b) if side == "plus" else (segment.t_b, segment.t_a)
        sol = solve_ivp(lambda t, s, seg=segment, f=piece: [np.trace(f.jacobian_x(seg(t)[:leg.n], y))],
                        (t0, t1), [accumulated], method="DOP853", dense_output=True,
                        rtol=tolerances.rtol, atol=tolerances.atol)
        pieces.append((segment.t_a, segment.t_b, sol.sol))
        accumulated = float(sol.y[0, -1])

    def integral(t: float) -> float:
        for lo, hi, dense in pieces:
            if lo <= t <= hi:
                return float(dense(t)[0])
        raise ValueError(f"t={t} outside the leg [{leg.t_start}, {leg.t_end}]")
    return integral


def _mu_ratio(jump: SaltationMatrix) -> float:
    """mu_after / mu_before for one crossing: <B^{-T} J u'-, J u'+> / |u'+|^2."""
    left = np.linalg.solve(jump.B.T, J2 @ jump.udot_minus)
    return float(np.dot(left, J2 @ jump.udot_plus) / np.dot(jump.udot_plus, jump.udot_plus))


def adjoint_2d_closed_form(system: PiecewiseSlowFastSystem,
                           pair: FrozenOrbitPair,
                           tolerances: Optional[Tolerances] = None) -> AdjointSolution:
    """Bounded adjoint solution of a planar orbit pair in closed form.

    psi(t) = mu(t) e^{-∫_0^t tr A} J u'(t), with mu constant between crossings, mu = 1 on the segment ending at 0-,
    and mu_after |u'(t+)|^2 = mu_before <B^{-T} J u'(t-), J u'(t+)> at each crossing.

    :raises NotPlanar: n != 2
    """
    if pair.n != 2:
        raise NotPlanar(f"closed form adjoint needs n = 2, got n = {pair.n}")
    tolerances = tolerances or Tolerances()
    traces = {"minus": _trace_integral(system, pair.u_minus, "minus", tolerances),
              "plus": _trace_integral(system, pair.u_plus, "plus", tolerances)}

    # mu per segment start time, keyed by the forward-time start of the segment
    mu: Dict[float, float] = {}
    value = 1.0
    minus_segments = pair.u_minus.segments
    events_minus = {e.t: e for e in pair.u_minus.events}
    for segment in reversed(minus_segments):
        mu[segment.t_a] = value
        if segment.t_a in events_minus:
            value /= _mu_ratio(event_saltation(system, events_minus[segment.t_a]))
    value = 1.0
    jump = anchor_saltation(system, pair)
    if jump is not None:
        value *= _mu_ratio(jump)
    events_plus = {e.t: e for e in pair.u_plus.events}
    plus_mu: Dict[float, float] = {}
    for segment in pair.u_plus.segments:
        if segment.t_a in events_plus:
            value *= _mu_ratio(event_saltation(system, events_plus[segment.t_a]))
        plus_mu[segment.t_a] = value

    def leg_value(leg: PiecewiseTrajectory, table: Dict[float, float], trace: Callable, t: float, side: str):
        segment = leg.segment_at(t, side)
        velocity = system.field(segment.region)(leg.x(t, side), leg.y(t))
        return table[segment.t_a] * np.exp(-trace(t)) * (J2 @ velocity)

    psi0 = J2 @ pair.velocity(system, 0.0, "left")
    all_mu = {**mu, **plus_mu}
    logger.debug(f"planar adjoint jump constants {all_mu}")
    return AdjointSolution(psi0,
                           lambda t, side: leg_value(pair.u_minus, mu, traces["minus"], t, side),
                           lambda t, side: leg_value(pair.u_plus, plus_mu, traces["plus"], t, side),
                           pair.t_range, all_mu, method="planar")


def _projected_integral(adjoint: AdjointSubspace, leg: PiecewiseTrajectory, forcing: Callable,
                        tolerances: Tolerances) -> np.ndarray:
    """∫ L(s)^T k(s) ds over a leg, L the transported basis through the subspace's basis at 0-."""
    basis = adjoint.final_basis
    coeffs = [adjoint.coefficients(basis[:, j]) for j in range(adjoint.dim)]
    total = 0.0
    for segment in leg.segments:
        def integrand(s: float, seg=segment) -> np.ndarray:
            adj = np.column_stack([adjoint.evaluate(s, c) for c in coeffs])
            return (adj.T @ forcing(s, seg)).ravel()
        value, _ = quad_vec(integrand, segment.t_a, segment.t_b, epsrel=tolerances.quad_rel,
                            epsabs=tolerances.quad_abs)
        total = total + value
    return np.asarray(total)


def bounded_solution_gap(system: PiecewiseSlowFastSystem,
                         pair: FrozenOrbitPair,
                         dichotomy: DichotomyData,
                         forcing: Optional[Callable[[float, np.ndarray, int], np.ndarray]] = None,
                         tolerances: Optional[Tolerances] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Projected initial data of the bounded solutions of x' = A(t) x + k(t) on both legs.

    Returns (Q_- x_-(0), (I - Q_+) x_+(0)), each n x m, from
    Q_- x_-(0) = ∫_{-∞}^0 Q_- X_-(s)^{-1} k(s) ds and (I - Q_+) x_+(0) = -∫_0^∞ (I - Q_+) X_+(s)^{-1} k(s) ds,
    truncated to the computed legs. The kernels are written through the bounded adjoint bases L(s), so
    Q_- X_-(s)^{-1} = R (L_0^T R)^{-1} L(s)^T with R spanning R(Q_-); the plus side is analogous.

    :param forcing: (x, y, region) -> k, an n x m matrix; f_y by default
    """
    tolerances = tolerances or Tolerances()
    y = pair.y
    if forcing is None:
        def forcing(x: np.ndarray, y_: np.ndarray, region: int) -> np.ndarray:
            return system.field(region).jacobian_y(x, y_)

    def along(leg: PiecewiseTrajectory) -> Callable:
        return lambda s, seg: np.atleast_2d(forcing(seg(s)[:leg.n], y, seg.region).reshape(leg.n, -1))

    minus, plus = dichotomy.adjoints["minus"], dichotomy.adjoints["plus"]
    minus_integral = _projected_integral(minus, pair.u_minus, along(pair.u_minus), tolerances)
    plus_integral = _projected_integral(plus, pair.u_plus, along(pair.u_plus), tolerances)
    m = minus_integral.size // max(minus.dim, 1)

    range_minus = dichotomy.range_minus
    gap_minus = range_minus @ np.linalg.solve(minus.final_basis.T @ range_minus, minus_integral.reshape(minus.dim, m))
    null_plus = dichotomy.null_plus
    gap_plus = -null_plus @ np.linalg.solve(plus.final_basis.T @ null_plus, plus_integral.reshape(plus.dim, m))
    return gap_minus, gap_plus
