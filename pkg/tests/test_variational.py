import unittest

import numpy as np

from hetero_melnikov.piecewise_duffing import as_system, demo_params, u_minus_closed
from hetero_melnikov.system_model import PiecewiseSlowFastSystem, SmoothField, SwitchingSpec
from hetero_melnikov.tolerances import Tolerances
from hetero_melnikov.trajectory import YMode, asymptotic_time, compute_frozen_halforbits, integrate_with_events
from hetero_melnikov.variational import (CONDITION_LIMIT, J2, AdjointSolution, NotInComplement, TangentialData,
                                         adjoint_2d_closed_form, adjoint_transport, bounded_solution_gap,
                                         dichotomy_projections, event_saltation, fit_decay, fundamental_matrix,
                                         fundamental_pair, jump_tangency, saltation)
from hetero_melnikov.working_box import WorkingBox
from tests.numeric_similarity import relative_error, subspace_angle
from tests.test_system_model import linear_system


def duffing_field(a: float, speed: float = 1.0) -> SmoothField:
    """x1' = speed * x2, x2' = x1 (x1 - a)(x1 - 1)."""
    return SmoothField(lambda x, y: np.array([speed * x[1], x[0] * (x[0] - a) * (x[0] - 1)]),
                       lambda x, y: np.array([[0.0, speed], [3 * x[0] ** 2 - 2 * (a + 1) * x[0] + a, 0.0]]),
                       lambda x, y: np.zeros((2, 1)))


def three_band_system() -> PiecewiseSlowFastSystem:
    """Duffing pieces on x1 < 0.4, 0.4 < x1 < 0.6 and x1 > 0.6; the middle band moves x1 faster, anchor at 0.5."""
    switching = SwitchingSpec(h=lambda x, y: float(x[0]), h_x=lambda x, y: np.array([1.0, 0.0]),
                              thresholds=[0.4, 0.6], lowest_region=-1, anchor=0.5)
    fields = {-1: duffing_field(0.75), 0: duffing_field(0.5, speed=1.3), 1: duffing_field(0.25)}
    return PiecewiseSlowFastSystem(2, 1, switching, fields, lambda x, y, eps: np.ones(1),
                                   WorkingBox([-0.5, -1.0], [1.5, 1.0]),
                                   endpoint_guesses={"minus": [0.0, 0.0], "plus": [1.0, 0.0]}, name="three-band")


class TestSaltation(unittest.TestCase):

    def test_duffing_crossing(self):
        speed = 0.5 * np.sqrt(1.75) / np.sqrt(6)
        # x'' = x (x - a)(x - 1) at x = 1/2 with a = 3/4 before and 1/4 after the crossing
        jump = saltation([1.0, 0.0], [speed, 0.0625], [speed, -0.0625])
        np.testing.assert_allclose(jump.B, [[1.0, 0.0], [-0.125 / speed, 1.0]], atol=1e-14)
        self.assertAlmostEqual(jump.B[1, 0], -0.46291, places=5)
        self.assertAlmostEqual(jump.det, 1.0, places=14)

    def test_continuous_field(self):
        jump = saltation([0.3, -1.0], [1.0, 2.0], [1.0, 2.0])
        np.testing.assert_array_equal(jump.B, np.eye(2))

    def test_tangential(self):
        self.assertRaises(TangentialData, lambda: saltation([1.0, 0.0], [1e-4, 1.0], [0.5, 1.0]))
        self.assertRaises(TangentialData, lambda: saltation([1.0, 0.0], [0.05, 1.0], [0.5, 1.0], eta=0.1))

    def test_random_crossings(self):
        rng = np.random.default_rng(20)
        for case in range(500):
            hx = rng.normal(size=2)
            udot_minus = rng.normal(size=2)
            while abs(np.dot(hx, udot_minus)) <= 0.1:
                udot_minus = rng.normal(size=2)
            udot_plus = rng.normal(size=2)
            if np.sign(np.dot(hx, udot_plus)) != np.sign(np.dot(hx, udot_minus)):
                udot_plus = -udot_plus
            jump = saltation(hx, udot_minus, udot_plus, eta=0.1)
            flow, det = jump.residuals()
            scale = 1 + np.linalg.norm(udot_plus) / abs(np.dot(hx, udot_minus)) * np.linalg.norm(hx)
            psi_plus = rng.normal(size=2)
            psi_minus = jump.B.T @ psi_plus
            v_minus = rng.normal(size=2)
            with self.subTest(case=case):
                self.assertLessEqual(flow, 1e-10 * scale * (1 + np.linalg.norm(udot_minus)))
                self.assertLessEqual(det, 1e-10 * scale ** 2)
                np.testing.assert_allclose(jump.inverse @ jump.B, np.eye(2), atol=1e-10 * scale ** 2)
                self.assertAlmostEqual(np.dot(psi_minus, v_minus), np.dot(psi_plus, jump.B @ v_minus),
                                       delta=1e-10 * scale * (1 + np.linalg.norm(psi_plus) * np.linalg.norm(v_minus)))

    def test_jump_tangency(self):
        system = as_system(demo_params())
        self.assertEqual(jump_tangency(system, np.array([0.5, 0.27]), np.zeros(1), 0, 1), 0.0)
        bands = three_band_system()
        self.assertGreater(jump_tangency(bands, np.array([0.4, 0.25]), np.zeros(1), -1, 0), 0.1)


class TestFundamentalMatrix(unittest.TestCase):

    tolerances = Tolerances().tightened()
    system = three_band_system()
    pair = compute_frozen_halforbits(system, 0.0, tolerances=tolerances)
    minus, plus = fundamental_pair(system, pair, -8.0, 8.0, tolerances)

    def test_constant_matrix(self):
        system = linear_system(np.diag([-1.0, 2.0]))
        forward = integrate_with_events(system, np.array([1.0, 0.0]), YMode.frozen(0.0), (0.0, 3.0))
        backward = integrate_with_events(system, np.array([1.0, 0.0]), YMode.frozen(0.0), (0.0, -3.0))
        plus = fundamental_matrix(system, forward, "plus")
        minus = fundamental_matrix(system, backward, "minus")
        for t in (0.5, 1.5, 3.0):
            with self.subTest(t=t):
                np.testing.assert_allclose(plus(t), np.diag(np.exp([-t, 2 * t])), rtol=1e-8, atol=1e-12)
                np.testing.assert_allclose(minus(-t), np.diag(np.exp([t, -2 * t])), rtol=1e-8, atol=1e-12)
        np.testing.assert_allclose(plus(0.0), np.eye(2), atol=1e-15)
        self.assertRaises(ValueError, lambda: plus(4.0))
        self.assertRaises(ValueError, lambda: fundamental_matrix(system, forward, "middle"))

    def test_events(self):
        self.assertEqual(len(self.pair.u_minus.events), 1)
        self.assertEqual(len(self.pair.u_plus.events), 1)
        self.assertEqual(len(self.plus.jumps), 1)
        self.assertEqual(len(self.minus.jumps), 1)

    def test_jumps(self):
        t_plus = self.pair.u_plus.events[0].t
        jump = event_saltation(self.system, self.pair.u_plus.events[0])
        np.testing.assert_allclose(self.plus(t_plus, "right"), jump.B @ self.plus(t_plus, "left"), atol=1e-12)
        t_minus = self.pair.u_minus.events[0].t
        jump = event_saltation(self.system, self.pair.u_minus.events[0])
        np.testing.assert_allclose(self.minus(t_minus, "left"), jump.inverse @ self.minus(t_minus, "right"),
                                   atol=1e-12)

    def test_velocity_transport(self):
        start_plus = self.pair.velocity(self.system, 0.0, "right")
        start_minus = self.pair.velocity(self.system, 0.0, "left")
        for t in np.linspace(0.25, 8.0, 16):
            with self.subTest(t=t):
                np.testing.assert_allclose(self.plus(t) @ start_plus, self.pair.velocity(self.system, t), atol=1e-7)
                np.testing.assert_allclose(self.minus(-t) @ start_minus, self.pair.velocity(self.system, -t),
                                           atol=1e-7)

    def test_finite_differences(self):
        events = self.pair.crossing_times
        step = 1e-5
        for t in np.linspace(-7.9, 7.9, 20):
            if min(abs(t - e) for e in events + [0.0]) < 1e-2:
                continue
            fundamental = self.plus if t > 0 else self.minus
            difference = (fundamental(t + step) - fundamental(t - step)) / (2 * step)
            with self.subTest(t=t):
                self.assertLessEqual(relative_error(difference, fundamental.derivative(t)), 1e-6)


class TestPlanarAdjoint(unittest.TestCase):

    tolerances = Tolerances().tightened()
    system = three_band_system()
    pair = compute_frozen_halforbits(system, 0.0, tolerances=tolerances)
    minus, plus = fundamental_pair(system, pair, -6.0, 6.0, tolerances)
    psi = adjoint_2d_closed_form(system, pair, tolerances)

    def test_jump_conditions(self):
        events = self.pair.u_minus.events + self.pair.u_plus.events
        for residual in self.psi.jump_residuals(self.system, events):
            self.assertLessEqual(residual, 1e-8)
        self.assertTrue(any(abs(mu - 1) > 1e-3 for mu in self.psi.mu.values()))

    def test_pairing_is_constant(self):
        rng = np.random.default_rng(5)
        for xi in rng.normal(size=(3, 2)):
            for fundamental, times in ((self.plus, np.linspace(0.0, 6.0, 25)),
                                       (self.minus, np.linspace(-6.0, 0.0, 25))):
                side = "right" if fundamental is self.plus else "left"
                start = self.psi.pairing(0.0, xi, side)
                for t in times:
                    for at in ("left", "right"):
                        value = self.psi.pairing(t, fundamental(t, at) @ xi, at if t != 0 else side)
                        with self.subTest(t=t, side=at):
                            self.assertAlmostEqual(value, start, delta=1e-8 * (1 + np.linalg.norm(xi)))

    def test_psi_along_velocity(self):
        for t in (-5.0, -1.0, 1.0, 5.0):
            with self.subTest(t=t):
                self.assertLess(subspace_angle(self.psi(t), J2 @ self.pair.velocity(self.system, t)), 1e-10)
        self.assertEqual(self.psi.method, "planar")


class TestDichotomy(unittest.TestCase):

    system = as_system(demo_params())
    tolerances = Tolerances()
    pair = compute_frozen_halforbits(system, 0.0, tolerances=tolerances.tightened())
    data = dichotomy_projections(system, pair, tolerances)
    velocity = pair.velocity(system, 0.0, "left")

    def test_dimensions(self):
        self.assertEqual(self.data.n, 2)
        self.assertEqual(self.data.k, 1)
        self.assertEqual(self.data.d, 1)
        for defect in self.data.projection_defects():
            self.assertLessEqual(defect, 1e-8)
        self.assertLessEqual(self.data.annihilation_residual(), 1e-7)

    def test_orbit_direction(self):
        self.assertLess(subspace_angle(self.data.range_plus, self.velocity), 1e-6)
        self.assertLess(subspace_angle(self.data.null_minus, self.velocity), 1e-6)
        self.assertLess(subspace_angle(self.data.psi_basis, J2 @ self.velocity), 1e-6)
        self.assertLess(self.data.flow_residual, 1e-6)

    def test_projection_transport(self):
        _, plus = self.data.fundamentals
        x_plus = plus(self.data.T_plus)
        projection = self.pair.endpoint_plus.P0
        self.assertLessEqual(np.linalg.norm(x_plus @ self.data.Q_plus - projection @ x_plus),
                             1e-6 * np.linalg.norm(x_plus))

    def test_decay(self):
        _, plus = self.data.fundamentals
        self.assertGreater(self.data.delta, 0)
        self.assertGreater(self.data.K, 0)
        rng = np.random.default_rng(9)
        times = np.linspace(0.0, self.data.T_plus, 40)
        for weight in rng.normal(size=3):
            xi = weight * self.data.range_plus[:, 0]
            norms = [np.linalg.norm(plus(t) @ xi) for t in times]
            _, delta = fit_decay(times, norms)
            with self.subTest(weight=weight):
                self.assertGreater(delta, 0.1)
        growing = self.data.null_plus[:, 0] + self.data.range_plus[:, 0]
        _, delta = fit_decay(times, [np.linalg.norm(plus(t) @ growing) for t in times])
        self.assertLess(delta, 0)

    def test_transport_matches_closed_form(self):
        psi = adjoint_transport(self.data, self.data.psi_basis[:, 0])
        planar = adjoint_2d_closed_form(self.system, self.pair)
        scale = np.dot(psi.psi0, planar.psi0) / np.dot(planar.psi0, planar.psi0)
        for t in (-8.0, -2.0, -0.5, 0.5, 2.0, 8.0):
            with self.subTest(t=t):
                self.assertLessEqual(relative_error(psi(t), scale * planar(t)), 1e-6)
        for mu in planar.mu.values():
            self.assertAlmostEqual(mu, 1.0, places=10)

    def test_not_in_complement(self):
        self.assertRaises(NotInComplement, lambda: adjoint_transport(self.data, self.velocity))

    def test_from_fundamental(self):
        psi0 = self.data.psi_basis[:, 0]
        literal = AdjointSolution.from_fundamental(self.data.fundamentals, psi0)
        transported = adjoint_transport(self.data, psi0)
        for t in (-3.0, -1.0, 1.0, 3.0):
            with self.subTest(t=t):
                self.assertLessEqual(relative_error(literal(t), transported(t)), 1e-6)

    def test_bounded_solution_gap(self):
        gap_minus, gap_plus = bounded_solution_gap(self.system, self.pair, self.data)
        self.assertEqual(gap_minus.shape, (2, 1))
        self.assertEqual(gap_plus.shape, (2, 1))
        self.assertTrue(np.all(np.isfinite(gap_minus - gap_plus)))

    def test_as_dict(self):
        summary = self.data.as_dict
        self.assertEqual(summary["d"], 1)
        self.assertEqual(summary["k"], 1)
        self.assertEqual(summary["rho"], self.data.rho)

    def test_horizon(self):
        minus, plus = self.data.fundamentals
        self.assertLessEqual(self.tolerances.rho_asym, self.data.rho)
        self.assertLessEqual(self.data.rho, self.tolerances.rho_dichotomy * (1 + 1e-9))
        self.assertLessEqual(max(minus.condition(self.data.T_minus), plus.condition(self.data.T_plus)),
                             CONDITION_LIMIT)
        self.assertEqual(minus.t_range[0], asymptotic_time(self.pair.u_minus, self.pair.endpoint_minus,
                                                           self.tolerances.rho_asym))
        if self.data.rho > self.tolerances.rho_asym:
            closer = self.data.rho / 10
            t_minus = asymptotic_time(self.pair.u_minus, self.pair.endpoint_minus, closer)
            t_plus = asymptotic_time(self.pair.u_plus, self.pair.endpoint_plus, closer)
            self.assertGreater(max(minus.condition(t_minus), plus.condition(t_plus)), CONDITION_LIMIT)


class TestDichotomyAtAsymptoticRadius(unittest.TestCase):

    params = demo_params()
    system = as_system(params)
    tolerances = Tolerances(rho_asym=1e-4, rho_dichotomy=1e-2)
    pair = compute_frozen_halforbits(system, 0.0, tolerances=tolerances.tightened())
    data = dichotomy_projections(system, pair, tolerances)

    def closed_form_velocity(self) -> np.ndarray:
        u, udot = u_minus_closed(self.params, 0.0, 0.0)
        a_minus = self.params.a("minus", 0.0)
        return np.array([udot, u * (u - a_minus) * (u - 1)])

    def test_radius_kept(self):
        self.assertEqual(self.data.rho, 1e-4)
        self.assertEqual(self.data.T_plus, asymptotic_time(self.pair.u_plus, self.pair.endpoint_plus, 1e-4))
        self.assertEqual(self.data.T_minus, asymptotic_time(self.pair.u_minus, self.pair.endpoint_minus, 1e-4))

    def test_matches_closed_form(self):
        velocity = self.closed_form_velocity()
        self.assertEqual(self.data.d, 1)
        self.assertLess(subspace_angle(self.data.range_plus, velocity), 1e-6)
        self.assertLess(subspace_angle(self.data.null_minus, velocity), 1e-6)
        self.assertLess(subspace_angle(self.data.psi_basis, J2 @ velocity), 1e-6)
        scale = np.linalg.norm(velocity)
        self.assertLessEqual(np.linalg.norm(self.data.Q_plus @ velocity - velocity), 1e-6 * scale)
        self.assertLessEqual(np.linalg.norm(self.data.Q_minus @ velocity), 1e-6 * scale)


class TestFitDecay(unittest.TestCase):

    def test_exponential(self):
        times = np.linspace(-6.0, 0.0, 30)
        K, delta = fit_decay(times, 3.0 * np.exp(-0.5 * np.abs(times)))  # noqa N806
        self.assertAlmostEqual(K, 3.0, places=10)
        self.assertAlmostEqual(delta, 0.5, places=10)

    def test_degenerate(self):
        self.assertEqual(fit_decay(np.linspace(0, 1, 5), np.zeros(5)), (0.0, float("inf")))
