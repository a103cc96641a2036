import unittest

import numpy as np

from hetero_melnikov.piecewise_duffing import as_system, demo_params
from hetero_melnikov.system_model import (InvalidSystem, NoConvergence, NotHyperbolic, OnBoundary,
                                          PiecewiseSlowFastSystem, SmoothField, SpectralGapViolated, SwitchingSpec,
                                          WrongRegion, central_difference_jacobian, find_endpoint,
                                          projection_from_bases, region_of, spectral_projection)
from hetero_melnikov.working_box import WorkingBox


def linear_system(matrix: np.ndarray) -> PiecewiseSlowFastSystem:
    """One-region system x' = A x with no switching levels."""
    n = matrix.shape[0]
    switching = SwitchingSpec(h=lambda x, y: float(x[0]), h_x=lambda x, y: np.eye(n)[0], thresholds=[], anchor=0.0)
    field = SmoothField(lambda x, y: matrix @ x, lambda x, y: matrix, lambda x, y: np.zeros((n, 1)))
    return PiecewiseSlowFastSystem(n, 1, switching, {0: field}, lambda x, y, eps: np.ones(1),
                                   endpoint_guesses={"minus": np.ones(n), "plus": np.ones(n)}, name="linear")


class TestRegions(unittest.TestCase):

    system = as_system(demo_params())

    def test_region_of(self):
        y = np.array([0.0])
        self.assertEqual(region_of(self.system, np.array([0.2, 0.1]), y), 0)
        self.assertEqual(region_of(self.system, np.array([0.9, 0.1]), y), 1)
        on_surface = region_of(self.system, np.array([0.5, 0.27]), y)
        self.assertIsInstance(on_surface, OnBoundary)
        self.assertEqual((on_surface.below, on_surface.above), (0, 1))

    def test_several_levels(self):
        spec = SwitchingSpec(h=lambda x, y: float(x[0]), h_x=lambda x, y: np.array([1.0]),
                             thresholds=[-1.0, 0.0, 2.0], lowest_region=-2)
        self.assertEqual(spec.regions, [-2, -1, 0, 1])
        self.assertEqual(spec.classify(-5.0), -2)
        self.assertEqual(spec.classify(1.0), 0)
        self.assertEqual(spec.classify(3.0), 1)
        self.assertEqual(spec.band(0), (0.0, 2.0))
        self.assertEqual(spec.band(-2), (None, -1.0))
        self.assertEqual(spec.level_between(-1, 0), 0.0)
        self.assertRaises(ValueError, lambda: spec.level_between(-2, 0))
        self.assertRaises(ValueError, lambda: spec.band(4))

    def test_evaluate_agrees_with_pieces(self):
        rng = np.random.default_rng(3)
        for x in self.system.working_box.sample(100, rng):
            y = rng.uniform(-1, 1, 1)
            region = self.system.region_of(x, y)
            with self.subTest(x=x):
                np.testing.assert_array_equal(self.system.evaluate(x, y), self.system.fields[region](x, y))
        self.assertRaises(ValueError, lambda: self.system.evaluate(np.array([0.5, 0.1]), np.zeros(1)))

    def test_invalid_systems(self):
        h, h_x = (lambda x, y: float(x[0])), (lambda x, y: np.array([1.0, 0.0]))
        self.assertRaises(InvalidSystem, lambda: SwitchingSpec(h, h_x, [0.5, 0.5]))
        self.assertRaises(InvalidSystem, lambda: SwitchingSpec(h, h_x, [0.5], eta=0))
        self.assertRaises(InvalidSystem, lambda: SmoothField(lambda x, y: x))
        field = self.system.fields[0]
        self.assertRaises(InvalidSystem,
                          lambda: PiecewiseSlowFastSystem(2, 1, SwitchingSpec(h, h_x, [0.5]), {0: field}, None))
        self.assertRaises(InvalidSystem,
                          lambda: PiecewiseSlowFastSystem(2, 1, SwitchingSpec(h, h_x, [0.5]), {0: field, 1: field},
                                                          None, working_box=WorkingBox([0], [1])))

    def test_check_fields(self):
        self.system.check_fields([np.array([-1.0]), np.array([1.0])], seed=5)
        broken = SmoothField(lambda x, y: np.array([x[1], np.log(x[0])]), lambda x, y: np.eye(2),
                             lambda x, y: np.zeros((2, 1)))
        system = PiecewiseSlowFastSystem(2, 1, self.system.switching, {0: broken, 1: broken}, self.system.slow,
                                         WorkingBox([-0.5, -1.0], [1.5, 1.0]))
        with np.errstate(invalid="ignore", divide="ignore"):
            self.assertRaises(InvalidSystem, lambda: system.check_fields([np.zeros(1)]))

    def test_anchor(self):
        self.assertEqual(self.system.anchor, 0.5)
        self.assertEqual(self.system.side_region("minus"), 0)
        self.assertEqual(self.system.side_region("plus"), 1)
        self.assertRaises(ValueError, lambda: self.system.side_region("middle"))


class TestEndpoints(unittest.TestCase):

    system = as_system(demo_params())

    def test_duffing_endpoints(self):
        for y in (-0.8, 0.0, 0.6):
            with self.subTest(y=y):
                minus = find_endpoint(self.system, "minus", y, guess=[0.1, 0.0])
                plus = find_endpoint(self.system, "plus", y, guess=[0.9, 0.0])
                np.testing.assert_allclose(minus.w, [0, 0], atol=1e-12)
                np.testing.assert_allclose(plus.w, [1, 0], atol=1e-12)
                self.assertEqual((minus.k, plus.k), (1, 1))
                self.assertAlmostEqual(minus.mu0, 0.5)
                self.assertAlmostEqual(plus.mu0, 0.5)
                self.assertAlmostEqual(minus.delta0, np.sqrt(demo_params().a("minus", y)), places=12)

    def test_stationary(self):
        endpoint = find_endpoint(self.system, "plus", 0.3, guess=[0.9, 0.0])
        again = find_endpoint(self.system, "plus", 0.3, guess=endpoint.w)
        self.assertEqual(again.iterations, 0)
        self.assertLessEqual(np.linalg.norm(again.w - endpoint.w), 1e-12)

    def test_failures(self):
        self.assertRaises(NoConvergence, lambda: find_endpoint(self.system, "plus", 0.0, [0.5, 5.0], max_iter=0))
        # Newton from 0.74 lands on the middle root 3/4 of the minus field, which lies in the plus region
        self.assertRaises(WrongRegion, lambda: find_endpoint(self.system, "minus", 0.0, [0.74, 0.0]))
        center = linear_system(np.array([[0.0, 1.0], [-1.0, 0.0]]))
        self.assertRaises(NotHyperbolic, lambda: find_endpoint(center, "minus", 0.0))

    def test_launch_direction(self):
        minus = find_endpoint(self.system, "minus", 0.0)
        plus = find_endpoint(self.system, "plus", 0.0)
        gradient = np.array([1.0, 0.0])
        root = np.sqrt(0.75)
        np.testing.assert_allclose(minus.launch_direction(gradient), np.array([1, root]) / np.sqrt(1 + root ** 2))
        # the stable direction at (1, 0) entering from x1 < 1
        direction = plus.launch_direction(gradient)
        self.assertLess(direction[0], 0)
        np.testing.assert_allclose(plus.jacobian @ direction, -np.sqrt(0.75) * direction, atol=1e-12)

    def test_as_dict(self):
        endpoint = find_endpoint(self.system, "minus", 0.0).as_dict
        self.assertEqual(endpoint["side"], "minus")
        self.assertEqual(endpoint["k"], 1)
        self.assertEqual(sorted(endpoint["eigenvalues_real"]), [-np.sqrt(0.75), np.sqrt(0.75)])


class TestSpectralProjection(unittest.TestCase):

    def test_diagonal(self):
        projection, k = spectral_projection(np.diag([-1.0, 2.0]), 1e-6)
        np.testing.assert_allclose(projection, np.diag([1.0, 0.0]), atol=1e-14)
        self.assertEqual(k, 1)

    def test_duffing_saddle(self):
        a = 0.75
        jacobian = np.array([[0.0, 1.0], [a, 0.0]])
        projection, k = spectral_projection(jacobian, 1e-6)
        stable, unstable = np.array([1.0, -np.sqrt(a)]), np.array([1.0, np.sqrt(a)])
        np.testing.assert_allclose(projection @ stable, stable, atol=1e-12)
        np.testing.assert_allclose(projection @ unstable, 0, atol=1e-12)
        self.assertEqual(k, 1)

    def test_center(self):
        self.assertRaises(SpectralGapViolated, lambda: spectral_projection(np.array([[0.0, 1.0], [-1.0, 0.0]]), 1e-6))

    def test_random_splittings(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            n = int(rng.integers(2, 6))
            k = int(rng.integers(1, n))
            eigenvalues = np.concatenate([-rng.uniform(0.1, 3, k), rng.uniform(0.1, 3, n - k)])
            frame = rng.normal(size=(n, n)) + 3 * np.eye(n)
            jacobian = frame @ np.diag(eigenvalues) @ np.linalg.inv(frame)
            projection, rank = spectral_projection(jacobian, 1e-6)
            with self.subTest(n=n, k=k):
                self.assertEqual(rank, k)
                self.assertLessEqual(np.linalg.norm(projection @ projection - projection),
                                     1e-10 * np.linalg.cond(frame))
                self.assertLessEqual(np.linalg.norm((np.eye(n) - projection) @ jacobian @ projection),
                                     1e-8 * np.linalg.cond(frame))

    def test_projection_from_bases(self):
        projection = projection_from_bases(np.array([[1.0], [1.0]]), np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(projection, [[1, 0], [1, 0]], atol=1e-15)


class TestFiniteDifferences(unittest.TestCase):

    def test_central_difference(self):
        def fun(z):
            return np.array([np.sin(z[0]) * z[1], z[0] ** 3])
        z = np.array([0.3, -1.2])
        exact = np.array([[np.cos(0.3) * -1.2, np.sin(0.3)], [3 * 0.3 ** 2, 0.0]])
        np.testing.assert_allclose(central_difference_jacobian(fun, z), exact, atol=1e-9)

        field = SmoothField(lambda x, y: np.array([x[1] * y[0], x[0] ** 2]), fd_fallback=True)
        np.testing.assert_allclose(field.jacobian_x(np.array([2.0, 1.0]), np.array([3.0])), [[0, 3], [4, 0]],
                                   atol=1e-8)
        np.testing.assert_allclose(field.jacobian_y(np.array([2.0, 1.0]), np.array([3.0])), [[1], [0]], atol=1e-8)
