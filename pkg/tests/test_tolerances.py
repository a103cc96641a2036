import unittest

from hetero_melnikov.tolerances import Tolerances


class TestTolerances(unittest.TestCase):

    def test_defaults(self):
        tolerances = Tolerances()
        self.assertEqual(tolerances.newton_tol, 1e-12)
        self.assertEqual(tolerances.shoot_max_iter, 40)
        self.assertEqual(tolerances.verify_tol, 0.05)
        self.assertIn("rho_dichotomy", Tolerances.names())
        self.assertEqual(set(tolerances.as_dict), set(Tolerances.names()))

    def test_overrides(self):
        tolerances = Tolerances(rtol=1e-11, shoot_max_iter=12.0)
        self.assertEqual(tolerances.rtol, 1e-11)
        self.assertIsInstance(tolerances.shoot_max_iter, int)
        self.assertEqual(Tolerances().rtol, 1e-10)

        updated = tolerances.updated(atol=1e-14)
        self.assertEqual(updated.rtol, 1e-11)
        self.assertEqual(updated.atol, 1e-14)

    def test_invalid_overrides(self):
        for overrides in ({"rtol": 0}, {"atol": -1e-3}, {"unknown_tol": 1.0}, {"rtol": "small"}, {"rtol": True}):
            with self.subTest(overrides=overrides):
                self.assertRaises(ValueError, lambda: Tolerances(**overrides))

    def test_parse_overrides(self):
        tolerances = Tolerances(rtol=1e-8).updated(**Tolerances.parse_overrides("rtol=1e-11, shoot_tol=1e-9"))
        self.assertEqual(tolerances.rtol, 1e-11)
        self.assertEqual(tolerances.shoot_tol, 1e-9)
        self.assertEqual(Tolerances.parse_overrides(""), {})
        self.assertEqual(Tolerances.parse_overrides("fd_step=1e-4"), {"fd_step": 1e-4})

        for text in ("rtol", "rtol=small", "rtol=-1"):
            with self.subTest(text=text):
                self.assertRaises(ValueError, lambda: Tolerances().updated(**Tolerances.parse_overrides(text)))

    def test_tightened(self):
        tolerances = Tolerances(rtol=1e-8).tightened(10)
        self.assertAlmostEqual(tolerances.rtol, 1e-9, delta=1e-22)
        self.assertAlmostEqual(tolerances.atol, 1e-13, delta=1e-26)
        self.assertEqual(tolerances.shoot_tol, Tolerances().shoot_tol)

    def test_event_tolerance(self):
        tolerances = Tolerances()
        self.assertEqual(tolerances.event_tol_at(0.5), 1e-12)
        self.assertAlmostEqual(tolerances.event_tol_at(-4.0), 4e-12, delta=1e-25)

    def test_io(self):
        tolerances = Tolerances(rtol=1e-11, verify_tol=0.1)
        self.assertEqual(Tolerances.from_dict(tolerances.as_dict), tolerances)
        self.assertEqual(Tolerances.from_dict({"rtol": 1e-11, "verify_tol": 0.1}), tolerances)
        self.assertNotEqual(Tolerances(), tolerances)
