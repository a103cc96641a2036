import json
import os
import shutil
import unittest
from tempfile import mkdtemp

import numpy as np

from hetero_melnikov.cli import main, sweep_row
from hetero_melnikov.piecewise_duffing import D_SCALE, analytic_melnikov, persistence_D_derivative, sweep_params
from tests import DEMO_SPEC_PATH, INFEASIBLE_SPEC_PATH, MALFORMED_SPEC_PATH, UNKNOWN_KEY_SPEC_PATH


def read_json(path: str) -> dict:
    """Content of a json report."""
    with open(path) as f:
        return json.load(f)


def read_csv(path: str) -> np.ndarray:
    """Rows of a csv report, header skipped."""
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


class TestCli(unittest.TestCase):

    def setUp(self):
        self.out = mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.out, ignore_errors=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out, name)

    def test_example(self):
        self.assertEqual(main(["example", "--preset", "duffing-sin", "--out", self.out]), 0)
        spec = read_json(self.path("system.json"))
        self.assertEqual(spec["model"], "piecewise-duffing")
        self.assertEqual(spec["name"], "duffing-sin")
        self.assertEqual(main(["example", "--spec", str(DEMO_SPEC_PATH), "--out", self.out]), 1)

    def test_analyze(self):
        self.assertEqual(main(["analyze", "--spec", str(DEMO_SPEC_PATH), "--out", self.out]), 0)
        for name in ("endpoints.json", "orbit.csv", "events.csv", "dichotomy.json"):
            with self.subTest(name=name):
                self.assertTrue(os.path.isfile(self.path(name)))
        dichotomy = read_json(self.path("dichotomy.json"))
        self.assertTrue(dichotomy["assumptions_passed"])
        self.assertEqual(dichotomy["feasibility_window"], [0.0, 1.0])
        with open(self.path("events.csv")) as f:
            self.assertEqual(f.read().split(), ["t,level,region_from,region_to,margin_minus,margin_plus"])
        self.assertFalse(os.path.exists(self.path("failure.json")))

    def test_melnikov(self):
        self.assertEqual(main(["melnikov", "--out", self.out]), 0)
        melnikov = read_json(self.path("melnikov.json"))
        self.assertEqual(melnikov["schema_version"], 1)
        self.assertTrue(melnikov["persistent"])
        np.testing.assert_allclose(melnikov["M_integral"], melnikov["M_analytic"], rtol=1e-4)
        np.testing.assert_allclose(melnikov["M_analytic"], [[0.05 / 6]], rtol=1e-6)
        integrand = read_csv(self.path("integrand.csv"))
        self.assertEqual(integrand.shape[1], 4)

    def test_deterministic(self):
        second = mkdtemp()
        try:
            self.assertEqual(main(["melnikov", "--preset", "piecewise-duffing", "--out", self.out]), 0)
            self.assertEqual(main(["melnikov", "--preset", "piecewise-duffing", "--out", second]), 0)
            for name in ("melnikov.json", "integrand.csv", "orbit.csv"):
                with open(self.path(name)) as f, open(os.path.join(second, name)) as g:
                    with self.subTest(name=name):
                        self.assertEqual(f.read(), g.read())
        finally:
            shutil.rmtree(second, ignore_errors=True)

    def test_not_persistent(self):
        self.assertEqual(main(["melnikov", "--preset", "duffing-constant-gap", "--out", self.out]), 2)
        self.assertFalse(read_json(self.path("melnikov.json"))["persistent"])

    def test_verify(self):
        self.assertEqual(main(["verify", "--out", self.out, "--eps", "2e-3"]), 0)
        connections = read_json(self.path("connections.json"))
        self.assertEqual(connections["failures"], [None])
        table = read_csv(self.path("convergence.csv"))
        self.assertEqual(table.shape, (1, 9))
        self.assertEqual(table[0, 1], 1.0)

    def test_infeasible(self):
        self.assertEqual(main(["analyze", "--spec", str(INFEASIBLE_SPEC_PATH), "--out", self.out]), 2)
        failure = read_json(self.path("failure.json"))
        self.assertEqual(failure["error"], "InfeasibleParameters")
        self.assertEqual(failure["assumption"], "c-feasibility window")
        self.assertFalse(os.path.exists(self.path("dichotomy.json")))

    def test_bad_input(self):
        not_an_object = self.path("array.json")
        with open(not_an_object, "w") as f:
            json.dump([1], f)
        for argv in (["analyze", "--spec", not_an_object],
                     ["analyze", "--spec", str(MALFORMED_SPEC_PATH)],
                     ["analyze", "--spec", str(UNKNOWN_KEY_SPEC_PATH)],
                     ["analyze", "--spec", os.path.join(self.out, "missing.json")],
                     ["analyze", "--tol-overrides", "nonsense_tol=1"],
                     ["analyze", "--tol-overrides", "rtol"],
                     ["sweep", "--kappa", "0.5", "--eps", ""]):
            with self.subTest(argv=argv):
                self.assertEqual(main(argv + ["--out", self.out]), 1)
                self.assertIsNone(read_json(self.path("failure.json"))["assumption"])
        self.assertRaises(SystemExit, lambda: main(["analyze", "--preset", "lorenz", "--out", self.out]))

    def test_sweep(self):
        argv = ["sweep", "--out", self.out, "--kappa", "0.1,0.2", "--levels", "0.4", "--eps", "", "--workers", "2"]
        self.assertEqual(main(argv), 0)
        table = read_csv(self.path("feasibility_map.csv"))
        self.assertEqual(table.shape, (2, 8))
        np.testing.assert_allclose(table[0], [0.4, 0.1, 1 / 3, 2 / 3, 1, 1, 0.1 * 0.296 / 6, 1], atol=1e-12)
        np.testing.assert_allclose(table[1, [0, 1, 4, 5, 7]], [0.4, 0.2, 0, 0, 0])
        self.assertTrue(np.all(np.isnan(table[1, 2:4])))
        with open(self.path("convergence.csv")) as f:
            self.assertEqual(len(f.read().splitlines()), 1)


class TestSweepRow(unittest.TestCase):

    def test_degenerate_level(self):
        # 4c^3 - 6c^2 + 1 vanishes at c = 1/2
        row = sweep_row(0.1, 0.5, 1e-10)
        self.assertEqual(row[4], 1.0)
        self.assertAlmostEqual(row[6], 0.0, places=14)
        self.assertEqual(row[7], 0.0)

    def test_matches_melnikov_report_formula(self):
        for kappa, c in ((0.1, 0.3), (0.05, 0.7)):
            row = sweep_row(kappa, c, 1e-10)
            with self.subTest(kappa=kappa, c=c):
                self.assertEqual(row[6], analytic_melnikov(sweep_params(kappa, c), [0.0])[0, 0])
                self.assertAlmostEqual(row[6] * D_SCALE, persistence_D_derivative(sweep_params(kappa, c), [0.0]),
                                       places=15)

    def test_threshold(self):
        self.assertEqual(sweep_row(0.1875, 0.5, 1e-10)[5], 0.0)
        self.assertEqual(sweep_row(0.15, 0.5, 1e-10)[5], 1.0)
