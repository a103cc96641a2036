import copy
import unittest

import numpy as np

from hetero_melnikov.piecewise_duffing import demo_params, sin_params
from hetero_melnikov.spec_file import (PRESETS, SpecFileError, load_preset, load_spec, parse_spec, preset_spec)
from hetero_melnikov.tolerances import Tolerances
from tests import DEMO_SPEC_PATH, MALFORMED_SPEC_PATH, POLYNOMIAL_SPEC_PATH, UNKNOWN_KEY_SPEC_PATH


class TestPresets(unittest.TestCase):

    def test_presets(self):
        for name in PRESETS:
            with self.subTest(name=name):
                setup = load_preset(name)
                self.assertEqual(setup.system.name, name)
                self.assertEqual(setup.y_bracket, (-1.0, 1.0))
                self.assertEqual(setup.source, preset_spec(name))
        self.assertEqual(load_preset("duffing-sin").duffing, sin_params())

    def test_tolerances(self):
        setup = load_preset("piecewise-duffing", Tolerances(rtol=1e-11))
        self.assertEqual(setup.tolerances.rtol, 1e-11)
        self.assertEqual(load_preset("piecewise-duffing").tolerances, Tolerances())

    def test_unknown_preset(self):
        self.assertRaises(SpecFileError, lambda: preset_spec("lorenz"))


class TestLoadSpec(unittest.TestCase):

    def test_demo(self):
        setup = load_spec(str(DEMO_SPEC_PATH))
        self.assertEqual(setup.duffing, demo_params())
        self.assertEqual(setup.system.name, "demo")
        self.assertEqual(setup.eps_list, [0.004, 0.002, 0.001, 0.0005])
        self.assertEqual(setup.y_guess, [0.0])

    def test_polynomial(self):
        setup = load_spec(str(POLYNOMIAL_SPEC_PATH))
        self.assertIsNone(setup.duffing)
        reference = load_preset("piecewise-duffing").system
        self.assertEqual(setup.system.anchor, 0.5)
        rng = np.random.default_rng(8)
        for x, y in zip(rng.uniform(-0.5, 1.5, (20, 2)), rng.uniform(-1, 1, (20, 1))):
            region = reference.region_of(x, y)
            with self.subTest(x=x, y=y):
                self.assertEqual(setup.system.region_of(x, y), region)
                np.testing.assert_allclose(setup.system.fields[region](x, y), reference.fields[region](x, y),
                                           atol=1e-14)
                np.testing.assert_allclose(setup.system.fields[region].jacobian_y(x, y),
                                           reference.fields[region].jacobian_y(x, y), atol=1e-14)

    def test_invalid_files(self):
        for path in (MALFORMED_SPEC_PATH, UNKNOWN_KEY_SPEC_PATH):
            with self.subTest(path=path.name):
                self.assertRaises(SpecFileError, lambda: load_spec(str(path)))


class TestParseSpec(unittest.TestCase):

    spec = preset_spec("piecewise-duffing")

    def broken(self, **changes) -> dict:
        spec = copy.deepcopy(self.spec)
        spec.update(changes)
        return spec

    def test_defaults(self):
        setup = parse_spec({"model": "piecewise-duffing", "duffing": demo_params().as_dict})
        self.assertEqual(setup.duffing, demo_params())
        self.assertEqual(setup.eps_list, [4e-3, 2e-3, 1e-3, 5e-4])

    def test_analysis_tolerances(self):
        spec = copy.deepcopy(self.spec)
        spec["analysis"]["tolerances"] = {"shoot_tol": 1e-9}
        self.assertEqual(parse_spec(spec).tolerances.shoot_tol, 1e-9)
        spec["analysis"]["tolerances"] = {"shoot_tol": -1.0}
        self.assertRaises(SpecFileError, lambda: parse_spec(spec))

    def test_rejected(self):
        duffing = copy.deepcopy(self.spec["duffing"])
        duffing["a_plus"]["kind"] = "cosh"
        extra_family_key = copy.deepcopy(self.spec["duffing"])
        extra_family_key["a_minus"]["scale"] = 2.0
        cases = {
            "schema version": self.broken(schema_version=2),
            "missing duffing": {"model": "piecewise-duffing"},
            "unknown model": self.broken(model="van-der-pol"),
            "unknown top-level key": self.broken(comment="x"),
            "unknown duffing key": self.broken(duffing=dict(self.spec["duffing"], gamma=0.1)),
            "unknown family kind": self.broken(duffing=duffing),
            "unknown family key": self.broken(duffing=extra_family_key),
            "c outside (0, 1)": self.broken(duffing=dict(self.spec["duffing"], c=1.5)),
            "polynomial section": self.broken(polynomial={}),
            "missing polynomial": self.broken(model="polynomial"),
            "bad bracket": self.broken(analysis={"y_bracket": [1, -1]}),
            "bad guess": self.broken(analysis={"y_guess": [0, 0]}),
            "analysis not an object": self.broken(analysis=[1, 2]),
        }
        for name, spec in cases.items():
            with self.subTest(case=name):
                self.assertRaises(SpecFileError, lambda: parse_spec(spec))
        self.assertRaises(SpecFileError, lambda: parse_spec({"schema_version": 1}))

    def test_polynomial_checks(self):
        spec = load_spec(str(POLYNOMIAL_SPEC_PATH)).source
        short = copy.deepcopy(spec)
        short["polynomial"]["fields"]["0"] = short["polynomial"]["fields"]["0"][:1]
        slow = copy.deepcopy(spec)
        slow["polynomial"]["slow"] = [[{"coeff": 1}], [{"coeff": 1}]]
        missing = copy.deepcopy(spec)
        del missing["polynomial"]["endpoint_guesses"]
        for name, broken in (("field size", short), ("slow size", slow), ("missing key", missing)):
            with self.subTest(case=name):
                self.assertRaises(SpecFileError, lambda: parse_spec(broken))
