"""Loading of system spec files (JSON) and the built-in presets.

Two models are understood. "piecewise-duffing" gives the families a_-(y), a_+(y) and the level c;
"polynomial" gives h, the thresholds and one polynomial field per region. Unknown keys are rejected everywhere.

Example::

    {
      "schema_version": 1,
      "model": "piecewise-duffing",
      "duffing": {"a_minus": {"kind": "tanh", "offset": 0.75, "amplitude": 0.05},
                  "a_plus": {"kind": "tanh", "offset": 0.25, "amplitude": 0.05},
                  "c": 0.5},
      "analysis": {"y_bracket": [-1, 1], "y_guess": [0], "eps": [0.004, 0.002, 0.001, 0.0005]}
    }
"""
from __future__ import annotations

import json
import logging
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from hetero_melnikov.analysis_setup import DEFAULT_EPS, AnalysisSetup
from hetero_melnikov.families import ParameterFamily
from hetero_melnikov.piecewise_duffing import (DomainError, DuffingParams, as_system, constant_gap_params,
                                               demo_params, sin_params)
from hetero_melnikov.polynomial import PolynomialField
from hetero_melnikov.system_model import InvalidSystem, PiecewiseSlowFastSystem, SmoothField, SwitchingSpec
from hetero_melnikov.tolerances import Tolerances
from hetero_melnikov.working_box import WorkingBox

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
MODELS = ("piecewise-duffing", "polynomial")


class SpecFileError(Exception):
    """A spec file cannot be read, parsed or validated."""


def _strict(section: Dict, allowed: Iterable[str], required: Iterable[str], where: str) -> None:
    if not isinstance(section, dict):
        raise SpecFileError(f"'{where}' must be an object, got {type(section).__name__}")
    unknown = set(section) - set(allowed)
    if unknown:
        raise SpecFileError(f"unknown keys {sorted(unknown)} in '{where}'")
    missing = set(required) - set(section)
    if missing:
        raise SpecFileError(f"missing keys {sorted(missing)} in '{where}'")


def _polynomial_system(section: Dict, name: str) -> PiecewiseSlowFastSystem:
    _strict(section, ("n", "m", "families", "switching", "fields", "slow", "working_box", "endpoint_guesses"),
            ("n", "m", "switching", "fields", "endpoint_guesses"), "polynomial")
    n, m = int(section["n"]), int(section["m"])
    families = {key: ParameterFamily.from_dict(value) for key, value in section.get("families", {}).items()}

    switching = section["switching"]
    _strict(switching, ("h", "thresholds", "eta", "lowest_region", "anchor", "boundary_tol"),
            ("h", "thresholds"), "polynomial.switching")
    h = PolynomialField.from_dict([switching["h"]], n, m, families)
    spec = SwitchingSpec(h=lambda x, y: float(h(x, y)[0]),
                         h_x=lambda x, y: h.jacobian_x(x, y)[0],
                         thresholds=switching["thresholds"],
                         eta=switching.get("eta", 1e-3),
                         boundary_tol=switching.get("boundary_tol", 1e-12),
                         lowest_region=switching.get("lowest_region", 0),
                         h_y=lambda x, y: h.jacobian_y(x, y)[0],
                         anchor=switching.get("anchor"))

    fields = {}
    for key, components in section["fields"].items():
        field = PolynomialField.from_dict(components, n, m, families)
        if field.size != n:
            raise SpecFileError(f"field of region {key} has {field.size} components, expected {n}")
        fields[int(key)] = SmoothField(field, field.jacobian_x, field.jacobian_y)

    slow_poly = PolynomialField.from_dict(section["slow"], n, m, families) if "slow" in section else None
    if slow_poly is not None and slow_poly.size != m:
        raise SpecFileError(f"slow field has {slow_poly.size} components, expected {m}")

    def slow(x: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
        return slow_poly(x, y) if slow_poly is not None else np.ones(m)

    box = WorkingBox.from_dict(section["working_box"]) if "working_box" in section else None
    return PiecewiseSlowFastSystem(n, m, spec, fields, slow, box, section["endpoint_guesses"], name)


def parse_spec(spec: Dict) -> AnalysisSetup:
    """Build an AnalysisSetup from a spec dictionary.

    :raises SpecFileError: unknown or missing keys, wrong schema version, or an invalid system
    """
    _strict(spec, ("schema_version", "model", "name", "duffing", "polynomial", "analysis"), ("model",), "spec")
    version = spec.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise SpecFileError(f"unsupported schema_version {version}, expected {SCHEMA_VERSION}")
    model = spec["model"]
    if model not in MODELS:
        raise SpecFileError(f"unknown model '{model}', expected one of {MODELS}")
    analysis = spec.get("analysis", {})
    _strict(analysis, ("y_bracket", "y_guess", "eps", "tolerances"), (), "analysis")

    try:
        duffing = None
        if model == "piecewise-duffing":
            if "polynomial" in spec:
                raise SpecFileError("model 'piecewise-duffing' takes a 'duffing' section, not 'polynomial'")
            if "duffing" not in spec:
                raise SpecFileError("model 'piecewise-duffing' needs a 'duffing' section")
            duffing = DuffingParams.from_dict(spec["duffing"])
            system = as_system(duffing)
            default_bracket = duffing.y_interval
        else:
            if "polynomial" not in spec or "duffing" in spec:
                raise SpecFileError("model 'polynomial' needs a 'polynomial' section and no 'duffing' section")
            system = _polynomial_system(spec["polynomial"], spec.get("name", "polynomial"))
            default_bracket = (-1.0, 1.0)
        if "name" in spec:
            system.name = spec["name"]
        y_guess = analysis.get("y_guess", [0.0] * system.m)
        return AnalysisSetup(system,
                             tuple(analysis.get("y_bracket", default_bracket)),
                             np.atleast_1d(y_guess).tolist(),
                             analysis.get("eps", DEFAULT_EPS),
                             Tolerances.from_dict(analysis.get("tolerances", {})),
                             duffing,
                             spec)
    except SpecFileError:
        raise
    except (KeyError, TypeError, ValueError, DomainError, InvalidSystem) as error:
        raise SpecFileError(f"invalid {model} spec: {error}")


def load_spec(path: str) -> AnalysisSetup:
    """Read and parse a spec file.

    :raises OSError: the file cannot be read
    :raises SpecFileError: the content is not valid JSON or not a valid spec
    """
    with open(path) as f:
        try:
            spec = json.load(f)
        except json.JSONDecodeError as error:
            raise SpecFileError(f"{path} is not valid JSON: {error}")
    if not isinstance(spec, dict):
        raise SpecFileError(f"{path} must hold a JSON object, got {type(spec).__name__}")
    logger.info(f"loaded {spec.get('model', '?')} spec from {path}")
    return parse_spec(spec)


def _duffing_spec(params: DuffingParams, name: str, y_guess: float = 0.0) -> Dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "model": "piecewise-duffing",
        "name": name,
        "duffing": params.as_dict,
        "analysis": {
            "y_bracket": list(params.y_interval),
            "y_guess": [y_guess] * params.m,
            "eps": list(DEFAULT_EPS),
        },
    }


PRESETS: Dict[str, Callable[[], Dict]] = {
    "piecewise-duffing": lambda: _duffing_spec(demo_params(), "piecewise-duffing"),
    "duffing-sin": lambda: _duffing_spec(sin_params(), "duffing-sin"),
    "duffing-constant-gap": lambda: _duffing_spec(constant_gap_params(), "duffing-constant-gap"),
}


def preset_spec(name: str) -> Dict:
    """Spec dictionary of a preset."""
    if name not in PRESETS:
        raise SpecFileError(f"unknown preset '{name}', expected one of {sorted(PRESETS)}")
    return PRESETS[name]()


def load_preset(name: str, tolerances: Optional[Tolerances] = None) -> AnalysisSetup:
    """AnalysisSetup of a preset."""
    setup = parse_spec(preset_spec(name))
    return setup.with_overrides(tolerances=tolerances) if tolerances is not None else setup
