"""Command line front end.

Subcommands ``analyze``, ``melnikov``, ``verify``, ``sweep`` and ``example`` read a system from ``--spec`` (JSON) or
``--preset`` and write fixed-name reports under ``--out``. Exit codes: 0 when every check passes, 1 on I/O or
spec-file errors, 2 when a modelling assumption fails or persistence is not certified.
"""
import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from hetero_melnikov.__version__ import __version__
from hetero_melnikov.analysis_setup import AnalysisSetup
from hetero_melnikov.errors import AssumptionViolation, HeteroMelnikovError
from hetero_melnikov.melnikov import MelnikovReport, NoConnection, locate_y0, melnikov_report
from hetero_melnikov.persistence_verifier import convergence_study
from hetero_melnikov.piecewise_duffing import (analytic_melnikov, check_feasibility, feasibility_window, kappa_window,
                                               sweep_params)
from hetero_melnikov.reports import write_csv, write_json
from hetero_melnikov.spec_file import PRESETS, SpecFileError, load_preset, load_spec, preset_spec
from hetero_melnikov.tolerances import Tolerances
from hetero_melnikov.trajectory import FrozenOrbitFamily, FrozenOrbitPair
from hetero_melnikov.variational import DichotomyData, dichotomy_projections

logger = logging.getLogger(__name__)

LOG_ENV = "HETERO_MELNIKOV_LOG"
DEFAULT_KAPPAS = (0.05, 0.1, 0.15, 0.1875, 0.2, 0.25)
DEFAULT_LEVELS = (0.3, 0.4, 0.5, 0.6, 0.7)


def _float_list(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"'{text}' is not a comma-separated list of numbers")


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with one subparser per command."""
    parser = argparse.ArgumentParser(prog="hetero-melnikov",
                                     description="Melnikov persistence of heteroclinic orbits in piecewise-smooth "
                                                 "slow-fast systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)
    for name, text in (("analyze", "endpoints, frozen orbit pair and dichotomy at y0"),
                       ("melnikov", "Melnikov matrix at y0 and its rank"),
                       ("verify", "finite-eps connections and their convergence"),
                       ("sweep", "verify, plus a (c, kappa) feasibility/persistence map"),
                       ("example", "write a preset spec file to edit")):
        sub = commands.add_parser(name, help=text)
        source = sub.add_mutually_exclusive_group()
        source.add_argument("--spec", help="system spec file (JSON)")
        source.add_argument("--preset", choices=sorted(PRESETS), help="built-in system (default piecewise-duffing)")
        sub.add_argument("--out", required=True, help="output folder, created if missing")
        sub.add_argument("--eps", type=_float_list, help="comma-separated decreasing eps values")
        sub.add_argument("--tol-overrides", default="", help="comma-separated key=value tolerance overrides")
        sub.add_argument("--workers", type=int, default=1, help="concurrent eps runs / grid points")
        sub.add_argument("--seed", type=int, default=0, help="seed of the field sampling checks")
        if name == "sweep":
            sub.add_argument("--kappa", type=_float_list, default=list(DEFAULT_KAPPAS), help="kappa grid")
            sub.add_argument("--levels", type=_float_list, default=list(DEFAULT_LEVELS), help="switching level grid")
    return parser


def load_setup(args: argparse.Namespace) -> AnalysisSetup:
    """AnalysisSetup from --spec/--preset with the --eps and --tol-overrides applied."""
    setup = load_spec(args.spec) if args.spec else load_preset(args.preset or "piecewise-duffing")
    try:
        tolerances = setup.tolerances.updated(**Tolerances.parse_overrides(args.tol_overrides))
    except ValueError as error:
        raise SpecFileError(f"--tol-overrides: {error}")
    return setup.with_overrides(eps_list=args.eps, tolerances=tolerances)


def _check_assumptions(setup: AnalysisSetup, seed: int) -> Optional[Tuple[float, float]]:
    window = check_feasibility(setup.duffing) if setup.duffing is not None else None
    setup.system.check_fields([setup.y_bracket[0], setup.y_guess, setup.y_bracket[1]] if setup.system.m == 1
                              else [setup.y_guess], seed=seed)
    return window


def _write_stage(out: str, pair: FrozenOrbitPair, dichotomy: DichotomyData,
                 window: Optional[Tuple[float, float]] = None) -> None:
    endpoints = {"minus": pair.endpoint_minus.as_dict, "plus": pair.endpoint_plus.as_dict}
    write_json(endpoints, os.path.join(out, "endpoints.json"))

    header, minus_rows = pair.u_minus.table()
    _, plus_rows = pair.u_plus.table()
    write_csv(header, list(minus_rows) + list(plus_rows), os.path.join(out, "orbit.csv"))
    header, minus_events = pair.u_minus.event_table()
    _, plus_events = pair.u_plus.event_table()
    write_csv(header, list(minus_events) + list(plus_events), os.path.join(out, "events.csv"))

    payload = {"pair": pair.as_dict, "dichotomy": dichotomy.as_dict, "assumptions_passed": True}
    if window is not None:
        payload["feasibility_window"] = list(window)
    write_json(payload, os.path.join(out, "dichotomy.json"))


def cmd_analyze(setup: AnalysisSetup, args: argparse.Namespace) -> int:
    """Validate the hypotheses at y0 and write the frozen analysis."""
    window = _check_assumptions(setup, args.seed)
    family = FrozenOrbitFamily(setup.system, tolerances=setup.tolerances.tightened())
    y0, _, _ = locate_y0(setup.system, family, setup.y_bracket, setup.y_guess, setup.tolerances)
    pair = family(y0)
    dichotomy = dichotomy_projections(setup.system, pair, setup.tolerances)
    if dichotomy.d == 0:
        raise NoConnection(f"no bounded solution joins the half-orbits at y0 = {list(y0)}")
    _write_stage(args.out, pair, dichotomy, window)
    logger.info(f"analyze: y0 = {list(y0)}, d = {dichotomy.d}")
    return 0


def _melnikov_stage(setup: AnalysisSetup, args: argparse.Namespace) -> MelnikovReport:
    window = _check_assumptions(setup, args.seed)
    family = FrozenOrbitFamily(setup.system, tolerances=setup.tolerances.tightened())
    report = melnikov_report(setup, family=family)
    _write_stage(args.out, family(report.y0), report.dichotomy, window)

    payload = report.as_dict
    if setup.duffing is not None:
        payload["M_analytic"] = analytic_melnikov(setup.duffing, report.y0).tolist()
    write_json(payload, os.path.join(args.out, "melnikov.json"))
    header, rows = report.integrand
    write_csv(header, list(rows), os.path.join(args.out, "integrand.csv"))
    return report


def cmd_melnikov(setup: AnalysisSetup, args: argparse.Namespace) -> int:
    """Melnikov matrix at y0; exit 0 iff its rank is d."""
    report = _melnikov_stage(setup, args)
    if not report.persistent:
        logger.error(f"rank {report.rank.rank} < d = {report.d}: persistence is not certified")
        return 2
    return 0


def cmd_verify(setup: AnalysisSetup, args: argparse.Namespace) -> int:
    """Convergence study over the eps list; exit 0 iff every run converges and y0(eps_min) is near y0."""
    report = _melnikov_stage(setup, args)
    if not report.persistent:
        logger.error("Melnikov stage failed, connections are not attempted")
        return 2
    study = convergence_study(setup.system, setup.eps_list, report.y0, setup.tolerances, args.workers)
    write_csv(study.header, study.rows(), os.path.join(args.out, "convergence.csv"))
    write_json(study.as_dict, os.path.join(args.out, "connections.json"))
    if not study.all_converged:
        logger.error(f"{sum(f is not None for f in study.failures)} eps runs failed")
        return 2
    if study.converged:
        smallest = min(study.converged, key=lambda r: r.epsilon)
        deviation = float(np.linalg.norm(smallest.y_at_section - report.y0))
        if deviation >= setup.tolerances.verify_tol:
            logger.error(f"|y0(eps={smallest.epsilon}) - y0| = {deviation:.3g} >= {setup.tolerances.verify_tol}")
            return 2
    return 0


def sweep_row(kappa: float, c: float, noise_floor: float) -> List[float]:
    """Row c, kappa, window_lo, window_hi, feasible, kappa_window, melnikov, persistent of the sweep map."""
    window = feasibility_window(0.5 - kappa, 0.5 + kappa)
    feasible = window is not None and window[0] < c < window[1]
    melnikov = float(analytic_melnikov(sweep_params(kappa, c), [0.0])[0, 0])
    lo, hi = window if window is not None else (float("nan"), float("nan"))
    return [c, kappa, lo, hi, float(feasible), float(kappa_window(kappa)), melnikov,
            float(feasible and abs(melnikov) > noise_floor)]


def cmd_sweep(setup: AnalysisSetup, args: argparse.Namespace) -> int:
    """Feasibility and analytic persistence over the (c, kappa) grid, then the convergence study."""
    grid = [(k, c) for k in args.kappa for c in args.levels]
    if any(not 0 <= k < 0.5 for k, _ in grid):
        raise SpecFileError(f"--kappa values must lie in [0, 1/2), got {args.kappa}")
    noise = setup.tolerances.melnikov_noise_floor
    with ThreadPoolExecutor(max_workers=max(1, args.workers)) as executor:
        rows = list(executor.map(lambda point: sweep_row(point[0], point[1], noise), grid))
    write_csv(["c", "kappa", "window_lo", "window_hi", "feasible", "kappa_window", "melnikov", "persistent"], rows,
              os.path.join(args.out, "feasibility_map.csv"))
    logger.info(f"sweep: {sum(int(r[4]) for r in rows)}/{len(rows)} grid points feasible")
    return cmd_verify(setup, args)


def cmd_example(args: argparse.Namespace) -> int:
    """Write a preset spec file."""
    if args.spec:
        raise SpecFileError("'example' writes a preset; use --preset, not --spec")
    write_json(preset_spec(args.preset or "piecewise-duffing"), os.path.join(args.out, "system.json"))
    return 0


COMMANDS = {"analyze": cmd_analyze, "melnikov": cmd_melnikov, "verify": cmd_verify, "sweep": cmd_sweep}


def _configure_logging() -> None:
    name = os.environ.get(LOG_ENV, "WARNING").upper()
    level = logging.getLevelName(name)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _failure(out: str, command: str, error: Exception) -> Dict:
    payload = {"command": command, "error": type(error).__name__, "message": str(error),
               "assumption": getattr(error, "assumption", None)}
    if os.path.isdir(out):
        write_json(payload, os.path.join(out, "failure.json"))
    return payload


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the exit code."""
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        os.makedirs(args.out, exist_ok=True)
        if args.command == "example":
            return cmd_example(args)
        setup = load_setup(args)
        logger.info(f"{args.command}: {setup}")
        return COMMANDS[args.command](setup, args)
    except (OSError, SpecFileError) as error:
        logger.error(f"{type(error).__name__}: {error}")
        _failure(args.out, args.command, error)
        return 1
    except AssumptionViolation as error:
        logger.error(f"assumption '{error.assumption}' violated: {error}")
        _failure(args.out, args.command, error)
        return 2
    except HeteroMelnikovError as error:
        logger.error(f"{type(error).__name__}: {error}")
        _failure(args.out, args.command, error)
        return 2


if __name__ == "__main__":
    sys.exit(main())
