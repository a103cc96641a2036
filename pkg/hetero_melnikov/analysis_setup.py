"""Everything one analysis run needs besides the command: the system and where to look for y0."""
from __future__ import annotations

import logging
from typing import Dict, List, Optional, Sequence, Tuple

from hetero_melnikov.piecewise_duffing import DuffingParams
from hetero_melnikov.system_model import PiecewiseSlowFastSystem
from hetero_melnikov.tolerances import Tolerances

logger = logging.getLogger(__name__)

DEFAULT_EPS = (4e-3, 2e-3, 1e-3, 5e-4)


class AnalysisSetup:
    """A system together with its y-bracket, y-guess, eps list and tolerances."""

    def __init__(self,
                 system: PiecewiseSlowFastSystem,
                 y_bracket: Tuple[float, float],
                 y_guess: Sequence[float],
                 eps_list: Sequence[float] = DEFAULT_EPS,
                 tolerances: Optional[Tolerances] = None,
                 duffing: Optional[DuffingParams] = None,
                 source: Optional[Dict] = None) -> None:
        """Create the setup.

        :param system: the piecewise system
        :param y_bracket: interval searched for the zero y0 of the persistence function (m = 1)
        :param y_guess: y0 itself when no root search applies (m > 1, or a degenerate family)
        :param eps_list: decreasing eps values for the verifier
        :param tolerances: tolerances of the run
        :param duffing: parameters when the system is the piecewise Duffing example
        :param source: the spec-file dictionary the setup was read from
        """
        if y_bracket[1] <= y_bracket[0]:
            raise ValueError(f"y_bracket must be increasing, got {y_bracket}")
        if len(y_guess) != system.m:
            raise ValueError(f"y_guess {list(y_guess)} must have m = {system.m} entries")
        self.system = system
        self.y_bracket = (float(y_bracket[0]), float(y_bracket[1]))
        self.y_guess = [float(v) for v in y_guess]
        self.eps_list: List[float] = [float(e) for e in eps_list]
        self.tolerances = tolerances or Tolerances()
        self.duffing = duffing
        self.source = source

    def with_overrides(self, eps_list: Optional[Sequence[float]] = None,
                       tolerances: Optional[Tolerances] = None) -> AnalysisSetup:
        """Copy with a new eps list and/or tolerances."""
        return AnalysisSetup(self.system, self.y_bracket, self.y_guess,
                             self.eps_list if eps_list is None else eps_list,
                             tolerances or self.tolerances, self.duffing, self.source)

    def __repr__(self) -> str:
        return (f"<AnalysisSetup(system={self.system.name}, y_bracket={self.y_bracket}, y_guess={self.y_guess}, "
                f"eps_list={self.eps_list})>")
