"""Asymptotic (WKB) solutions of Kolmogorov-Feller type equations with small parameter."""

from .symbol import Symbol, eval_hamiltonian, eval_derivatives, heat_symbol
from .hamilton import InitialData, integrate_bundle, time_reverse, caustic_time
from .manifold import LagrangianCurve, snapshot
from .scenario import Scenario, load_scenario

__all__ = [
    "Symbol", "eval_hamiltonian", "eval_derivatives", "heat_symbol",
    "InitialData", "integrate_bundle", "time_reverse", "caustic_time",
    "LagrangianCurve", "snapshot", "Scenario", "load_scenario",
]
