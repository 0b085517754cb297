"""Simulation and certification tools for randomly switched nonlinear systems."""

from randswitch.controller import phi, sontag_feedback, verify_decrease
from randswitch.dynamics import SwitchedSystem, integrate_switched
from randswitch.expr import Expression, evaluate, gradient, parse
from randswitch.lyapunov import LyapunovFamily, check_slow_switching
from randswitch.montecarlo import BoundParams, EnsembleSpec, expected_v_bound, mgf_bound
from randswitch.scenario import Scenario, load
from randswitch.switching import GeneratorMatrix, PmfBoundParams, SwitchingSignal, pmf_bound, sample_ctmc

__all__ = [
    "BoundParams",
    "EnsembleSpec",
    "Expression",
    "GeneratorMatrix",
    "LyapunovFamily",
    "PmfBoundParams",
    "Scenario",
    "SwitchedSystem",
    "SwitchingSignal",
    "check_slow_switching",
    "evaluate",
    "expected_v_bound",
    "gradient",
    "integrate_switched",
    "load",
    "mgf_bound",
    "parse",
    "phi",
    "pmf_bound",
    "sample_ctmc",
    "sontag_feedback",
    "verify_decrease",
]
