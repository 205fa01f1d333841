"""Dynamic crack growth in a viscoelastic solid with memory.

Public entry points: :func:`load_scenario` to read a scenario file,
:func:`run_evolution` to grow the crack window by window, and
:func:`check_eta_maximality` to test an alternative evolution.
"""

from .domain import DomainSpec
from .driver import (Alternative, Evolution, EvolutionConfig, Problem, check_eta_maximality,
                     continue_evolution, is_balanced, maximize_interval, run_evolution, select_best)
from .energy import EnergyLedger, balance_residual, external_work, viscous_dissipation
from .geometry import CrackPath, LengthProfile, validate_path, validate_profile
from .material import MaterialModel
from .mesh import CrackedMesh, build_cracked_mesh
from .scenario import Scenario, ScenarioError, SpeedGateError, load_scenario, parse_scenario
from .solver import HistoryData, LoadSet, SolverError, SolverState, Trajectory, step_elastic

__version__ = "0.1.0"

__all__ = [
    "Alternative", "CrackPath", "CrackedMesh", "DomainSpec", "EnergyLedger", "Evolution",
    "EvolutionConfig", "HistoryData", "LengthProfile", "LoadSet", "MaterialModel", "Problem",
    "Scenario", "ScenarioError", "SolverError", "SolverState", "SpeedGateError", "Trajectory",
    "balance_residual", "build_cracked_mesh", "check_eta_maximality", "continue_evolution",
    "external_work", "is_balanced", "load_scenario", "maximize_interval", "parse_scenario",
    "run_evolution", "select_best", "step_elastic", "validate_path", "validate_profile",
    "viscous_dissipation",
]
