"""Two-stage max-weight learning: drift-plus-penalty control with exploration
events and moving-average estimates of the stage-1 functional."""

from .builtins import build
from .controller import APPROACHES, Controller, RunResult, Schedule, run
from .oracle import StationaryPolicy, exact_e, solve_fstar
from .queues import QueueState, lyapunov
from .scenario import (ObjectiveSpec, OutcomeDistribution, ScenarioError, ScenarioModel,
                       evaluate_slot, load_scenario, sample_outcome)
from .weights import ControlParams, best_aux, best_stage2, y_functional

__version__ = "0.1.0"

__all__ = [
    "APPROACHES", "Controller", "ControlParams", "ObjectiveSpec", "OutcomeDistribution",
    "QueueState", "RunResult", "ScenarioError", "ScenarioModel", "Schedule",
    "StationaryPolicy", "best_aux", "best_stage2", "build", "evaluate_slot", "exact_e",
    "load_scenario", "lyapunov", "run", "sample_outcome", "solve_fstar", "y_functional",
]
