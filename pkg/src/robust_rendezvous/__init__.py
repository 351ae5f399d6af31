"""Fuel-optimal low-thrust rendezvous robust to a temporary engine failure."""

from robust_rendezvous.det_solver import (
    AugLagParams,
    DetSolution,
    SolveStatus,
    project_control,
    solve_deterministic,
    solve_recourse,
)
from robust_rendezvous.dynamics import MissionSpec, reference_mission
from robust_rendezvous.failures import FailureLaw, FailureScenario, pi_f
from robust_rendezvous.inner_value import InnerSolution, InnerStatus, eval_W
from robust_rendezvous.propagation import ControlTrajectory, StateTrajectory, TimeGrid
from robust_rendezvous.smoothing import Schedules
from robust_rendezvous.stoch_solver import StochRunConfig, StochRunResult, run

__version__ = "0.1.0"

__all__ = [
    "AugLagParams", "ControlTrajectory", "DetSolution", "FailureLaw", "FailureScenario",
    "InnerSolution", "InnerStatus", "MissionSpec", "Schedules", "SolveStatus", "StateTrajectory",
    "StochRunConfig", "StochRunResult", "TimeGrid", "eval_W", "reference_mission", "pi_f",
    "project_control", "run", "solve_deterministic", "solve_recourse",
]
