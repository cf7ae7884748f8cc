"""Safety advisors and history-based supervisors for sandboxing controllers
of 1-D stochastic systems."""
from .abstraction import FiniteMdp, Grid, InputGrid, build_abstraction, build_grid, discretize_inputs
from .estimator import SafetyAdvisor
from .harness import ControllerSpec, TrialReport, monte_carlo, run_closed_loop, simulate_mdp
from .model import (
    ContinuousInterval,
    FiniteList,
    SystemModel,
    sample_next,
    successor_mean,
    temperature_model,
    traffic_model,
    transition_prob_to_interval,
)
from .supervisor import SINK, Decision, HistorySupervisor, SupervisorState, Verdict, check_input, quantize, step
from .synthesis import (
    InfeasibleToleranceError,
    ValuePolicyTable,
    advisor_input,
    evaluate_policy,
    value_iteration,
)

__version__ = "0.1.0"

__all__ = [
    "ContinuousInterval", "FiniteList", "SystemModel", "successor_mean", "sample_next",
    "transition_prob_to_interval", "temperature_model", "traffic_model",
    "Grid", "InputGrid", "FiniteMdp", "build_grid", "discretize_inputs", "build_abstraction",
    "ValuePolicyTable", "InfeasibleToleranceError", "value_iteration", "evaluate_policy",
    "advisor_input", "SINK", "Verdict", "Decision", "SupervisorState", "HistorySupervisor",
    "quantize", "check_input", "step", "ControllerSpec", "TrialReport", "run_closed_loop",
    "monte_carlo", "simulate_mdp", "SafetyAdvisor",
]
