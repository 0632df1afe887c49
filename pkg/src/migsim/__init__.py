"""Planning and discrete-event simulation of concurrent live migrations."""

from .migmodel import MigrationSpec, StepProfile, estimate_constant_rate, simulate_rounds
from .netgraph import Network, build_custom, build_fattree, build_wan
from .planner import MigrationTask, PlanConfig, plan, replan
from .runner import ALGORITHMS, RunResult, run
from .scenario import Scenario, ScenarioError, parse_scenario

__all__ = [
    "ALGORITHMS",
    "MigrationSpec",
    "MigrationTask",
    "Network",
    "PlanConfig",
    "RunResult",
    "Scenario",
    "ScenarioError",
    "StepProfile",
    "build_custom",
    "build_fattree",
    "build_wan",
    "estimate_constant_rate",
    "parse_scenario",
    "plan",
    "replan",
    "run",
    "simulate_rounds",
]
__version__ = "0.1.0"
