"""ParEGO with one-step preference elicitation for expensive bi-objective problems."""

from .dm import InteractiveDM, SimulatedDM, compute_reference_best, opportunity_cost
from .engine import RunConfig, RunResult, RunState, oc_trace, run
from .harness import ExperimentSpec, psweep, run_experiment
from .scalarize import UtilityModel, estimate_theta, sample_theta, tchebychev_asf, utility
from .testbed import PROBLEMS, lookup_problem

__version__ = "0.1.0"

__all__ = [
    "ExperimentSpec", "InteractiveDM", "PROBLEMS", "RunConfig", "RunResult", "RunState", "SimulatedDM",
    "UtilityModel", "compute_reference_best", "estimate_theta", "lookup_problem", "oc_trace",
    "opportunity_cost", "psweep", "run", "run_experiment", "sample_theta", "tchebychev_asf", "utility",
]
