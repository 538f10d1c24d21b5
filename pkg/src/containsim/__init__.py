"""Containment control of sampled, delayed, lossy multi-agent networks."""

from .analysis import CascadeConfig, CascadeTrace, Perturbation, \
    containment_certificate, iss_estimate_check, run_blackout_sweep, \
    run_gain_sweep, simulate_cascade
from .comm import CommConfig, LinkSchedule, generate_schedule, \
    verify_blackout_bound
from .config import build_cascade, build_scenario, load_bundled, load_config
from .control import GainSet, check_gains, make_controller
from .dynamics import AgentModel, LeaderTrajectory
from .sim import Scenario, Trace, containment_error, hull_distance, run
from .topology import DirectedTopology, containment_weights, partition, \
    small_gain_certificate, validate_assumption1

__version__ = "0.1.0"

__all__ = [
    "AgentModel", "CascadeConfig", "CascadeTrace", "CommConfig",
    "DirectedTopology", "GainSet", "LeaderTrajectory", "LinkSchedule",
    "Perturbation", "Scenario", "Trace", "build_cascade", "build_scenario",
    "check_gains",
    "containment_certificate", "containment_error", "containment_weights",
    "generate_schedule", "hull_distance", "iss_estimate_check",
    "load_bundled", "load_config",
    "make_controller", "partition", "run", "run_blackout_sweep",
    "run_gain_sweep", "simulate_cascade", "small_gain_certificate",
    "validate_assumption1", "verify_blackout_bound",
]
