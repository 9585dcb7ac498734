"""Frequency dynamics of a synchronous AC system with HVDC emergency power control.

The package couples a phasor-domain multi-machine simulator (classical
machines, hydro governors, ZIP loads, HVDC links with droop-based emergency
power control, an offshore converter hub) with the steady-state stiffness
algebra and a tuning procedure for the EPC droops.
"""

from importlib import resources

from .engine import Simulation, compute_metrics, run_simulation
from .hub import HubModel, hub_frequency_zero_inertia
from .hvdc import aggregate_beta_h, epc_droop, uniform_droop
from .machines import aggregate_beta_g, kinetic_energy
from .model import (
    Branch, Bus, CondenserSpec, CoordinatorSpec, EpcSpec, Event, FrequencyTargets, GovernorSpec,
    HubConverter, HubSpec, HvdcLinkSpec, MachineSpec, Metrics, Scenario, SimulationResult,
    SolverConfig, ZipLoadSpec,
)
from .network import build_admittance, solve_power_flow
from .results import write_result
from .scenario_io import dump_scenario, load_scenario, validate_scenario
from .tuning import (
    TuningProblem, load_tuning_problem, replacement_ratio, required_beta_h, smib_simulate,
    steady_state_deviation, tune_epc,
)

__version__ = "0.1.0"


def data_path(name: str):
    """Path of a shipped scenario or tuning-problem file, e.g. ``"nps-lite.json"``."""
    return resources.files(__name__).joinpath("data", name)


__all__ = [
    "Branch", "Bus", "CondenserSpec", "CoordinatorSpec", "EpcSpec", "Event", "FrequencyTargets",
    "GovernorSpec", "HubConverter", "HubModel", "HubSpec", "HvdcLinkSpec", "MachineSpec",
    "Metrics", "Scenario", "Simulation", "SimulationResult", "SolverConfig", "TuningProblem",
    "ZipLoadSpec", "aggregate_beta_g", "aggregate_beta_h", "build_admittance", "compute_metrics",
    "data_path", "dump_scenario", "epc_droop", "hub_frequency_zero_inertia", "kinetic_energy",
    "load_scenario", "load_tuning_problem", "replacement_ratio", "required_beta_h",
    "run_simulation", "smib_simulate", "solve_power_flow", "steady_state_deviation", "tune_epc",
    "uniform_droop", "validate_scenario", "write_result",
]
