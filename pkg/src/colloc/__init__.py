"""Collaborative vehicle localization: standalone EKF, centralized (CCL) and
decentralized (DCL) filters, a seeded sensor simulator and a Monte-Carlo
harness."""
from .core_types import NoiseSpec, NumericalError, VehicleState
from .engine import run_monte_carlo, run_single, simulate, summarize_table
from .scenarios import ScenarioConfig, default_scenario

__version__ = "0.1.0"

__all__ = [
    "NoiseSpec", "NumericalError", "VehicleState", "ScenarioConfig", "default_scenario",
    "simulate", "run_single", "run_monte_carlo", "summarize_table",
]
