"""Discrete-event simulation and load generation for a bioquorum deployment."""

from .config import LatencyModel, LoadConfig, ScenarioConfig, load_config_file
from .load import LatencyReport, nearest_rank, run_load
from .report import emit_report, render_report
from .scenario import SimReport, run_scenario

__all__ = [
    "LatencyModel",
    "LatencyReport",
    "LoadConfig",
    "ScenarioConfig",
    "SimReport",
    "emit_report",
    "load_config_file",
    "nearest_rank",
    "render_report",
    "run_load",
    "run_scenario",
]
