"""Distributed DU/CU resource allocation for user-centric cell-free MIMO downlinks."""

from .channel import (ChannelEstimates, LargeScaleFading, PilotPlan, assign_pilots_hac,
                      lmmse_estimate, noise_power, path_loss_db)
from .config import ExperimentSpec, parse_config
from .cu_solver import build_cu_problem, run_algorithm2
from .du_solver import build_du_problem, run_algorithm1
from .evaluation import (FairnessState, RunResult, RunSettings, achieved_sinr, run_montecarlo,
                         run_schemes, spectral_efficiency)
from .geometry import Layout, NetworkConfig, NetworkRealization, form_clusters, wrap_distance
from .leakage import LeakageContext, LeakageMethod

__version__ = "0.1.0"

__all__ = [
    "ChannelEstimates", "ExperimentSpec", "FairnessState", "LargeScaleFading", "Layout",
    "LeakageContext", "LeakageMethod", "NetworkConfig", "NetworkRealization", "PilotPlan",
    "RunResult", "RunSettings", "achieved_sinr", "assign_pilots_hac", "build_cu_problem",
    "build_du_problem", "form_clusters", "lmmse_estimate", "noise_power", "parse_config",
    "path_loss_db", "run_algorithm1", "run_algorithm2", "run_montecarlo", "run_schemes",
    "spectral_efficiency", "wrap_distance",
]
