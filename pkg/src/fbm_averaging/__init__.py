"""Fractional Brownian motion sampling, pathwise SDE integration and averaging experiments."""

__version__ = "0.1.0"

from .averaging import AveragedSystem, build_averaged_system, check_conditions, rms_average_diffusion, time_average_drift
from .experiments import ExperimentConfig, epsilon_sweep, example1_preset, example2_preset, run_paired
from .fgn import FbmPath, HurstParameter, TimeGrid, estimate_hurst, fbm_covariance, generate_ensemble
from .integrator import IntegralKind, SdeSystem, euler_solve, pathwise_integral

__all__ = [
    "__version__",
    "AveragedSystem",
    "ExperimentConfig",
    "FbmPath",
    "HurstParameter",
    "IntegralKind",
    "SdeSystem",
    "TimeGrid",
    "build_averaged_system",
    "check_conditions",
    "epsilon_sweep",
    "estimate_hurst",
    "euler_solve",
    "example1_preset",
    "example2_preset",
    "fbm_covariance",
    "generate_ensemble",
    "pathwise_integral",
    "rms_average_diffusion",
    "run_paired",
    "time_average_drift",
]
