"""
One-dimensional drift-diffusion simulator for multi-layer thyristor memory cells.

Submodules
----------
physics    material constants, Bernoulli kernels, SRH and mobility models
device     config parsing and mesh construction
steady     equilibrium, bias sweeps and load-line solves
transient  pulse sequences and adaptive backward-Euler runs
analysis   band diagrams, memory metrics, read classification, speed limit
cli        ``tramsim`` command-line front end
"""

__version__ = "0.1.0"

from .device import load_config, parse_config, reference_config, build_mesh, scale_doping
from .physics import MaterialParams, ThermalEnv
from .steady import BiasPoint, Simulation, SolverConfig, ConvergenceError
from .transient import PulseOp, TransientSpec, build_pulse_train, run_transient
from .analysis import memory_metrics, classify_read, speed_limit_search, compare_structures

__all__ = [
    "__version__", "load_config", "parse_config", "reference_config", "build_mesh",
    "scale_doping", "MaterialParams", "ThermalEnv", "BiasPoint", "Simulation", "SolverConfig",
    "ConvergenceError", "PulseOp", "TransientSpec", "build_pulse_train", "run_transient",
    "memory_metrics", "classify_read", "speed_limit_search", "compare_structures",
]
