"""Steering a wealth density to a target law by dynamic optimal transport.

The terminal dual potential is optimized by L-BFGS; each evaluation runs an
implicit HJB solve backward and a Fokker-Planck solve forward.
"""

from .config import ExperimentConfig, load_config, parse_config
from .optimizer import Problem, SolveReport, Tolerances, optimize

__all__ = [
    "ExperimentConfig",
    "Problem",
    "SolveReport",
    "Tolerances",
    "load_config",
    "optimize",
    "parse_config",
]
__version__ = "0.1.0"
