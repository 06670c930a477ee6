"""Two-fluid compressible Stokes simulator with algebraic pressure closure.

The public surface mirrors the pipeline: closure roots and model
constants (`closure`), spectral grid operations (`grid`), the marker
fixed point (`lagrangian`), velocity recovery and transport
(`eulerian`), the analysis functionals (`diagnostics`), and run
orchestration plus artifact formats (`scenario`).
"""

from .closure import ModelParams, solve_Z
from .errors import (
    BifluidError,
    ClosureDomainError,
    ConfigError,
    InvariantViolation,
    NonConvergenceError,
)
from .grid import GridSpec
from .lagrangian import LagrangianTrajectory, WindowConfig
from .eulerian import PicardConfig
from .diagnostics import KernelConfig
from .scenario import RunConfig, load_config, run_simulation, run_sweep

__version__ = "0.1.0"

__all__ = [
    "BifluidError",
    "ClosureDomainError",
    "ConfigError",
    "GridSpec",
    "InvariantViolation",
    "KernelConfig",
    "LagrangianTrajectory",
    "ModelParams",
    "NonConvergenceError",
    "PicardConfig",
    "RunConfig",
    "WindowConfig",
    "load_config",
    "run_simulation",
    "run_sweep",
    "solve_Z",
    "__version__",
]
