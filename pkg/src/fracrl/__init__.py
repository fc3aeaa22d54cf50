"""fracrl: long-memory model-based RL with fractional dynamics.

Core pieces: Grünwald–Letnikov fractional differencing, wavelet-variance
system identification, a dense operator-splitting QP solver, fractional MPC,
an on-policy model-improvement loop, glucose-control test plants, and an
executable performance-bound checker for small history-dependent processes.
"""

from .data import EpisodeDataset, FracModel, StateTrajectory
from .fractional import (
    GlWeightTable,
    build_weight_table,
    frac_difference,
    gl_weights,
    predict_mean,
    psi_weight,
)
from .sysid import HurstFit, estimate_hurst, estimate_model, fit_linear_params

__version__ = "0.1.0"

__all__ = [
    "EpisodeDataset",
    "FracModel",
    "StateTrajectory",
    "GlWeightTable",
    "build_weight_table",
    "frac_difference",
    "gl_weights",
    "predict_mean",
    "psi_weight",
    "HurstFit",
    "estimate_hurst",
    "estimate_model",
    "fit_linear_params",
    "__version__",
]
