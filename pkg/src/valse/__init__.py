"""Variational line spectral estimation with von Mises frequency posteriors."""

__version__ = "0.1.0"

from .circular import VmMixture, VmParam, bessel_ratio, solve_concentration, unwrap_vm, wrap_angle
from .engine import EngineConfig, EstimationResult, run
from .freq_model import FreqPosterior, MeasurementSet
from .hyperparams import Hyperparams

__all__ = [
    "EngineConfig",
    "EstimationResult",
    "FreqPosterior",
    "Hyperparams",
    "MeasurementSet",
    "VmMixture",
    "VmParam",
    "bessel_ratio",
    "run",
    "solve_concentration",
    "unwrap_vm",
    "wrap_angle",
]
