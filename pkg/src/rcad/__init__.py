"""Random-codebook advantage distillation for continuous-variable QKD.

Analytic rate predictions, a Monte Carlo protocol simulator and a parameter
optimizer for reverse-reconciliation CVQKD with a Neyman-Pearson threshold
decoder.
"""

from .analytics import RatePrediction, SchemeParams, conditional_rates, secret_key_ratio
from .channel import (ChannelParams, ModulationParams, UnphysicalParameters, devetak_winter,
                      distance_to_transmission, leakage_ey, max_dw, mutual_info_xy,
                      operating_point, plob_cv)
from .montecarlo import TrialConfig, TrialTally, run_batch
from .optimizer import SearchSpace, distance_sweep, landscape, optimize

__version__ = "0.1.0"

__all__ = [
    "ChannelParams", "ModulationParams", "UnphysicalParameters", "RatePrediction",
    "SchemeParams", "SearchSpace", "TrialConfig", "TrialTally", "conditional_rates",
    "devetak_winter", "distance_sweep", "distance_to_transmission", "landscape", "leakage_ey",
    "max_dw", "mutual_info_xy", "operating_point", "optimize", "plob_cv", "run_batch",
    "secret_key_ratio", "__version__",
]
