"""Determinantal point process learning for wireless link scheduling.

Subpackages by concern: :mod:`dppl.network` (geometry, gains, SINR),
:mod:`dppl.scheduler` (GP heuristic, exhaustive oracle, thinning),
:mod:`dppl.dpp` (L-ensembles, sampling, MAP), :mod:`dppl.learn`
(conditional DPP fitting and inference) and :mod:`dppl.experiments` /
:mod:`dppl.cli` (the end-to-end pipeline).
"""

from .dpp import (DppKernel, ElementaryDpp, enumerate_distribution, greedy_map, marginal_kernel,
                  sample_dpp, subset_probability)
from .learn import DppModel, TrainSettings, build_kernel, infer, inference_kernel, train
from .network import LinkNetwork, PowerConfig, generate_network, sum_rate
from .scheduler import GpSettings, exhaustive_schedule, gp_schedule, thinning_schedule

__version__ = "0.1.0"

__all__ = [
    "DppKernel", "ElementaryDpp", "enumerate_distribution", "greedy_map", "marginal_kernel",
    "sample_dpp", "subset_probability", "DppModel", "TrainSettings", "build_kernel", "infer",
    "inference_kernel",
    "train", "LinkNetwork", "PowerConfig", "generate_network", "sum_rate", "GpSettings",
    "exhaustive_schedule", "gp_schedule", "thinning_schedule",
]
