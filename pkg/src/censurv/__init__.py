"""Discrete-time survival analysis with event-conditional censoring likelihoods."""

from .core import (CensoringStatus, Dataset, Observation, TimeGrid, partition_indices,
                   read_dataset, write_dataset)
from .distributions import DiscGaussParams, disc_gauss_log_pmf, pmf_mean, pmf_to_cdf
from .training import Objective, TrainConfig, evaluate, train

__all__ = [
    "CensoringStatus", "Dataset", "Observation", "TimeGrid", "partition_indices",
    "read_dataset", "write_dataset", "DiscGaussParams", "disc_gauss_log_pmf", "pmf_mean",
    "pmf_to_cdf", "Objective", "TrainConfig", "evaluate", "train",
]

__version__ = "0.1.0"
