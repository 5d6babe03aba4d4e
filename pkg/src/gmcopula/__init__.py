"""Bayesian Gaussian mixture copula for multiple imputation of mixed data."""
from .data import (AugmentedView, ColumnSpec, MixedDataset, expand_rpl, load_dataset,
                   write_dataset)
from .model import GmcState, Hyperparams, default_hyperparams
from .sampler import ChainConfig, Draw, run_chain

__version__ = "0.1.0"

__all__ = [
    "AugmentedView", "ChainConfig", "ColumnSpec", "Draw", "GmcState", "Hyperparams",
    "MixedDataset", "default_hyperparams", "expand_rpl", "load_dataset", "run_chain",
    "write_dataset",
]
