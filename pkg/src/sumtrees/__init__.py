"""Bayesian additive regression trees with pluggable additive components."""

from .dataset import (
    DataError,
    Dataset,
    ScalingRecord,
    Schema,
    load_csv,
    scale_outcome,
    simulate_friedman_like,
)
from .estimator import BARTClassifier, BARTRegressor
from .genbart import DpmError, LinearH, RandomInterceptH, SpatialCarH, load_adjacency
from .metrics import auc, coverage, rmse
from .model import PosteriorModel
from .priors import Hyperparams, calibrate_binary, calibrate_continuous
from .sampler import MCMCConfig, PosteriorDraws, run_mcmc
from .tree import Forest, SplitRule, Tree

__version__ = "0.1.0"

__all__ = [
    "BARTClassifier",
    "BARTRegressor",
    "DataError",
    "Dataset",
    "DpmError",
    "Forest",
    "Hyperparams",
    "LinearH",
    "MCMCConfig",
    "PosteriorDraws",
    "PosteriorModel",
    "RandomInterceptH",
    "ScalingRecord",
    "Schema",
    "SpatialCarH",
    "SplitRule",
    "Tree",
    "auc",
    "calibrate_binary",
    "calibrate_continuous",
    "coverage",
    "load_adjacency",
    "load_csv",
    "rmse",
    "run_mcmc",
    "scale_outcome",
    "simulate_friedman_like",
]
