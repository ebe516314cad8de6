"""Generalized Bayesian additive regression trees fitted by reversible-jump MCMC."""

from .config import SamplerConfig
from .data import Dataset, load_dataset, simulate
from .engine import ChainTrace, gengamma_variance, heldout_metrics, lpml, predict, run_chain, run_chains, survival_curve
from .likelihood import LikelihoodFamily, wrap_with_fd
from .models import FAMILIES, make_family
from .tree import DecisionTree, Forest

__all__ = [
    "ChainTrace", "Dataset", "DecisionTree", "FAMILIES", "Forest", "LikelihoodFamily", "SamplerConfig",
    "gengamma_variance", "heldout_metrics", "load_dataset", "lpml", "make_family", "predict",
    "run_chain", "run_chains", "simulate", "survival_curve", "wrap_with_fd",
]

__version__ = "0.1.0"
