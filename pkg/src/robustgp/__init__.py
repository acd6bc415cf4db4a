"""Gaussian process regression with a Huber likelihood.

Inputs are screened with projection statistics, residuals are scored with
the Huber loss, and inference runs either through a Laplace approximation
(``laplace``) or a scale-mixture MCMC sampler (``mcmc``). A Gaussian
likelihood baseline lives in ``conjugate``.
"""
from .conjugate import ConjugateModel, conjugate_model, fit_ml2, gaussian_log_evidence, predict
from .data import (ConfigError, ContaminationPlan, MetricsReport, NoiseSpec, gen_friedman, gen_neal,
                   kfold_split, load_csv, metrics)
from .dataset import Dataset, PredictiveDistribution
from .kernel import FactorizationError, KernelParams, build_gram, cross_cov
from .laplace import HuberGpModel, find_mode, optimize_hyperparams, predict_laplace
from .likelihoods import HuberConfig, huber_log_likelihood, pseudo_huber
from .mcmc import ChainOutput, ChainSettings, predictive_average, run_chain
from .projection import diagnose, input_weights, projection_statistics, robust_scale

__version__ = "0.1.0"

__all__ = [
    "ChainOutput", "ChainSettings", "ConfigError", "ConjugateModel", "ContaminationPlan", "Dataset",
    "FactorizationError", "HuberConfig", "HuberGpModel", "KernelParams", "MetricsReport",
    "NoiseSpec", "PredictiveDistribution", "build_gram", "conjugate_model", "cross_cov",
    "diagnose", "find_mode", "fit_ml2", "gaussian_log_evidence", "gen_friedman", "gen_neal",
    "huber_log_likelihood", "input_weights", "kfold_split", "load_csv", "metrics",
    "optimize_hyperparams", "predict", "predict_laplace", "predictive_average",
    "projection_statistics", "pseudo_huber", "robust_scale", "run_chain",
]
