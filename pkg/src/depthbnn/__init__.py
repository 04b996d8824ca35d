"""Variational depth estimation for Bayesian neural networks.

A discrete truncated normal posterior over network depth is learned jointly
with mean-field Gaussian weight posteriors by minimizing the variational free
energy, and compared against a truncated-Poisson baseline on two-class spiral
classification.
"""

from .dist import (
    DepthPMF,
    GaussianPair,
    PoissonDepth,
    TruncNormalDepth,
    depth_kl,
    depth_pmf,
    depth_support,
    gaussian_kl,
    softplus,
    softplus_inverse,
    std_normal_cdf,
    trunc_normal_depth_pmf,
)
from .net import UnboundedNetwork, categorical_loglik, leaky_relu, network_kl
from .optim import Adam, DepthPosterior, GaussianVariational, finite_diff_check, gradient_of
from .spiral import LabeledDataset, SpiralConfig, generate, radius_distribution_check
from .tape import RandomTape
from .trainer import RunResult, TrainConfig, run_suite, select_best, train
from .vfe import VFEBreakdown, compute_vfe, evaluate_accuracy, predict

__all__ = [
    "Adam",
    "DepthPMF",
    "DepthPosterior",
    "GaussianPair",
    "GaussianVariational",
    "LabeledDataset",
    "PoissonDepth",
    "RandomTape",
    "RunResult",
    "SpiralConfig",
    "TrainConfig",
    "TruncNormalDepth",
    "UnboundedNetwork",
    "VFEBreakdown",
    "categorical_loglik",
    "compute_vfe",
    "depth_kl",
    "depth_pmf",
    "depth_support",
    "evaluate_accuracy",
    "finite_diff_check",
    "gaussian_kl",
    "generate",
    "gradient_of",
    "leaky_relu",
    "network_kl",
    "predict",
    "radius_distribution_check",
    "run_suite",
    "select_best",
    "softplus",
    "softplus_inverse",
    "std_normal_cdf",
    "train",
    "trunc_normal_depth_pmf",
]
