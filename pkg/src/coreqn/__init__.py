"""Sparse weighted-subset posterior approximation.

Builds coresets by uniform subsampling followed by regularized quasi-Newton
refinement of the weights, with exact verification oracles for Gaussian
location models, an HMC sampler for the rest, and a benchmarking harness.
"""

from .coreset import (
    MomentEstimates,
    OptimizationTrace,
    QuasiNewtonConfig,
    estimate_moments,
    newton_direction,
    newton_step,
    run_quasi_newton,
)
from .errors import (
    ConfigError,
    NumericFailure,
    OptimizationFailure,
    SamplerFailure,
    UnsupportedModelError,
)
from .estimators import QuasiNewtonCoreset, UniformCoreset
from .metrics import (
    MetricsRow,
    fit_gaussian,
    gaussian_kl,
    ksd_imq,
    mmd_imq,
    relative_moment_errors,
)
from .models import (
    BayesianLinearRegressionModel,
    GaussianDistribution,
    GaussianLocationModel,
    LogisticRegressionModel,
)
from .oracle import (
    contraction_coefficient,
    exact_moment_estimates,
    solve_exact_weights,
    verify_convergence,
)
from .sampling import (
    HmcConfig,
    SampleBatch,
    laplace_approximation,
    run_hmc,
    sample_coreset_posterior,
)
from .weights import WeightVector, derive_seed, uniform_coreset, uniform_subsample

__version__ = "0.1.0"

__all__ = [
    "BayesianLinearRegressionModel",
    "ConfigError",
    "GaussianDistribution",
    "GaussianLocationModel",
    "HmcConfig",
    "LogisticRegressionModel",
    "MetricsRow",
    "MomentEstimates",
    "NumericFailure",
    "OptimizationFailure",
    "OptimizationTrace",
    "QuasiNewtonConfig",
    "QuasiNewtonCoreset",
    "SampleBatch",
    "SamplerFailure",
    "UniformCoreset",
    "UnsupportedModelError",
    "WeightVector",
    "contraction_coefficient",
    "derive_seed",
    "estimate_moments",
    "exact_moment_estimates",
    "fit_gaussian",
    "gaussian_kl",
    "ksd_imq",
    "laplace_approximation",
    "mmd_imq",
    "newton_direction",
    "newton_step",
    "relative_moment_errors",
    "run_hmc",
    "run_quasi_newton",
    "sample_coreset_posterior",
    "solve_exact_weights",
    "uniform_coreset",
    "uniform_subsample",
    "verify_convergence",
]
