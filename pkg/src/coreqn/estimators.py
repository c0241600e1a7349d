"""Estimator-style wrappers around the coreset builders.

Both classes follow the fit/attribute convention: constructors only store
hyperparameters, ``fit(model)`` does the work and sets trailing-underscore
attributes. That keeps them clonable and grid-searchable.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator

from .coreset import QuasiNewtonConfig, run_quasi_newton
from .weights import uniform_coreset


class UniformCoreset(BaseEstimator):
    """Uniform subsample with equal weights summing to N."""

    def __init__(self, coreset_size: int = 100, seed: int = 0):
        self.coreset_size = coreset_size
        self.seed = seed

    def fit(self, model, y=None):
        weights = uniform_coreset(model.n_data, self.coreset_size, self.seed)
        self.weights_ = weights
        self.support_ = weights.support
        self.n_iter_ = 0
        return self


class QuasiNewtonCoreset(BaseEstimator):
    """Uniform subsample refined by regularized quasi-Newton weight updates.

    Parameters mirror ``QuasiNewtonConfig``; validation happens in ``fit``.
    After fitting, ``weights_`` holds the optimized sparse weights and
    ``trace_`` the per-iteration optimizer diagnostics.
    """

    def __init__(
        self,
        coreset_size: int = 100,
        mc_samples: int = 500,
        max_steps: int = 20,
        tune_steps: int = 1,
        step_size: float = 1.0,
        regularization: float = 0.01,
        stop_patience: int = 3,
        stop_factor: float = 0.99,
        seed: int = 0,
        max_condition: float | None = None,
        exact_moments: bool = False,
        hmc=None,
    ):
        self.coreset_size = coreset_size
        self.mc_samples = mc_samples
        self.max_steps = max_steps
        self.tune_steps = tune_steps
        self.step_size = step_size
        self.regularization = regularization
        self.stop_patience = stop_patience
        self.stop_factor = stop_factor
        self.seed = seed
        self.max_condition = max_condition
        self.exact_moments = exact_moments
        self.hmc = hmc

    def fit(self, model, y=None):
        config = QuasiNewtonConfig(
            coreset_size=self.coreset_size,
            mc_samples=self.mc_samples,
            max_steps=self.max_steps,
            tune_steps=self.tune_steps,
            step_size=self.step_size,
            regularization=self.regularization,
            stop_patience=self.stop_patience,
            stop_factor=self.stop_factor,
            seed=self.seed,
            max_condition=self.max_condition,
        )
        weights, trace = run_quasi_newton(
            model, config, hmc=self.hmc, exact_moments=self.exact_moments
        )
        self.weights_ = weights
        self.support_ = weights.support
        self.trace_ = trace
        self.n_iter_ = len(trace.iterations)
        return self
