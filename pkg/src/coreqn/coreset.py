"""Coreset construction by projected, regularized quasi-Newton descent.

Starting from a uniform subsample with all weights N/M, each iteration draws
a batch from the current weighted posterior, estimates the covariance of the
supported potentials (the curvature proxy) and the covariance against the
unweighted-minus-weighted potential sum (the negated KL gradient), then takes
a damped Newton step and clamps the weights at zero. The gradient estimate
costs one streaming pass over all N potentials per iteration and O(S) memory
beyond the S x M support block.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from time import perf_counter

import numpy as np
import scipy.linalg

from .errors import NumericFailure
from .sampling import SampleBatch, sample_coreset_posterior
from .weights import (
    WeightVector,
    derive_seed,
    init_weights,
    project_nonnegative,
    uniform_subsample,
)

_CHUNK_ROWS = 8192
_TAG_SUBSAMPLE = 0
_TAG_SAMPLE = 1


@dataclass(frozen=True)
class MomentEstimates:
    """Covariance statistics of the potentials under the current posterior.

    ``g_cov`` is the (symmetrized) covariance of the supported potentials;
    ``neg_kl_grad`` is the covariance of the supported potentials with the
    residual potential sum, i.e. the negative gradient of the KL objective
    in the weights.
    """

    g_cov: np.ndarray
    neg_kl_grad: np.ndarray

    def __post_init__(self):
        g_cov = np.asarray(self.g_cov, dtype=np.float64)
        grad = np.asarray(self.neg_kl_grad, dtype=np.float64)
        if g_cov.ndim != 2 or g_cov.shape[0] != g_cov.shape[1]:
            raise ValueError("g_cov must be square")
        if grad.shape != (g_cov.shape[0],):
            raise ValueError("neg_kl_grad must match g_cov's size")
        if not (np.all(np.isfinite(g_cov)) and np.all(np.isfinite(grad))):
            raise ValueError("moment estimates must be finite")
        object.__setattr__(self, "g_cov", (g_cov + g_cov.T) / 2.0)
        object.__setattr__(self, "neg_kl_grad", grad)

    @property
    def grad_norm(self) -> float:
        return float(np.linalg.norm(self.neg_kl_grad))


def _require_finite(values, indices, n_offset=0):
    if np.all(np.isfinite(values)):
        return
    draw, col = np.argwhere(~np.isfinite(values))[0]
    datum = int(indices[col]) if indices is not None else int(col + n_offset)
    raise NumericFailure(f"non-finite potential for datum {datum} at draw {int(draw)}")


def estimate_moments(model, weights: WeightVector, batch: SampleBatch) -> MomentEstimates:
    """Monte Carlo moment estimates from a batch drawn at ``weights``.

    The pass over all N potentials is chunked so peak memory beyond the
    support block stays O(S). Non-finite potentials raise NumericFailure
    naming the datum and draw.
    """
    if weights.full_dim != model.n_data:
        raise ValueError("weight vector does not match the model's data size")
    thetas = batch.draws
    n_draws = thetas.shape[0]
    support_block = model.potential_block(thetas, weights.support)
    _require_finite(support_block, weights.support)
    totals = np.zeros(n_draws)
    for start in range(0, model.n_data, _CHUNK_ROWS):
        stop = min(start + _CHUNK_ROWS, model.n_data)
        chunk = model.potential_block(thetas, np.arange(start, stop))
        _require_finite(chunk, None, n_offset=start)
        totals += chunk.sum(axis=1)
    g_centered = support_block - support_block.mean(axis=0)
    residual = (totals - totals.mean()) - g_centered @ weights.values
    g_cov = g_centered.T @ g_centered / n_draws
    neg_kl_grad = g_centered.T @ residual / n_draws
    return MomentEstimates(g_cov, neg_kl_grad)


def newton_direction(moments: MomentEstimates, regularization: float) -> np.ndarray:
    """Solve (g_cov + reg I) p = neg_kl_grad by Cholesky.

    A factorization failure is retried once with the regularization doubled;
    a second failure raises numpy.linalg.LinAlgError.
    """
    if regularization <= 0:
        raise ValueError("regularization must be positive")
    eye = np.eye(moments.g_cov.shape[0])
    reg = float(regularization)
    for _ in range(2):
        try:
            factor = scipy.linalg.cho_factor(moments.g_cov + reg * eye, lower=True)
            return scipy.linalg.cho_solve(factor, moments.neg_kl_grad)
        except np.linalg.LinAlgError:
            reg *= 2.0
    raise np.linalg.LinAlgError(
        "curvature system not positive definite after doubling the regularization"
    )


def newton_step(
    weights: WeightVector,
    moments: MomentEstimates,
    step_size: float,
    regularization: float,
) -> np.ndarray:
    """Proposed weight values w + step * p; entries may be negative until
    projected."""
    return weights.values + step_size * newton_direction(moments, regularization)


def line_search_step_size(
    weights: WeightVector,
    direction: np.ndarray,
    base_step: float,
    moments: MomentEstimates,
    moments_at,
    curvature: float = 0.9,
    max_halvings: int = 5,
):
    """Backtracking curvature search along ``direction``.

    A candidate step is accepted when the directional derivative at the
    projected trial point has shrunk to ``curvature`` times its magnitude at
    the current point. ``moments_at(candidate_weights, trial_index)`` must
    produce fresh moment estimates per trial. Returns (step, halvings,
    satisfied); after ``max_halvings`` rejections the last step tried is
    returned with satisfied=False.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if base_step <= 0:
        raise ValueError("base_step must be positive")
    if not direction.any():
        return base_step, 0, True
    slope0 = abs(float(moments.neg_kl_grad @ direction))
    step = float(base_step)
    for trial in range(max_halvings + 1):
        candidate = project_nonnegative(weights, weights.values + step * direction)
        trial_moments = moments_at(candidate, trial)
        slope = abs(float(trial_moments.neg_kl_grad @ direction))
        if slope <= curvature * slope0:
            return step, trial, True
        if trial < max_halvings:
            step *= 0.5
    return step, max_halvings, False


@dataclass(frozen=True)
class QuasiNewtonConfig:
    """Hyperparameters of the quasi-Newton coreset build.

    coreset_size   number of points kept (M)
    mc_samples     posterior draws per iteration for the moment estimates
    max_steps      iteration budget
    tune_steps     line search runs for iterations k <= tune_steps
    step_size      damping factor in (0, 1] used after tuning
    regularization ridge added to the curvature estimate
    stop_patience / stop_factor
                   stop after this many consecutive iterations in which the
                   gradient norm fails to improve the best seen so far by
                   the given factor
    max_condition  optional cap; when set, the ridge is raised per iteration
                   so the regularized curvature's condition number stays
                   below it
    """

    coreset_size: int
    mc_samples: int = 500
    max_steps: int = 20
    tune_steps: int = 1
    step_size: float = 1.0
    regularization: float = 0.01
    stop_patience: int = 3
    stop_factor: float = 0.99
    seed: int = 0
    max_condition: float | None = None

    def __post_init__(self):
        if self.coreset_size < 1:
            raise ValueError("coreset_size must be at least 1")
        if self.mc_samples < 2:
            raise ValueError("mc_samples must be at least 2")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.tune_steps < 0:
            raise ValueError("tune_steps must be nonnegative")
        if not 0.0 < self.step_size <= 1.0:
            raise ValueError("step_size must be in (0, 1]")
        if self.regularization <= 0:
            raise ValueError("regularization must be positive")
        if self.stop_patience < 1:
            raise ValueError("stop_patience must be at least 1")
        if not 0.0 < self.stop_factor <= 1.0:
            raise ValueError("stop_factor must be in (0, 1]")
        if self.max_condition is not None and self.max_condition <= 1.0:
            raise ValueError("max_condition must exceed 1")


@dataclass(frozen=True)
class IterationRecord:
    grad_norm: float
    step_size: float
    step_norm: float
    active_size: int
    line_search_halvings: int
    line_search_satisfied: bool
    wall_time_s: float


@dataclass(frozen=True)
class OptimizationTrace:
    """Per-iteration history of a quasi-Newton build."""

    iterations: tuple
    stopped_early: bool = False

    @property
    def grad_norms(self) -> list:
        return [record.grad_norm for record in self.iterations]

    def to_dict(self) -> dict:
        return {
            "stopped_early": self.stopped_early,
            "iterations": [asdict(record) for record in self.iterations],
        }


def _effective_regularization(moments, config) -> float:
    if config.max_condition is None:
        return config.regularization
    lam_max = float(np.linalg.eigvalsh(moments.g_cov)[-1])
    return max(config.regularization, lam_max / (config.max_condition - 1.0))


def run_quasi_newton(
    model,
    config: QuasiNewtonConfig,
    hmc=None,
    exact_moments: bool = False,
):
    """Build coreset weights for ``model``; returns (weights, trace).

    With ``exact_moments`` the Monte Carlo estimates are replaced by the
    closed-form potential covariances (Gaussian location models only), which
    makes the run fully deterministic. Otherwise each iteration and each
    line-search trial draws a fresh batch with a seed derived from
    ``config.seed``, so reruns are reproducible.
    """
    support = uniform_subsample(
        model.n_data, config.coreset_size, derive_seed(config.seed, _TAG_SUBSAMPLE)
    )
    weights = init_weights(model.n_data, support)

    if exact_moments:
        from .oracle import exact_moment_estimates

        def moments_at(current, k, trial):
            return exact_moment_estimates(model, current)

    else:

        def moments_at(current, k, trial):
            batch = sample_coreset_posterior(
                model,
                current,
                config.mc_samples,
                derive_seed(config.seed, _TAG_SAMPLE, k, trial),
                hmc,
            )
            return estimate_moments(model, current, batch)

    records = []
    best_grad_norm = np.inf
    stalled = 0
    stopped_early = False
    for k in range(config.max_steps):
        started = perf_counter()
        moments = moments_at(weights, k, 0)
        reg = _effective_regularization(moments, config)
        direction = newton_direction(moments, reg)
        halvings, satisfied = 0, True
        if k <= config.tune_steps:
            step_k, halvings, satisfied = line_search_step_size(
                weights,
                direction,
                config.step_size,
                moments,
                lambda candidate, trial, _k=k: moments_at(candidate, _k, trial + 1),
            )
        else:
            step_k = config.step_size
        proposed = weights.values + step_k * direction
        new_weights = project_nonnegative(weights, proposed)
        step_norm = float(np.linalg.norm(new_weights.values - weights.values))
        weights = new_weights
        records.append(
            IterationRecord(
                grad_norm=moments.grad_norm,
                step_size=step_k,
                step_norm=step_norm,
                active_size=weights.active_size,
                line_search_halvings=halvings,
                line_search_satisfied=satisfied,
                wall_time_s=perf_counter() - started,
            )
        )
        if moments.grad_norm < config.stop_factor * best_grad_norm:
            stalled = 0
        else:
            stalled += 1
        best_grad_norm = min(best_grad_norm, moments.grad_norm)
        if stalled >= config.stop_patience:
            stopped_early = True
            break
    return weights, OptimizationTrace(tuple(records), stopped_early)
