"""Samplers for weighted posteriors.

Conjugate models are sampled exactly through their closed-form posterior.
Everything else goes through Hamiltonian Monte Carlo restricted to the
support of the weight vector, with step-size adaptation by dual averaging
during warmup, and a Laplace approximation used both as a baseline and to
initialize chains near the mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import OptimizationFailure, SamplerFailure
from .models import GaussianDistribution
from .weights import WeightVector

_MAX_STEP_HALVINGS = 10
_DIVERGENCE_ENERGY_DROP = -1000.0


@dataclass(frozen=True)
class HmcConfig:
    """Tuning knobs for the HMC kernel.

    The step size starts at ``initial_step_size``, is adapted toward
    ``target_accept`` by dual averaging for ``warmup_steps`` transitions,
    and is frozen afterwards.
    """

    warmup_steps: int = 500
    leapfrog_steps: int = 20
    target_accept: float = 0.8
    initial_step_size: float = 0.1

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be at least 1")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be at least 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if self.initial_step_size <= 0:
            raise ValueError("initial_step_size must be positive")


@dataclass(frozen=True)
class SampleBatch:
    """Draws from a weighted posterior plus chain diagnostics."""

    draws: np.ndarray
    acceptance_rate: float
    seed: int

    def __post_init__(self):
        draws = np.asarray(self.draws, dtype=np.float64)
        if draws.ndim != 2 or draws.shape[0] < 2:
            raise ValueError("draws must be a 2-d array with at least two rows")
        if not np.all(np.isfinite(draws)):
            raise ValueError("draws must be finite")
        object.__setattr__(self, "draws", draws)

    @property
    def n_draws(self) -> int:
        return int(self.draws.shape[0])


class DualAveragingStepSize:
    """Nesterov dual averaging of log step size toward a target acceptance.

    update() consumes one acceptance probability and returns the step for the
    next transition; frozen() returns the averaged step to use after warmup.
    """

    def __init__(self, initial_step, target_accept=0.8, gamma=0.05, t0=10.0, kappa=0.75):
        # anchoring the shrinkage point at the initial step keeps the
        # adaptation direction monotone in the acceptance feedback
        self._mu = np.log(initial_step)
        self._target = target_accept
        self._gamma = gamma
        self._t0 = t0
        self._kappa = kappa
        self._h_bar = 0.0
        self._log_step = np.log(initial_step)
        self._log_step_avg = np.log(initial_step)
        self._count = 0

    def update(self, accept_prob: float) -> float:
        self._count += 1
        frac = 1.0 / (self._count + self._t0)
        self._h_bar = (1.0 - frac) * self._h_bar + frac * (self._target - accept_prob)
        self._log_step = self._mu - np.sqrt(self._count) / self._gamma * self._h_bar
        decay = self._count ** (-self._kappa)
        self._log_step_avg = decay * self._log_step + (1.0 - decay) * self._log_step_avg
        return float(np.exp(self._log_step))

    def frozen(self) -> float:
        return float(np.exp(self._log_step_avg))


def leapfrog(theta, momentum, step, n_steps, grad_fn):
    """Integrate Hamiltonian dynamics; returns (theta, momentum, final grad)."""
    grad = grad_fn(theta)
    momentum = momentum + 0.5 * step * grad
    theta = np.array(theta, dtype=np.float64)
    for i in range(n_steps):
        theta = theta + step * momentum
        grad = grad_fn(theta)
        if i < n_steps - 1:
            momentum = momentum + step * grad
    momentum = momentum + 0.5 * step * grad
    return theta, momentum, grad


def _hmc_transition(rng, theta, logp_val, logp_fn, grad_fn, step, n_steps):
    """One proposal; returns (theta, logp, accept_prob, divergent, accepted)."""
    momentum = rng.standard_normal(theta.size)
    energy0 = -logp_val + 0.5 * momentum @ momentum
    theta_new, momentum_new, _ = leapfrog(theta, momentum, step, n_steps, grad_fn)
    with np.errstate(invalid="ignore", over="ignore"):
        logp_new = logp_fn(theta_new) if np.all(np.isfinite(theta_new)) else -np.inf
        energy1 = -logp_new + 0.5 * momentum_new @ momentum_new
    drop = energy0 - energy1
    if not np.isfinite(energy1) or drop < _DIVERGENCE_ENERGY_DROP:
        return theta, logp_val, 0.0, True, False
    accept_prob = 1.0 if drop >= 0 else float(np.exp(drop))
    if rng.uniform() < accept_prob:
        return theta_new, float(logp_new), accept_prob, False, True
    return theta, logp_val, accept_prob, False, False


def run_hmc(logp_fn, grad_fn, dim, n_draws, seed, config=None, initial=None):
    """Run one adaptive HMC chain; returns (draws (n, dim), acceptance_rate).

    On a divergent (non-finite energy) transition the step size is halved and
    the transition retried; more than 10 halvings in a single transition
    raises SamplerFailure with the failing configuration attached.
    """
    config = config or HmcConfig()
    rng = np.random.default_rng(seed)
    theta = np.zeros(dim) if initial is None else np.array(initial, dtype=np.float64)
    logp_val = float(logp_fn(theta))
    if not np.isfinite(logp_val):
        raise SamplerFailure(
            "log density not finite at the chain start",
            {"initial": theta, "logp": logp_val},
        )
    adapter = DualAveragingStepSize(config.initial_step_size, config.target_accept)
    step = config.initial_step_size
    draws = np.empty((n_draws, dim))
    accepted = 0
    for it in range(config.warmup_steps + n_draws):
        trial_step = step
        first_accept = None
        for _ in range(_MAX_STEP_HALVINGS + 1):
            theta_next, logp_next, accept_prob, divergent, was_accepted = _hmc_transition(
                rng, theta, logp_val, logp_fn, grad_fn, trial_step, config.leapfrog_steps
            )
            if first_accept is None:
                first_accept = accept_prob
            if not divergent:
                break
            trial_step *= 0.5
        else:
            raise SamplerFailure(
                "divergent trajectory persisted through step-size halvings",
                {"iteration": it, "step": trial_step, "theta": theta},
            )
        theta, logp_val = theta_next, logp_next
        if it < config.warmup_steps:
            # the adapter must see the outcome at its own step; feeding it the
            # acceptance of a halved retry hides divergences and lets the step
            # grow until the retry ladder bottoms out
            step = adapter.update(first_accept)
            if it == config.warmup_steps - 1:
                step = adapter.frozen()
        else:
            draws[it - config.warmup_steps] = theta
            accepted += was_accepted
    return draws, accepted / max(n_draws, 1)


class _CoresetTarget:
    """Log density of the weighted posterior restricted to the support."""

    def __init__(self, model, weights: WeightVector):
        self._model = model
        self._weights = weights
        self._support = weights.support
        self._values = weights.values

    def logp(self, theta):
        pots = self._model.potential_block(theta[None, :], self._support)[0]
        return self._model.prior_logdensity(theta) + float(pots @ self._values)

    def grad(self, theta):
        return self._model.posterior_score(theta[None, :], self._weights)[0]


def sample_coreset_posterior(model, weights, n_draws, seed, hmc=None) -> SampleBatch:
    """Draw from the posterior defined by ``weights``.

    Conjugate models are sampled exactly by Cholesky transform; other models
    run HMC on the supported potentials only, started from the Laplace mode
    when that is computable and from zero otherwise. Deterministic given
    ``seed``.
    """
    if n_draws < 2:
        raise ValueError("need at least two draws")
    if weights.full_dim != model.n_data:
        raise ValueError("weight vector does not match the model's data size")
    if hasattr(model, "conjugate_posterior"):
        posterior = model.conjugate_posterior(weights)
        draws = posterior.sample(n_draws, np.random.default_rng(seed))
        return SampleBatch(draws, 1.0, seed)
    target = _CoresetTarget(model, weights)
    try:
        initial = laplace_approximation(model, weights).mean
    except (OptimizationFailure, np.linalg.LinAlgError):
        initial = None
    draws, acceptance = run_hmc(
        target.logp, target.grad, model.dim, n_draws, seed, hmc, initial
    )
    return SampleBatch(draws, acceptance, seed)


def _fd_hessian(grad_fn, theta):
    """Central finite differences of an exact gradient, symmetrized."""
    dim = theta.size
    hess = np.empty((dim, dim))
    for i in range(dim):
        h = 1e-5 * (1.0 + abs(theta[i]))
        probe = np.zeros(dim)
        probe[i] = h
        hess[:, i] = (grad_fn(theta + probe) - grad_fn(theta - probe)) / (2.0 * h)
    return (hess + hess.T) / 2.0


def laplace_approximation(model, weights) -> GaussianDistribution:
    """Gaussian approximation N(mode, inverse negative Hessian) of the
    weighted posterior.

    The mode is found by damped Newton ascent from zero, with the Hessian
    taken by central finite differences of the exact gradient; convergence
    means gradient norm at most 1e-8. Exhausting 200 iterations raises
    OptimizationFailure. Exact for models whose log posterior is quadratic.
    """
    if weights.full_dim != model.n_data:
        raise ValueError("weight vector does not match the model's data size")
    target = _CoresetTarget(model, weights)
    theta = np.zeros(model.dim)
    for _ in range(200):
        grad = target.grad(theta)
        if np.linalg.norm(grad) <= 1e-8:
            break
        hess = _fd_hessian(target.grad, theta)
        try:
            direction = np.linalg.solve(hess, -grad)
        except np.linalg.LinAlgError:
            direction = grad
        if grad @ direction <= 0:
            direction = grad
        value = target.logp(theta)
        slope = grad @ direction
        scale = 1.0
        for _ in range(40):
            candidate = theta + scale * direction
            new_value = target.logp(candidate)
            if np.isfinite(new_value) and new_value >= value + 1e-4 * scale * slope:
                break
            scale *= 0.5
        theta = theta + scale * direction
    else:
        raise OptimizationFailure("mode search did not converge in 200 iterations")
    hess = _fd_hessian(target.grad, theta)
    neg_hess = -hess
    jitter = 0.0
    for _ in range(4):
        try:
            low = np.linalg.cholesky(neg_hess + jitter * np.eye(model.dim))
            break
        except np.linalg.LinAlgError:
            jitter = max(jitter * 10.0, 1e-12 * max(np.trace(neg_hess), 1.0))
    else:
        raise OptimizationFailure("negative Hessian is not positive definite at the mode")
    identity = np.eye(model.dim)
    inv_low = np.linalg.solve(low, identity)
    cov = inv_low.T @ inv_low
    return GaussianDistribution(theta, (cov + cov.T) / 2.0)
