import numpy as np
import pytest

from coreqn.errors import SamplerFailure
from coreqn.metrics import gaussian_kl
from coreqn.models import (
    BayesianLinearRegressionModel,
    GaussianLocationModel,
    LogisticRegressionModel,
)
from coreqn.oracle import full_weights
from coreqn.sampling import (
    DualAveragingStepSize,
    HmcConfig,
    SampleBatch,
    laplace_approximation,
    leapfrog,
    run_hmc,
    sample_coreset_posterior,
)
from coreqn.weights import WeightVector, init_weights


def _std_normal_logp(theta):
    return -0.5 * float(theta @ theta)


def _std_normal_grad(theta):
    return -theta


def test_leapfrog_reversible():
    rng = np.random.default_rng(0)
    theta0 = rng.standard_normal(4)
    mom0 = rng.standard_normal(4)
    theta1, mom1, _ = leapfrog(theta0, mom0, 0.1, 25, _std_normal_grad)
    # integrating back with flipped momentum recovers the start point
    theta2, mom2, _ = leapfrog(theta1, -mom1, 0.1, 25, _std_normal_grad)
    np.testing.assert_allclose(theta2, theta0, atol=1e-10)
    np.testing.assert_allclose(-mom2, mom0, atol=1e-10)


def test_leapfrog_energy_error_is_second_order():
    """Halving the step (doubling the count) must cut the Hamiltonian error
    by at least 3.5x, the signature of a second-order integrator."""
    rng = np.random.default_rng(1)
    theta0 = rng.standard_normal(3)
    mom0 = rng.standard_normal(3)

    def energy_error(step, n_steps):
        theta, mom, _ = leapfrog(theta0, mom0, step, n_steps, _std_normal_grad)
        before = -_std_normal_logp(theta0) + 0.5 * mom0 @ mom0
        after = -_std_normal_logp(theta) + 0.5 * mom @ mom
        return abs(after - before)

    coarse = energy_error(0.2, 50)
    fine = energy_error(0.1, 100)
    assert coarse / fine >= 3.5


def test_dual_averaging_direction():
    up = DualAveragingStepSize(0.1)
    for _ in range(10):
        bigger = up.update(1.0)
    assert bigger > 0.1

    down = DualAveragingStepSize(0.1)
    previous = 0.1
    for _ in range(10):
        step = down.update(0.0)
        assert step < previous
        previous = step


def test_run_hmc_standard_normal_quality():
    config = HmcConfig()
    n_draws = 2000
    draws, acceptance = run_hmc(_std_normal_logp, _std_normal_grad, 5, n_draws, seed=3)
    assert draws.shape == (n_draws, 5)
    assert 0.6 <= acceptance <= 0.95
    # conservative effective sample size of S/10
    bound = 5.0 * np.sqrt(1.0 / (n_draws / 10))
    assert np.all(np.abs(draws.mean(axis=0)) <= bound)
    np.testing.assert_allclose(np.var(draws, axis=0), 1.0, atol=0.35)


def test_run_hmc_deterministic():
    a, rate_a = run_hmc(_std_normal_logp, _std_normal_grad, 2, 50, seed=9)
    b, rate_b = run_hmc(_std_normal_logp, _std_normal_grad, 2, 50, seed=9)
    assert np.array_equal(a, b)
    assert rate_a == rate_b


def test_run_hmc_rejects_bad_start():
    with pytest.raises(SamplerFailure) as info:
        run_hmc(lambda t: -np.inf, _std_normal_grad, 2, 10, seed=0)
    assert "logp" in info.value.diagnostics


def test_hmc_config_validation():
    with pytest.raises(ValueError):
        HmcConfig(warmup_steps=0)
    with pytest.raises(ValueError):
        HmcConfig(leapfrog_steps=0)
    with pytest.raises(ValueError):
        HmcConfig(target_accept=1.5)
    with pytest.raises(ValueError):
        HmcConfig(initial_step_size=0.0)


def test_sample_batch_validation():
    with pytest.raises(ValueError):
        SampleBatch(np.zeros((1, 2)), 1.0, 0)  # fewer than two draws
    with pytest.raises(ValueError):
        SampleBatch(np.full((3, 2), np.nan), 1.0, 0)


def test_conjugate_sampling_is_exact_and_seeded():
    rng = np.random.default_rng(0)
    model = GaussianLocationModel(rng.standard_normal((50, 3)), prior_var=2.0)
    w = init_weights(50, np.arange(0, 50, 5))
    batch = sample_coreset_posterior(model, w, 1000, seed=4)
    again = sample_coreset_posterior(model, w, 1000, seed=4)
    assert batch.acceptance_rate == 1.0
    assert batch.seed == 4
    assert np.array_equal(batch.draws, again.draws)


def test_conjugate_sampling_w_zero_recovers_prior():
    prior_var = 0.7
    model = GaussianLocationModel(
        np.random.default_rng(1).standard_normal((20, 4)), prior_mean=2.0,
        prior_var=prior_var,
    )
    w = WeightVector(20, np.arange(20), np.zeros(20))
    n_draws = 100_000
    batch = sample_coreset_posterior(model, w, n_draws, seed=5)
    tol = 4.0 * np.sqrt(prior_var / n_draws)
    np.testing.assert_allclose(batch.draws.mean(axis=0), 2.0, atol=tol)


def test_conjugate_sampling_moments_within_standard_errors():
    rng = np.random.default_rng(2)
    model = GaussianLocationModel(rng.standard_normal((100, 2)))
    w = init_weights(100, np.arange(0, 100, 10))
    posterior = model.conjugate_posterior(w)
    n_draws = 100_000
    batch = sample_coreset_posterior(model, w, n_draws, seed=6)
    sd = np.sqrt(np.diag(posterior.cov))
    np.testing.assert_allclose(
        batch.draws.mean(axis=0), posterior.mean, atol=5.0 * sd.max() / np.sqrt(n_draws)
    )
    # var(sample var) ~ 2 sigma^4 / S for Gaussians
    np.testing.assert_allclose(
        np.var(batch.draws, axis=0, ddof=1),
        np.diag(posterior.cov),
        atol=5.0 * np.sqrt(2.0 / n_draws) * sd.max() ** 2,
    )


def _symmetric_logistic_model():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((30, 2))
    features = np.vstack([x, x])
    labels = np.concatenate([np.ones(30), -np.ones(30)])
    return LogisticRegressionModel(features, labels)


def test_logistic_sampling_symmetric_posterior():
    """Mirrored labels make the posterior symmetric under negation, so the
    mean must vanish up to Monte Carlo error."""
    model = _symmetric_logistic_model()
    batch = sample_coreset_posterior(model, full_weights(60), 600, seed=8)
    assert batch.draws.shape == (600, 2)
    assert 0.0 < batch.acceptance_rate <= 1.0
    assert np.all(np.abs(batch.draws.mean(axis=0)) < 0.5)


def test_logistic_sampling_deterministic():
    model = _symmetric_logistic_model()
    w = init_weights(60, np.arange(0, 60, 3))
    a = sample_coreset_posterior(model, w, 60, seed=10)
    b = sample_coreset_posterior(model, w, 60, seed=10)
    assert np.array_equal(a.draws, b.draws)


def test_laplace_exact_on_gaussian_location():
    rng = np.random.default_rng(3)
    model = GaussianLocationModel(rng.standard_normal((40, 3)), prior_var=1.5)
    w = init_weights(40, np.arange(0, 40, 4))
    lap = laplace_approximation(model, w)
    exact = model.conjugate_posterior(w)
    np.testing.assert_allclose(lap.mean, exact.mean, atol=1e-8)
    np.testing.assert_allclose(lap.cov, exact.cov, atol=1e-8)
    assert gaussian_kl(lap, exact) < 1e-8


def test_laplace_exact_on_linear_regression():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((25, 2))
    y = x @ np.array([1.0, -0.5]) + 0.1 * rng.standard_normal(25)
    model = BayesianLinearRegressionModel(x, y, noise_var=0.5)
    lap = laplace_approximation(model, full_weights(25))
    exact = model.conjugate_posterior(full_weights(25))
    np.testing.assert_allclose(lap.mean, exact.mean, atol=1e-8)
    np.testing.assert_allclose(lap.cov, exact.cov, atol=1e-8)


def test_laplace_mode_at_zero_for_symmetric_logistic():
    model = _symmetric_logistic_model()
    lap = laplace_approximation(model, full_weights(60))
    np.testing.assert_allclose(lap.mean, 0.0, atol=1e-6)
