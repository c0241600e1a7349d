import numpy as np
import pytest
from sklearn.base import clone

from coreqn.coreset import QuasiNewtonConfig, run_quasi_newton
from coreqn.estimators import QuasiNewtonCoreset, UniformCoreset
from coreqn.harness import generate_synthetic_gaussian
from coreqn.models import GaussianLocationModel


def _small_model(seed=0):
    data, _ = generate_synthetic_gaussian(80, 2, 4.0, 4.0, seed=seed)
    return GaussianLocationModel(data, noise_var=4.0, prior_mean=np.zeros(2),
                                 prior_var=1.0)


def test_uniform_coreset_fit_attributes():
    model = _small_model()
    est = UniformCoreset(coreset_size=10, seed=3).fit(model)
    assert est.n_iter_ == 0
    assert est.weights_.support.shape == (10,)
    assert est.support_ is est.weights_.support
    # equal weights summing to the dataset size
    np.testing.assert_allclose(est.weights_.values, 8.0)


def test_uniform_coreset_seed_changes_support():
    model = _small_model()
    a = UniformCoreset(coreset_size=10, seed=0).fit(model)
    b = UniformCoreset(coreset_size=10, seed=1).fit(model)
    assert not np.array_equal(a.support_, b.support_)


def test_quasi_newton_fit_matches_direct_call():
    model = _small_model()
    est = QuasiNewtonCoreset(coreset_size=10, max_steps=4, tune_steps=0,
                             exact_moments=True, seed=5).fit(model)
    config = QuasiNewtonConfig(coreset_size=10, max_steps=4, tune_steps=0, seed=5)
    weights, trace = run_quasi_newton(model, config, exact_moments=True)
    np.testing.assert_array_equal(est.weights_.values, weights.values)
    np.testing.assert_array_equal(est.support_, weights.support)
    assert est.n_iter_ == len(trace.iterations)
    assert est.trace_.iterations[-1].grad_norm == trace.iterations[-1].grad_norm


def test_get_params_set_params_clone():
    est = QuasiNewtonCoreset(coreset_size=25, regularization=0.5, seed=9)
    params = est.get_params()
    assert params["coreset_size"] == 25
    assert params["regularization"] == 0.5
    est.set_params(mc_samples=77)
    assert est.mc_samples == 77

    model = _small_model()
    est = QuasiNewtonCoreset(coreset_size=10, max_steps=2, tune_steps=0,
                             exact_moments=True).fit(model)
    fresh = clone(est)
    assert fresh.get_params() == est.get_params()
    assert not hasattr(fresh, "weights_")


def test_invalid_params_surface_at_fit():
    model = _small_model()
    est = QuasiNewtonCoreset(coreset_size=0)
    with pytest.raises(ValueError, match="coreset_size"):
        est.fit(model)
    with pytest.raises(ValueError, match="step_size"):
        QuasiNewtonCoreset(coreset_size=5, step_size=1.5).fit(model)
    with pytest.raises(ValueError, match=r"size must be in \[1, 80\]"):
        UniformCoreset(coreset_size=200).fit(model)
