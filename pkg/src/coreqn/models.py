"""Probabilistic models: priors, per-datum log-likelihood potentials, and
closed-form weighted posteriors where conjugacy allows.

Each model exposes the potential f_n(theta) = log p(x_n | theta) including
normalizing constants, its gradient in theta, and vectorized blocks of both
for use by the moment estimators and samplers. The two Gaussian models also
expose the exact weighted posterior, which the oracle and the exact samplers
rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedModelError
from .weights import WeightVector

_SYM_RTOL = 1e-12
_PSD_RTOL = 1e-10


@dataclass(frozen=True)
class GaussianDistribution:
    """A multivariate normal given by mean and covariance.

    The covariance must be symmetric (to 1e-12 relative) and positive
    semidefinite (eigenvalues above -1e-10 * trace / dim); it is symmetrized
    exactly on construction.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1:
            raise ValueError("mean must be a vector")
        if cov.shape != (mean.size, mean.size):
            raise ValueError(f"covariance must be {mean.size}x{mean.size}")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
            raise ValueError("mean and covariance must be finite")
        scale = np.abs(cov).max()
        if np.abs(cov - cov.T).max() > _SYM_RTOL * max(scale, 1.0):
            raise ValueError("covariance must be symmetric")
        cov = (cov + cov.T) / 2.0
        floor = -_PSD_RTOL * max(np.trace(cov), 0.0) / mean.size - _PSD_RTOL
        if np.linalg.eigvalsh(cov)[0] < floor:
            raise ValueError("covariance must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.size)

    def sample(self, n_draws: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n_draws`` rows by Cholesky transform of standard normals."""
        root = np.linalg.cholesky(self.cov + 1e-300 * np.eye(self.dim))
        return self.mean + rng.standard_normal((n_draws, self.dim)) @ root.T


class BayesianModel:
    """Shared validation and vectorized-score plumbing for all models."""

    _data: np.ndarray  # row n enters potential n
    _dim: int

    @property
    def n_data(self) -> int:
        return int(self._data.shape[0])

    @property
    def dim(self) -> int:
        """Parameter dimension P."""
        return self._dim

    # -- validation helpers -------------------------------------------------

    def _check_index(self, n: int) -> int:
        n = int(n)
        if not 0 <= n < self.n_data:
            raise IndexError(f"datum index {n} out of range [0, {self.n_data})")
        return n

    def _check_theta(self, theta) -> np.ndarray:
        theta = np.atleast_1d(np.asarray(theta, dtype=np.float64))
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have shape ({self.dim},), got {theta.shape}")
        return theta

    def _check_thetas(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas, dtype=np.float64)
        if thetas.ndim != 2 or thetas.shape[1] != self.dim:
            raise ValueError(f"thetas must have shape (S, {self.dim})")
        return thetas

    def _check_weights(self, weights: WeightVector) -> WeightVector:
        if weights.full_dim != self.n_data:
            raise ValueError(
                f"weight vector covers {weights.full_dim} points, model has {self.n_data}"
            )
        return weights

    # -- scalar interface built on the block implementations -----------------

    def potential(self, n: int, theta) -> float:
        """Log-likelihood of datum ``n`` at ``theta``, constants included."""
        n = self._check_index(n)
        theta = self._check_theta(theta)
        return float(self.potential_block(theta[None, :], np.array([n]))[0, 0])

    def potential_block(self, thetas, indices) -> np.ndarray:
        """Matrix of potentials, shape (S, len(indices))."""
        thetas = self._check_thetas(thetas)
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.n_data):
            raise IndexError("datum index out of range")
        return self._potential_block(thetas, indices)

    def potential_grad(self, n: int, theta) -> np.ndarray:
        """Gradient of the potential in theta, shape (P,)."""
        n = self._check_index(n)
        theta = self._check_theta(theta)
        return self._potential_grad(n, theta)

    def posterior_score(self, thetas, weights: WeightVector) -> np.ndarray:
        """Gradient of log prior + sum_n w_n f_n at each row of ``thetas``."""
        thetas = self._check_thetas(thetas)
        self._check_weights(weights)
        return self.prior_grad_block(thetas) + self._weighted_grad_sum(thetas, weights)

    def prior_grad(self, theta) -> np.ndarray:
        return self.prior_grad_block(self._check_theta(theta)[None, :])[0]

    # Subclasses implement: _potential_block, _potential_grad,
    # _weighted_grad_sum, prior_logdensity, prior_grad_block.


def _check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be a positive finite number, got {value}")
    return value


def _check_matrix(data, name: str) -> np.ndarray:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
        raise ValueError(f"{name} must be a nonempty 2-d array")
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{name} must be finite")
    return data


class GaussianLocationModel(BayesianModel):
    """Isotropic Gaussian observations with unknown mean.

    Observations x_n ~ N(theta, noise_var * I) in D dimensions, prior
    theta ~ N(prior_mean, prior_var * I). Both variance parameters are
    variances, not standard deviations. The weighted posterior is available
    in closed form for any nonnegative weights.
    """

    def __init__(self, data, prior_mean=0.0, prior_var=1.0, noise_var=1.0):
        self._data = _check_matrix(data, "data")
        self._dim = int(self._data.shape[1])
        self.prior_var = _check_positive(prior_var, "prior_var")
        self.noise_var = _check_positive(noise_var, "noise_var")
        mean = np.broadcast_to(
            np.asarray(prior_mean, dtype=np.float64), (self._dim,)
        ).copy()
        if not np.all(np.isfinite(mean)):
            raise ValueError("prior_mean must be finite")
        self.prior_mean = mean
        self._sq_norms = np.einsum("nd,nd->n", self._data, self._data)
        self._log_norm = -0.5 * self._dim * np.log(2.0 * np.pi * self.noise_var)

    @property
    def data(self) -> np.ndarray:
        return self._data

    def _potential_block(self, thetas, indices):
        x = self._data[indices]
        cross = thetas @ x.T
        sq = (
            self._sq_norms[indices][None, :]
            - 2.0 * cross
            + np.einsum("sd,sd->s", thetas, thetas)[:, None]
        )
        return self._log_norm - sq / (2.0 * self.noise_var)

    def _potential_grad(self, n, theta):
        return (self._data[n] - theta) / self.noise_var

    def _weighted_grad_sum(self, thetas, weights):
        wx = weights.values @ self._data[weights.support]
        return (wx[None, :] - weights.weight_sum * thetas) / self.noise_var

    def prior_logdensity(self, theta) -> float:
        theta = self._check_theta(theta)
        diff = theta - self.prior_mean
        return float(
            -0.5 * self.dim * np.log(2.0 * np.pi * self.prior_var)
            - diff @ diff / (2.0 * self.prior_var)
        )

    def prior_grad_block(self, thetas) -> np.ndarray:
        return (self.prior_mean[None, :] - np.asarray(thetas)) / self.prior_var

    def conjugate_posterior(self, weights: WeightVector) -> GaussianDistribution:
        """Exact weighted posterior N(mean, var * I).

        Precision grows monotonically in the weights:
        1/prior_var + (sum_n w_n)/noise_var per coordinate.
        """
        self._check_weights(weights)
        precision = 1.0 / self.prior_var + weights.weight_sum / self.noise_var
        wx = weights.values @ self._data[weights.support]
        mean = (self.prior_mean / self.prior_var + wx / self.noise_var) / precision
        return GaussianDistribution(mean, np.eye(self.dim) / precision)


class BayesianLinearRegressionModel(BayesianModel):
    """Linear regression with Gaussian noise and an isotropic Gaussian prior.

    Responses y_n ~ N(x_n^T theta, noise_var); theta ~ N(prior_mean,
    prior_var * I) over the D regression coefficients.
    """

    def __init__(self, features, responses, prior_mean=0.0, prior_var=1.0, noise_var=1.0):
        self._data = _check_matrix(features, "features")
        self._dim = int(self._data.shape[1])
        responses = np.asarray(responses, dtype=np.float64)
        if responses.shape != (self._data.shape[0],):
            raise ValueError("responses must be one value per feature row")
        if not np.all(np.isfinite(responses)):
            raise ValueError("responses must be finite")
        self.responses = responses
        self.prior_var = _check_positive(prior_var, "prior_var")
        self.noise_var = _check_positive(noise_var, "noise_var")
        mean = np.broadcast_to(
            np.asarray(prior_mean, dtype=np.float64), (self._dim,)
        ).copy()
        if not np.all(np.isfinite(mean)):
            raise ValueError("prior_mean must be finite")
        self.prior_mean = mean
        self._log_norm = -0.5 * np.log(2.0 * np.pi * self.noise_var)

    @property
    def features(self) -> np.ndarray:
        return self._data

    def _potential_block(self, thetas, indices):
        resid = self.responses[indices][None, :] - thetas @ self._data[indices].T
        return self._log_norm - resid**2 / (2.0 * self.noise_var)

    def _potential_grad(self, n, theta):
        x = self._data[n]
        return x * (self.responses[n] - x @ theta) / self.noise_var

    def _weighted_grad_sum(self, thetas, weights):
        x = self._data[weights.support]
        wy_x = (weights.values * self.responses[weights.support]) @ x
        gram = x.T @ (weights.values[:, None] * x)
        return (wy_x[None, :] - thetas @ gram) / self.noise_var

    def prior_logdensity(self, theta) -> float:
        theta = self._check_theta(theta)
        diff = theta - self.prior_mean
        return float(
            -0.5 * self.dim * np.log(2.0 * np.pi * self.prior_var)
            - diff @ diff / (2.0 * self.prior_var)
        )

    def prior_grad_block(self, thetas) -> np.ndarray:
        return (self.prior_mean[None, :] - np.asarray(thetas)) / self.prior_var

    def conjugate_posterior(self, weights: WeightVector) -> GaussianDistribution:
        """Exact weighted posterior via the normal-equations update."""
        self._check_weights(weights)
        x = self._data[weights.support]
        precision = np.eye(self.dim) / self.prior_var + x.T @ (
            weights.values[:, None] * x
        ) / self.noise_var
        shift = (
            self.prior_mean / self.prior_var
            + (weights.values * self.responses[weights.support]) @ x / self.noise_var
        )
        cov = np.linalg.inv(precision)
        cov = (cov + cov.T) / 2.0
        return GaussianDistribution(cov @ shift, cov)


class LogisticRegressionModel(BayesianModel):
    """Logistic regression with labels in {-1, +1} and iid Cauchy priors.

    The potential is f_n(theta) = -log(1 + exp(-y_n x_n^T theta)); each
    coefficient has an independent Cauchy(0, prior_scale) prior. No conjugate
    posterior exists, so sampling goes through MCMC.
    """

    def __init__(self, features, labels, prior_scale=1.0):
        self._data = _check_matrix(features, "features")
        self._dim = int(self._data.shape[1])
        labels = np.asarray(labels, dtype=np.float64)
        if labels.shape != (self._data.shape[0],):
            raise ValueError("labels must be one value per feature row")
        if not np.all(np.isin(labels, (-1.0, 1.0))):
            raise ValueError("labels must be -1 or +1")
        self.labels = labels
        self.prior_scale = _check_positive(prior_scale, "prior_scale")

    @property
    def features(self) -> np.ndarray:
        return self._data

    def _potential_block(self, thetas, indices):
        z = self.labels[indices][None, :] * (thetas @ self._data[indices].T)
        return -np.logaddexp(0.0, -z)

    def _potential_grad(self, n, theta):
        y, x = self.labels[n], self._data[n]
        z = y * (x @ theta)
        # sigmoid(-z) without overflow for large |z|
        return y * x / (1.0 + np.exp(z)) if z < 40 else y * x * np.exp(-z)

    def _weighted_grad_sum(self, thetas, weights):
        x = self._data[weights.support]
        z = self.labels[weights.support][None, :] * (thetas @ x.T)
        sig = np.empty_like(z)
        small = z < 40
        sig[small] = 1.0 / (1.0 + np.exp(z[small]))
        sig[~small] = np.exp(-z[~small])
        return (sig * (weights.values * self.labels[weights.support])) @ x

    def prior_logdensity(self, theta) -> float:
        theta = self._check_theta(theta)
        s = self.prior_scale
        return float(
            -self.dim * np.log(np.pi * s) - np.log1p((theta / s) ** 2).sum()
        )

    def prior_grad_block(self, thetas) -> np.ndarray:
        thetas = np.asarray(thetas)
        return -2.0 * thetas / (self.prior_scale**2 + thetas**2)


def conjugate_coreset_posterior(model, weights: WeightVector) -> GaussianDistribution:
    """Closed-form weighted posterior for models that have one.

    Raises UnsupportedModelError for models without conjugate structure.
    """
    posterior = getattr(model, "conjugate_posterior", None)
    if posterior is None:
        raise UnsupportedModelError(
            f"{type(model).__name__} has no closed-form weighted posterior"
        )
    return posterior(weights)


# -- radial basis featurization for spatial regression -----------------------

CONSTANT_BASIS_SCALE = 100.0


@dataclass(frozen=True)
class RbfBasisSpec:
    """Gaussian radial basis layout over 2-d locations.

    ``centers`` is (K, 2) and ``scales`` is (K,), strictly positive; exactly
    one entry has the sentinel scale 100, a basis so wide it is effectively
    constant over the data window and plays the role of an intercept.
    """

    centers: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        centers = _check_matrix(self.centers, "centers")
        if centers.shape[1] != 2:
            raise ValueError("centers must be (K, 2)")
        scales = np.asarray(self.scales, dtype=np.float64)
        if scales.shape != (centers.shape[0],):
            raise ValueError("scales must be one value per center")
        if not np.all(np.isfinite(scales)) or np.any(scales <= 0):
            raise ValueError("scales must be positive and finite")
        if np.count_nonzero(scales == CONSTANT_BASIS_SCALE) != 1:
            raise ValueError("exactly one scale must equal 100 (the constant basis)")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "scales", scales)

    @property
    def size(self) -> int:
        return int(self.scales.size)


def rbf_featurize(points, basis: RbfBasisSpec) -> np.ndarray:
    """Feature matrix b_k(x_n) = exp(-||x_n - mu_k||^2 / (2 scale_k^2))."""
    points = _check_matrix(points, "points")
    if points.shape[1] != 2:
        raise ValueError("points must be (N, 2)")
    sq = (
        np.einsum("nd,nd->n", points, points)[:, None]
        - 2.0 * points @ basis.centers.T
        + np.einsum("kd,kd->k", basis.centers, basis.centers)[None, :]
    )
    return np.exp(-np.maximum(sq, 0.0) / (2.0 * basis.scales[None, :] ** 2))


def make_rbf_basis(
    points,
    n_per_scale: int = 50,
    scales=(0.2, 0.4, 0.8, 1.2, 1.6, 2.0),
    seed: int = 0,
) -> RbfBasisSpec:
    """Draw ``n_per_scale`` centers per scale uniformly from the data points,
    plus the near-constant scale-100 basis centered at the data mean."""
    points = _check_matrix(points, "points")
    rng = np.random.default_rng(seed)
    centers, widths = [], []
    for scale in scales:
        rows = rng.choice(points.shape[0], size=n_per_scale, replace=True)
        centers.append(points[rows])
        widths.append(np.full(n_per_scale, float(scale)))
    centers.append(points.mean(axis=0)[None, :])
    widths.append(np.array([CONSTANT_BASIS_SCALE]))
    return RbfBasisSpec(np.vstack(centers), np.concatenate(widths))


def empirical_prior_from_responses(responses) -> tuple[float, float, float]:
    """Data-driven hyperparameters (prior_mean, prior_var, noise_var).

    prior_mean is the response mean, prior_var the raw second moment, and
    noise_var the unbiased response variance; fewer than two responses or a
    degenerate (zero-variance) response vector is rejected.
    """
    responses = np.asarray(responses, dtype=np.float64)
    if responses.ndim != 1 or responses.size < 2:
        raise ValueError("need at least two responses")
    if not np.all(np.isfinite(responses)):
        raise ValueError("responses must be finite")
    noise_var = float(responses.var(ddof=1))
    if noise_var <= 0:
        raise ValueError("responses have zero variance; noise_var must be positive")
    return float(responses.mean()), float(np.mean(responses**2)), noise_var
