"""Approximation-quality metrics: Gaussian fits and KL, relative moment
errors, and kernel discrepancies (MMD, KSD) with the inverse-multiquadric
kernel."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np
import scipy.linalg

from .models import GaussianDistribution

_JITTER_REL = 1e-9
_CLAMP_TOL = -1e-12
_KERNEL_BLOCK = 1024


def fit_gaussian(samples) -> GaussianDistribution:
    """Moment-match a Gaussian: sample mean and unbiased covariance plus a
    1e-9 * (trace/P) diagonal jitter so the result is always PD.

    Requires at least P + 2 rows. For constant samples the jitter scale
    floors at 1.0, keeping the covariance positive definite.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError("samples must be a 2-d array")
    n, dim = samples.shape
    if n < dim + 2:
        raise ValueError(f"need at least {dim + 2} samples to fit {dim} dimensions")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    cov = np.atleast_2d(np.cov(samples, rowvar=False, ddof=1))
    scale = float(np.trace(cov)) / dim
    if scale <= 0.0:
        scale = 1.0
    cov = cov + (_JITTER_REL * scale) * np.eye(dim)
    return GaussianDistribution(samples.mean(axis=0), cov)


def gaussian_kl(p: GaussianDistribution, q: GaussianDistribution) -> float:
    """KL(p || q) between Gaussians, computed via Cholesky factors.

    Raises numpy.linalg.LinAlgError when either covariance is not positive
    definite. The result is clamped at zero against roundoff.
    """
    if p.dim != q.dim:
        raise ValueError("dimension mismatch between p and q")
    chol_q = np.linalg.cholesky(q.cov)
    chol_p = np.linalg.cholesky(p.cov)
    solved = scipy.linalg.cho_solve((chol_q, True), p.cov)
    shift = p.mean - q.mean
    half_maha = scipy.linalg.solve_triangular(chol_q, shift, lower=True)
    logdet_q = 2.0 * np.log(np.diag(chol_q)).sum()
    logdet_p = 2.0 * np.log(np.diag(chol_p)).sum()
    kl = 0.5 * (
        np.trace(solved) + half_maha @ half_maha - p.dim + logdet_q - logdet_p
    )
    return max(float(kl), 0.0)


class MomentErrors(NamedTuple):
    rel_mean_err: float
    rel_cov_err: float
    mean_err_absolute: bool


def relative_moment_errors(
    approx: GaussianDistribution, truth: GaussianDistribution
) -> MomentErrors:
    """Relative L2 mean error and relative Frobenius covariance error.

    When the truth mean (or covariance) has zero norm the corresponding
    error is reported in absolute terms, flagged by ``mean_err_absolute``
    for the mean.
    """
    if approx.dim != truth.dim:
        raise ValueError("dimension mismatch between approx and truth")
    mean_norm = float(np.linalg.norm(truth.mean))
    mean_err = float(np.linalg.norm(approx.mean - truth.mean))
    absolute = mean_norm == 0.0
    if not absolute:
        mean_err /= mean_norm
    cov_norm = float(np.linalg.norm(truth.cov))
    cov_err = float(np.linalg.norm(approx.cov - truth.cov))
    if cov_norm > 0.0:
        cov_err /= cov_norm
    return MomentErrors(mean_err, cov_err, absolute)


def _check_points(points, name) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ValueError(f"{name} must be a nonempty 2-d array")
    if not np.all(np.isfinite(points)):
        raise ValueError(f"{name} must be finite")
    return points


def _imq_mean(x, y, scale_sq) -> float:
    """Mean of (c^2 + ||x_i - y_j||^2)^(-1/2) over all pairs, blockwise."""
    y_sq = np.einsum("jd,jd->j", y, y)
    total = 0.0
    for start in range(0, x.shape[0], _KERNEL_BLOCK):
        block = x[start : start + _KERNEL_BLOCK]
        sq = np.maximum(
            np.einsum("id,id->i", block, block)[:, None] - 2.0 * block @ y.T + y_sq,
            0.0,
        )
        total += float((1.0 / np.sqrt(scale_sq + sq)).sum())
    return total / (x.shape[0] * y.shape[0])


def mmd_imq(x, y, kernel_scale: float = 1.0) -> float:
    """Maximum mean discrepancy with kernel (c^2 + ||x - y||^2)^(-1/2).

    V-statistic (diagonal included); identical inputs give exactly zero.
    """
    x = _check_points(x, "x")
    y = _check_points(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValueError("x and y must share a dimension")
    if kernel_scale <= 0:
        raise ValueError("kernel_scale must be positive")
    scale_sq = float(kernel_scale) ** 2
    mmd_sq = (
        _imq_mean(x, x, scale_sq) + _imq_mean(y, y, scale_sq) - 2.0 * _imq_mean(x, y, scale_sq)
    )
    return float(np.sqrt(max(mmd_sq, 0.0)))


def ksd_imq(samples, score_fn, kernel_scale: float = 1.0, kernel_power: float = -0.5) -> float:
    """Kernel Stein discrepancy of ``samples`` against the density whose
    score (gradient of the log density) is ``score_fn``.

    Uses the inverse-multiquadric kernel k(x, y) = (c^2 + ||x - y||^2)^beta
    with beta in (-1, 0) and the full V-statistic of the Stein kernel

        u(x, y) = s(x)^T s(y) k + s(x)^T grad_y k + grad_x k^T s(y)
                  + trace(grad_x grad_y k).

    ``score_fn`` is called once with the whole (S, P) sample array and must
    return an (S, P) array of scores.
    """
    samples = _check_points(samples, "samples")
    if kernel_scale <= 0:
        raise ValueError("kernel_scale must be positive")
    if not -1.0 < kernel_power < 0.0:
        raise ValueError("kernel_power must lie in (-1, 0)")
    n, dim = samples.shape
    scores = np.asarray(score_fn(samples), dtype=np.float64)
    if scores.shape != samples.shape:
        raise ValueError("score_fn must return one score row per sample")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    beta = float(kernel_power)
    scale_sq = float(kernel_scale) ** 2
    y_sq = np.einsum("jd,jd->j", samples, samples)
    score_dot_point = np.einsum("jd,jd->j", scores, samples)
    total = 0.0
    for start in range(0, n, _KERNEL_BLOCK):
        xs = samples[start : start + _KERNEL_BLOCK]
        sx = scores[start : start + _KERNEL_BLOCK]
        r_sq = np.maximum(
            np.einsum("id,id->i", xs, xs)[:, None] - 2.0 * xs @ samples.T + y_sq, 0.0
        )
        base = scale_sq + r_sq
        if beta == -0.5:
            kernel = 1.0 / np.sqrt(base)
            pow_m1 = kernel / base
        else:
            pow_m1 = base ** (beta - 1.0)
            kernel = pow_m1 * base
        pow_m2 = pow_m1 / base
        cross_scores = sx @ scores.T
        sx_dot_y = sx @ samples.T
        x_dot_sy = xs @ scores.T
        block = cross_scores * kernel
        block -= 2.0 * beta * pow_m1 * (score_dot_point[start : start + len(xs)][:, None] - sx_dot_y)
        block += 2.0 * beta * pow_m1 * (x_dot_sy - score_dot_point[None, :])
        block -= 4.0 * beta * (beta - 1.0) * pow_m2 * r_sq + 2.0 * beta * dim * pow_m1
        total += float(block.sum())
    return float(np.sqrt(max(total / n**2, 0.0)))


def _clamp(value: Optional[float], name: str) -> Optional[float]:
    if value is None:
        return None
    value = float(value)
    if not np.isfinite(value):
        raise ValueError(f"{name} must be finite")
    if value < _CLAMP_TOL:
        raise ValueError(f"{name} must be nonnegative, got {value}")
    return max(value, 0.0)


@dataclass(frozen=True)
class MetricsRow:
    """One evaluation of an approximate posterior against the reference.

    All entries are nonnegative (tiny negative roundoff is clamped to zero);
    mmd and ksd are optional per model.
    """

    reverse_kl: float
    forward_kl: float
    rel_mean_err: float
    rel_cov_err: float
    mmd: Optional[float] = None
    ksd: Optional[float] = None
    eval_samples: int = 0

    def __post_init__(self):
        for name in ("reverse_kl", "forward_kl", "rel_mean_err", "rel_cov_err", "mmd", "ksd"):
            object.__setattr__(self, name, _clamp(getattr(self, name), name))
        if self.eval_samples < 0:
            raise ValueError("eval_samples must be nonnegative")
