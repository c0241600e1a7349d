"""Sparse nonnegative weight vectors over a fixed data subset.

A coreset weight vector lives in the polytope ``{w >= 0, w_n = 0 off the
support}``. Only the supported entries are stored; the support is a sorted
array of distinct data indices chosen once per run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def derive_seed(master: int, *tags: int) -> int:
    """Derive an independent 64-bit seed from a master seed and integer tags.

    The same (master, tags) pair always yields the same stream, and tag
    tuples that differ in any entry yield statistically independent streams.
    (Trailing zero tags are absorbed by the underlying SeedSequence padding,
    so callers must not rely on (t,) and (t, 0) being distinct.)
    """
    ss = np.random.SeedSequence([int(master) & 0xFFFFFFFF, *[int(t) for t in tags]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class WeightVector:
    """Nonnegative weights on a subset of ``full_dim`` data points.

    Attributes
    ----------
    full_dim : int
        Total number of data points N.
    support : ndarray of int, shape (M,)
        Sorted, distinct indices into the data set.
    values : ndarray of float, shape (M,)
        Nonnegative weight of each supported point.
    """

    full_dim: int
    support: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64)
        values = np.asarray(self.values, dtype=np.float64)
        if self.full_dim < 1:
            raise ValueError("full_dim must be at least 1")
        if support.ndim != 1 or values.ndim != 1 or support.shape != values.shape:
            raise ValueError("support and values must be 1-d arrays of equal length")
        if support.size == 0:
            raise ValueError("support must not be empty")
        if support[0] < 0 or support[-1] >= self.full_dim:
            raise IndexError("support indices out of range")
        if np.any(np.diff(support) <= 0):
            raise ValueError("support must be sorted and distinct")
        if not np.all(np.isfinite(values)):
            raise ValueError("weights must be finite")
        if np.any(values < 0):
            raise ValueError("weights must be nonnegative")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        """Number of supported entries M."""
        return int(self.support.size)

    @property
    def weight_sum(self) -> float:
        return float(self.values.sum())

    @property
    def active_size(self) -> int:
        """Number of strictly positive weights."""
        return int(np.count_nonzero(self.values > 0))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.full_dim)
        dense[self.support] = self.values
        return dense

    def with_values(self, values: np.ndarray) -> "WeightVector":
        return WeightVector(self.full_dim, self.support, values)


def uniform_subsample(n_data: int, size: int, seed: int) -> np.ndarray:
    """Draw ``size`` distinct indices uniformly without replacement.

    Returns a sorted int64 array. Deterministic given ``seed``.
    """
    if size < 1 or size > n_data:
        raise ValueError(f"size must be in [1, {n_data}], got {size}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n_data, size=size, replace=False).astype(np.int64))


def init_weights(n_data: int, support: np.ndarray) -> WeightVector:
    """Uniform initialization: every supported weight equals N/M, summing to N."""
    support = np.asarray(support, dtype=np.int64)
    values = np.full(support.size, n_data / support.size)
    return WeightVector(n_data, support, values)


def project_nonnegative(weights: WeightVector, proposed: np.ndarray) -> WeightVector:
    """Clamp proposed values at zero, keeping the support fixed.

    This is the Euclidean projection onto the feasible orthant; it is
    idempotent and leaves already-nonnegative proposals untouched.
    """
    proposed = np.asarray(proposed, dtype=np.float64)
    if proposed.shape != weights.values.shape:
        raise ValueError("proposed values must match the support size")
    return weights.with_values(np.maximum(proposed, 0.0))


def uniform_coreset(n_data: int, size: int, seed: int) -> WeightVector:
    """Uniformly subsampled coreset with every kept weight equal to N/M."""
    return init_weights(n_data, uniform_subsample(n_data, size, seed))
