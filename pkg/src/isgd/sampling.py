"""Importance distributions over a pre-sampled pool, batch draws and weights."""
import warnings
from dataclasses import dataclass

import numpy as np

from ._backend import kernels
from .errors import (
    DegenerateDistributionError,
    EmptyDatasetError,
    ShapeError,
    ZeroProbabilityError,
)

# Constant smoothing values swept in the original experiments.
CONSTANT_SMOOTHING_SWEEP = (0.5, 1.0, 2.5)


def check_bias_exponent(k):
    """Validate the weight exponent ``k`` (must be <= 1); warn when negative."""
    k = float(k)
    if not k <= 1.0:
        raise ValueError(f"bias exponent k must satisfy k <= 1, got {k}")
    if k < 0.0:
        warnings.warn(f"bias exponent k={k} < 0 tends to make training noisy", stacklevel=2)
    return k


def presample_pool(dataset_size, pool_size, rng):
    """Uniform draw of ``min(pool_size, dataset_size)`` distinct indices."""
    if dataset_size <= 0:
        raise EmptyDatasetError("cannot draw a pool from an empty dataset")
    if pool_size < 1:
        raise ValueError("pool_size must be at least 1")
    size = min(int(pool_size), int(dataset_size))
    return rng.choice(int(dataset_size), size=size, replace=False)


@dataclass(frozen=True)
class ImportanceDistribution:
    pool: np.ndarray
    raw_scores: np.ndarray
    smoothing_c: float
    smoothed: np.ndarray
    total: float
    probs: np.ndarray

    @property
    def size(self):
        return self.pool.shape[0]


def build_distribution(pool, raw_scores, smoothing_c=0.0):
    """``p_i = (s_i + c) / sum_j (s_j + c)`` over the pool."""
    pool = np.asarray(pool)
    scores = np.asarray(raw_scores, dtype=np.float64)
    if scores.shape != pool.shape or scores.ndim != 1:
        raise ShapeError(f"{scores.shape} scores for a pool of shape {pool.shape}")
    if not np.all(np.isfinite(scores)) or np.any(scores < 0):
        raise ValueError("importance scores must be finite and non-negative")
    c = float(smoothing_c)
    if not (np.isfinite(c) and c >= 0):
        raise ValueError(f"smoothing constant must be finite and >= 0, got {c}")
    smoothed = scores + c
    total = float(smoothed.sum())
    if not total > 0:
        raise DegenerateDistributionError("all scores are zero; add smoothing")
    probs = smoothed / total
    # a positive cell far below the total can underflow to zero; keep it drawable
    np.maximum(probs, np.where(smoothed > 0, np.nextafter(0.0, 1.0), 0.0), out=probs)
    return ImportanceDistribution(pool, scores, c, smoothed, total, probs)


def adaptive_smoothing_constant(ema_mean_loss):
    """Half the running mean loss."""
    if ema_mean_loss < 0:
        raise ValueError("mean loss must be non-negative")
    return 0.5 * float(ema_mean_loss)


def biased_weights(dist, chosen, k, normalizer=None):
    """``alpha_i = 1 / (n * p_i**k)`` for the chosen pool positions.

    ``n`` defaults to the pool size; pass the dataset size as ``normalizer``
    for the dataset-size convention.  Computed from the unnormalized smoothed
    scores as ``total**k / (n * s_i**k)`` so uniform scores with ``k = 1`` give
    weights of exactly one.
    """
    chosen = np.asarray(chosen, dtype=np.int64)
    if chosen.size and (chosen.min() < 0 or chosen.max() >= dist.size):
        raise IndexError("chosen position outside the pool")
    n = dist.size if normalizer is None else int(normalizer)
    s = dist.smoothed[chosen]
    if k == 0:
        return np.full(chosen.shape, 1.0 / n)
    zero = np.flatnonzero(s == 0)
    if zero.size:
        raise ZeroProbabilityError(f"pool position {int(chosen[zero[0]])} has probability zero")
    if k == 1:
        return dist.total / (n * s)
    return dist.total ** k / (n * s ** k)


def sample_batch(dist, batch_size, rng):
    """Draw pool positions with replacement by inverse-CDF lookup."""
    if batch_size < 1:
        raise ValueError("batch_size must be at least 1")
    if not dist.total > 0:
        raise DegenerateDistributionError("distribution has no mass")
    cdf = np.cumsum(dist.smoothed)
    targets = rng.random(int(batch_size)) * cdf[-1]
    pos = kernels.inverse_cdf(cdf, targets)
    # u * total can round up to total; never land on a trailing zero cell
    last = int(np.flatnonzero(dist.smoothed > 0)[-1])
    return np.minimum(pos, last)
