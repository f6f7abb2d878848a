"""
Offline PCA training for region keys.

The top components come from orthogonal iteration (block power method) on
the sample covariance, finished with a Rayleigh-Ritz step so components are
ordered by captured variance.
"""
import logging
import math

import numpy as np

from simcache.exceptions import ConfigError, SampleError
from simcache.models.dataset import Dataset
from simcache.schemas import ProjectorSettings
from simcache.services.threshold_store import Projector

logger = logging.getLogger(__name__)

CONVERGENCE_TOLERANCE = 1e-6
MAX_ITERATIONS = 1000
BUCKET_MARGIN = 0.01  # total widening of each projected range
MIN_SAMPLE = 100


def minimum_sample_size(d_reduced: int) -> int:
    return max(d_reduced + 1, MIN_SAMPLE)


def top_components(covariance: np.ndarray, d_reduced: int, seed: int) -> np.ndarray:
    """
    Leading eigenvectors of a symmetric matrix as rows, sorted by descending
    eigenvalue, each with its largest-magnitude entry positive.
    """
    dim = covariance.shape[0]
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((dim, d_reduced)))

    captured = float(np.trace(basis.T @ covariance @ basis))
    iterations = 0
    for iterations in range(1, MAX_ITERATIONS + 1):
        basis, _ = np.linalg.qr(covariance @ basis)
        updated = float(np.trace(basis.T @ covariance @ basis))
        change = abs(updated - captured)
        captured = updated
        if change <= CONVERGENCE_TOLERANCE * max(abs(updated), np.finfo(np.float64).tiny):
            break
    logger.debug(f"PCA: orthogonal iteration stopped after {iterations} iterations")

    ritz = basis.T @ covariance @ basis
    values, vectors = np.linalg.eigh((ritz + ritz.T) / 2.0)
    order = np.argsort(values)[::-1]
    components = (basis @ vectors[:, order]).T

    for row in components:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return components


def bucket_bounds(projected: np.ndarray, n_buckets: int):
    lo = projected.min(axis=0)
    hi = projected.max(axis=0)
    extent = hi - lo
    extent = np.where(extent > 0, extent, 1.0)
    lo = lo - extent * BUCKET_MARGIN / 2.0
    width = extent * (1.0 + BUCKET_MARGIN) / n_buckets
    return lo, width


def train(sample, d_reduced: int, n_buckets: int, seed: int) -> Projector:
    """
    Fit a Projector on a vector sample.

    Args:
        sample: (n, dim) array-like of sample vectors
        d_reduced: Number of principal components to keep
        n_buckets: Equal-width buckets per reduced dimension
        seed: Seed for the random starting basis

    Returns:
        Projector with orthonormal rows and bounds from the projected sample
    """
    data = np.asarray(sample, dtype=np.float64)
    if data.ndim != 2:
        raise SampleError(f"sample must be a 2-d array, got shape {data.shape}")
    n, dim = data.shape
    if d_reduced <= 0 or d_reduced > dim:
        raise ConfigError(f"d_reduced ({d_reduced}) must be in [1, {dim}]", fields=["d_reduced"])
    needed = minimum_sample_size(d_reduced)
    if n < needed:
        raise SampleError(f"PCA sample has {n} vectors, need at least {needed}")
    if not np.all(np.isfinite(data)):
        raise SampleError("PCA sample contains NaN or Inf components")

    centered = data - data.mean(axis=0)
    covariance = centered.T @ centered / max(n - 1, 1)
    if float(np.trace(covariance)) <= 0.0:
        raise SampleError("PCA sample has zero variance in every direction")

    components = top_components(covariance, d_reduced, seed)
    # Region keys project raw queries, so bounds come from the uncentered projection
    projected = data @ components.T
    bucket_min, bucket_width = bucket_bounds(projected, n_buckets)

    total = float(np.trace(covariance))
    kept = float(np.trace(components @ covariance @ components.T))
    logger.info(
        f"PCA: {n} samples, dim {dim} -> {d_reduced}, captured variance {kept / total:.3f}"
    )
    return Projector(components.astype(np.float32), bucket_min, bucket_width, n_buckets)


def sample_dataset(dataset: Dataset, ratio: float, seed: int) -> np.ndarray:
    """Uniform sample of floor(ratio * n) vectors without replacement."""
    n = len(dataset)
    if n == 0:
        raise SampleError("cannot sample an empty dataset")
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"sample ratio must be in (0, 1], got {ratio}", fields=["sample_ratio"])
    size = math.floor(ratio * n)
    if size < 1:
        raise SampleError(f"sample ratio {ratio} selects no vectors from {n}")
    rng = np.random.default_rng(seed)
    picks = rng.choice(n, size=size, replace=False)
    return dataset.vectors[picks].copy()


def train_from_dataset(dataset: Dataset, settings: ProjectorSettings) -> Projector:
    """
    Sample and train in one step. Small datasets are sampled up to the
    minimum PCA sample size (or the whole dataset).
    """
    settings = settings.effective()
    n = len(dataset)
    if n == 0:
        raise SampleError("cannot sample an empty dataset")
    needed = min(minimum_sample_size(settings.d_reduced), n)
    ratio = settings.sample_ratio
    if math.floor(ratio * n) < needed:
        ratio = min(1.0, (needed + 0.5) / n)
        logger.info(f"PCA: raising sample ratio to {ratio:.4f} to reach {needed} vectors")
    sample = sample_dataset(dataset, ratio, settings.seed)
    return train(sample, settings.d_reduced, settings.n_buckets, settings.seed)
