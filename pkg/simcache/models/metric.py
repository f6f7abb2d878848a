import enum
from typing import Optional

import numpy as np

from simcache.exceptions import DimensionMismatchError, InvalidVectorError


class DistanceMetric(str, enum.Enum):
    EUCLIDEAN = "EUCLIDEAN"
    COSINE_DISTANCE = "COSINE_DISTANCE"


def as_vector(values, dim: Optional[int] = None) -> np.ndarray:
    """
    Coerce input to a 1-d float32 vector and validate it.

    Args:
        values: Any array-like of reals
        dim: Expected dimensionality, if known

    Returns:
        A float32 numpy array of shape (dim,)
    """
    vec = np.asarray(values, dtype=np.float32)
    if vec.ndim != 1:
        raise InvalidVectorError(f"vector must be 1-dimensional, got shape {vec.shape}")
    if dim is not None and vec.shape[0] != dim:
        raise DimensionMismatchError(dim, vec.shape[0])
    if not np.all(np.isfinite(vec)):
        raise InvalidVectorError("vector contains NaN or Inf components")
    return vec


def distances(matrix: np.ndarray, query: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    """
    Distances from every row of `matrix` to `query`, accumulated in float64.

    Euclidean distances are plain (non-squared) L2 so they compare directly
    with thresholds learned from backend results.
    """
    rows = np.asarray(matrix, dtype=np.float64)
    q = np.asarray(query, dtype=np.float64)
    if rows.ndim != 2:
        rows = rows.reshape(-1, q.shape[0])
    if rows.shape[1] != q.shape[0]:
        raise DimensionMismatchError(rows.shape[1], q.shape[0])

    if metric == DistanceMetric.EUCLIDEAN:
        diff = rows - q
        return np.sqrt((diff * diff).sum(axis=1))

    q_norm = np.sqrt(np.dot(q, q))
    row_norms = np.sqrt((rows * rows).sum(axis=1))
    if q_norm == 0.0 or np.any(row_norms == 0.0):
        raise InvalidVectorError("cosine distance is undefined for the zero vector")
    cos = (rows * q).sum(axis=1) / (row_norms * q_norm)
    return np.maximum(1.0 - cos, 0.0)


def distance(a, b, metric: DistanceMetric = DistanceMetric.EUCLIDEAN) -> float:
    a = as_vector(a)
    b = as_vector(b, a.shape[0])
    return float(distances(a[None, :], b, metric)[0])


def pairwise_distances(matrix: np.ndarray, metric: DistanceMetric) -> np.ndarray:
    """Full distance matrix among the rows of `matrix` (used for graph pruning)."""
    rows = np.asarray(matrix, dtype=np.float64)
    sq = (rows * rows).sum(axis=1)
    gram = rows @ rows.T
    if metric == DistanceMetric.EUCLIDEAN:
        d2 = sq[:, None] + sq[None, :] - 2.0 * gram
        return np.sqrt(np.maximum(d2, 0.0))
    norms = np.sqrt(sq)
    if np.any(norms == 0.0):
        raise InvalidVectorError("cosine distance is undefined for the zero vector")
    return np.maximum(1.0 - gram / np.outer(norms, norms), 0.0)
