"""
TEXMEX vector containers (fvecs, bvecs, ivecs) and the synthetic Gaussian
mixture used when no dataset files are available.

Each record is a little-endian int32 dimension d followed by d values:
float32 for fvecs, uint8 for bvecs, int32 for ivecs. Every record in a file
must share the same d.
"""
import logging
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from simcache.exceptions import VectorFormatError
from simcache.models.dataset import Dataset
from simcache.models.metric import DistanceMetric
from simcache.schemas import SyntheticSpec

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def _read_vecs(path: PathLike, value_dtype: str) -> np.ndarray:
    path = str(path)
    buf = np.fromfile(path, dtype=np.uint8)
    value_dtype = np.dtype(value_dtype)
    if buf.size == 0:
        return np.empty((0, 0), dtype=value_dtype)
    if buf.size < 4:
        raise VectorFormatError(path, 0, "truncated record header")

    dim = int(buf[:4].view("<i4")[0])
    if dim <= 0:
        raise VectorFormatError(path, 0, f"non-positive dimension {dim}")
    record = 4 + dim * value_dtype.itemsize
    n_full = buf.size // record
    body = buf[: n_full * record].reshape(n_full, record)

    headers = body[:, :4].copy().view("<i4").ravel()
    bad = np.flatnonzero(headers != dim)
    if bad.size:
        i = int(bad[0])
        found = int(headers[i])
        reason = f"non-positive dimension {found}" if found <= 0 else f"inconsistent dimension {found} (expected {dim})"
        raise VectorFormatError(path, i * record, reason)

    tail = buf.size - n_full * record
    if tail:
        offset = n_full * record
        if tail >= 4:
            found = int(buf[offset:offset + 4].view("<i4")[0])
            if found <= 0:
                raise VectorFormatError(path, offset, f"non-positive dimension {found}")
            if found != dim:
                raise VectorFormatError(path, offset, f"inconsistent dimension {found} (expected {dim})")
        raise VectorFormatError(path, offset, f"truncated record ({tail} of {record} bytes)")

    values = body[:, 4:].copy()
    if value_dtype.itemsize > 1:
        values = values.view(value_dtype.newbyteorder("<"))
    return values.astype(value_dtype.newbyteorder("="), copy=False).reshape(n_full, dim)


def read_fvecs(path: PathLike) -> np.ndarray:
    return _read_vecs(path, "float32")


def read_bvecs(path: PathLike) -> np.ndarray:
    return _read_vecs(path, "uint8")


def read_ivecs(path: PathLike) -> np.ndarray:
    return _read_vecs(path, "int32")


def load_fvecs(path: PathLike, metric: DistanceMetric = DistanceMetric.EUCLIDEAN) -> Dataset:
    dataset = Dataset(read_fvecs(path), metric)
    logger.info(f"Loaded {dataset} from {path}")
    return dataset


def load_bvecs(path: PathLike, metric: DistanceMetric = DistanceMetric.EUCLIDEAN) -> Dataset:
    dataset = Dataset(read_bvecs(path).astype(np.float32), metric)
    logger.info(f"Loaded {dataset} from {path}")
    return dataset


def load_ivecs(path: PathLike) -> np.ndarray:
    """Ground-truth id lists, one row per query."""
    return read_ivecs(path)


def load_vectors(path: PathLike, metric: DistanceMetric = DistanceMetric.EUCLIDEAN) -> Dataset:
    """Pick the loader from the file suffix."""
    if str(path).endswith(".bvecs"):
        return load_bvecs(path, metric)
    return load_fvecs(path, metric)


def _write_vecs(path: PathLike, rows, value_dtype: str):
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise ValueError(f"expected a 2-d array, got shape {rows.shape}")
    n, dim = rows.shape
    values = np.ascontiguousarray(rows.astype(value_dtype))
    width = values.dtype.itemsize * dim
    out = np.empty((n, 4 + width), dtype=np.uint8)
    out[:, :4] = np.full(n, dim, dtype="<i4").view(np.uint8).reshape(n, 4)
    out[:, 4:] = values.view(np.uint8).reshape(n, width)
    out.tofile(str(path))


def write_fvecs(path: PathLike, vectors):
    _write_vecs(path, vectors, "<f4")


def write_ivecs(path: PathLike, rows):
    _write_vecs(path, rows, "<i4")


def generate_synthetic(spec: SyntheticSpec, metric: DistanceMetric = DistanceMetric.EUCLIDEAN) -> Tuple[Dataset, np.ndarray]:
    """
    Gaussian mixture: cluster centers ~ N(0, center_spread^2), points drawn
    around a uniformly chosen center with that cluster's std. Queries are
    fresh draws from the same mixture.

    Returns:
        (dataset, queries) with queries as a (spec.queries, dim) float32 array
    """
    rng = np.random.default_rng(spec.seed)
    centers = rng.normal(0.0, spec.center_spread, size=(spec.clusters, spec.dim))
    stds = np.asarray(spec.cluster_stds if spec.cluster_stds is not None else [spec.std] * spec.clusters)

    def draw(count: int) -> np.ndarray:
        labels = rng.integers(0, spec.clusters, size=count)
        noise = rng.standard_normal((count, spec.dim)) * stds[labels][:, None]
        return (centers[labels] + noise).astype(np.float32)

    dataset = Dataset(draw(spec.n), metric)
    queries = draw(spec.queries)
    logger.info(f"Generated synthetic {dataset} with {spec.clusters} clusters and {len(queries)} queries")
    return dataset, queries
