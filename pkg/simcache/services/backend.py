"""
Backend interface the cache sits in front of, with an exact brute-force
implementation and a latency-injecting wrapper.
"""
import logging
import time
from typing import List, Protocol, Sequence, runtime_checkable

import numpy as np

from simcache.exceptions import ConfigError, UnknownIdError
from simcache.models.dataset import Dataset
from simcache.models.metric import DistanceMetric, as_vector, distances
from simcache.models.result import Neighbor

logger = logging.getLogger(__name__)

SEARCH_CHUNK_ROWS = 8192


@runtime_checkable
class BackendInterface(Protocol):
    """Two-call contract: search returns sorted neighbors, fetch returns vectors in request order."""

    dim: int
    metric: DistanceMetric

    def search(self, query, k: int) -> List[Neighbor]:
        ...

    def fetch(self, ids: Sequence[int]) -> np.ndarray:
        ...


def brute_force_search(dataset: Dataset, query, k: int) -> List[Neighbor]:
    """
    Exact top-k by the dataset metric, ascending, ties broken by ascending id.
    """
    n = len(dataset)
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if k > n:
        raise ValueError(f"k ({k}) exceeds dataset size ({n})")
    q = as_vector(query, dataset.dim)

    dist = np.empty(n, dtype=np.float64)
    for start in range(0, n, SEARCH_CHUNK_ROWS):
        stop = min(start + SEARCH_CHUNK_ROWS, n)
        dist[start:stop] = distances(dataset.vectors[start:stop], q, dataset.metric)

    kth = np.partition(dist, k - 1)[k - 1]
    candidates = np.flatnonzero(dist <= kth)
    order = np.lexsort((candidates, dist[candidates]))[:k]
    picked = candidates[order]
    return [Neighbor(id=int(i), distance=float(dist[i])) for i in picked]


def fetch(dataset: Dataset, ids: Sequence[int]) -> np.ndarray:
    ids = [int(i) for i in ids]
    n = len(dataset)
    for vector_id in ids:
        if not 0 <= vector_id < n:
            raise UnknownIdError(vector_id)
    if not ids:
        return np.empty((0, dataset.dim), dtype=np.float32)
    return dataset.vectors[np.asarray(ids, dtype=np.int64)].copy()


class ExactBackend:
    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.dim = dataset.dim
        self.metric = dataset.metric

    def search(self, query, k: int) -> List[Neighbor]:
        return brute_force_search(self.dataset, query, k)

    def fetch(self, ids: Sequence[int]) -> np.ndarray:
        return fetch(self.dataset, ids)

    def __repr__(self) -> str:
        return f"ExactBackend({self.dataset!r})"


class DelayedBackend:
    """Sleeps before delegating, standing in for a disk or network backend."""

    def __init__(self, inner: BackendInterface, search_delay: float = 0.0, fetch_delay: float = 0.0):
        if search_delay < 0 or fetch_delay < 0:
            raise ConfigError("backend delays must be non-negative", fields=["search_delay", "fetch_delay"])
        self.inner = inner
        self.search_delay = search_delay
        self.fetch_delay = fetch_delay
        self.dim = inner.dim
        self.metric = inner.metric

    def search(self, query, k: int) -> List[Neighbor]:
        if self.search_delay:
            time.sleep(self.search_delay)
        return self.inner.search(query, k)

    def fetch(self, ids: Sequence[int]) -> np.ndarray:
        if self.fetch_delay:
            time.sleep(self.fetch_delay)
        return self.inner.fetch(ids)

    def __repr__(self) -> str:
        return f"DelayedBackend({self.inner!r}, search={self.search_delay * 1000:g}ms, fetch={self.fetch_delay * 1000:g}ms)"


def delayed_backend(inner: BackendInterface, search_delay: float, fetch_delay: float = 0.0) -> DelayedBackend:
    return DelayedBackend(inner, search_delay, fetch_delay)


def build_backend(spec: str, dataset: Dataset) -> BackendInterface:
    """
    Build a backend from a selector string: "exact" or
    "delayed:<search_ms>:<fetch_ms>".
    """
    parts = spec.split(":")
    if parts == ["exact"]:
        return ExactBackend(dataset)
    if parts[0] == "delayed" and len(parts) == 3:
        try:
            search_ms, fetch_ms = float(parts[1]), float(parts[2])
        except ValueError:
            raise ConfigError(f"invalid backend delays in '{spec}'", fields=["backend"])
        backend = DelayedBackend(ExactBackend(dataset), search_ms / 1000.0, fetch_ms / 1000.0)
        logger.info(f"Backend: {backend!r}")
        return backend
    raise ConfigError(f"unknown backend '{spec}', expected exact or delayed:<search_ms>:<fetch_ms>", fields=["backend"])
