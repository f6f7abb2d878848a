import numpy as np
import pytest

from simcache.models.dataset import Dataset
from simcache.models.metric import DistanceMetric
from simcache.schemas import CacheConfig, SyntheticSpec
from simcache.services.backend import ExactBackend
from simcache.services.dataset_io import generate_synthetic
from simcache.services.threshold_store import Projector, ThresholdStore


class CountingBackend:
    """Exact backend that records every call."""

    def __init__(self, dataset: Dataset, fail_fetch: bool = False, fail_search: bool = False):
        self.inner = ExactBackend(dataset)
        self.dim = dataset.dim
        self.metric = dataset.metric
        self.search_calls = 0
        self.fetch_calls = 0
        self.fetched_ids = []
        self.fail_fetch = fail_fetch
        self.fail_search = fail_search

    def search(self, query, k):
        self.search_calls += 1
        if self.fail_search:
            raise RuntimeError("backend unavailable")
        return self.inner.search(query, k)

    def fetch(self, ids):
        self.fetch_calls += 1
        self.fetched_ids.extend(ids)
        if self.fail_fetch:
            raise RuntimeError("fetch unavailable")
        return self.inner.fetch(ids)


def single_region_projector(dim: int) -> Projector:
    """Every query maps to the same region."""
    matrix = np.zeros((1, dim), dtype=np.float32)
    matrix[0, 0] = 1.0
    return Projector(matrix, bucket_min=[0.0], bucket_width=[1.0], n_buckets=1)


@pytest.fixture(scope="function")
def small_dataset():
    """1,000 vectors in 8-d drawn from 4 clusters, plus 50 queries."""
    dataset, queries = generate_synthetic(
        SyntheticSpec(n=1000, dim=8, clusters=4, std=1.0, center_spread=3.0, queries=50, seed=7)
    )
    return dataset, queries


@pytest.fixture(scope="function")
def counting_backend(small_dataset):
    return CountingBackend(small_dataset[0])


@pytest.fixture(scope="function")
def single_region_store(small_dataset):
    dataset = small_dataset[0]
    return ThresholdStore(single_region_projector(dataset.dim), adaptivity_rate=0.9, deviation_factor=0.0)


@pytest.fixture(scope="function")
def deterministic_config():
    return CacheConfig(
        k_max=10,
        deviation_factor=0.0,
        n_mini_index=4,
        c_mini_index=100,
        deterministic_mode=True,
        search_list_size=32,
    )


@pytest.fixture(scope="function")
def cosine_backend(small_dataset):
    """The small dataset ranked by cosine distance."""
    return CountingBackend(Dataset(small_dataset[0].vectors, DistanceMetric.COSINE_DISTANCE))
