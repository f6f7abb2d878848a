import copy
import logging

import numpy as np
import pytest

from simcache.exceptions import BackendError, ConfigError
from simcache.models.metric import DistanceMetric
from simcache.models.result import ServedFrom
from simcache.schemas import CacheConfig, SearchStrategy
from simcache.services.backend import brute_force_search
from simcache.services.benchmark import compute_recall
from simcache.services.cache_engine import CacheEngine, CachePool, EvictionEvent
from simcache.services.threshold_store import Projector, ThresholdStore


@pytest.fixture(scope="function")
def engine(deterministic_config, counting_backend, single_region_store):
    return CacheEngine(deterministic_config, counting_backend, single_region_store)


@pytest.fixture(scope="function")
def tiny_pool():
    config = CacheConfig(k_max=2, n_mini_index=2, c_mini_index=3, search_list_size=4, deterministic_mode=True)
    return CachePool(config, dim=2)


def _entries(*ids):
    return [(i, np.array([float(i), 0.0], dtype=np.float32)) for i in ids]


def _single_region(dim: int) -> Projector:
    row = np.zeros((1, dim))
    row[0, 0] = 1.0
    return Projector(row, bucket_min=[0.0], bucket_width=[1.0], n_buckets=1)


# ---- tiered search ----

async def test_cold_miss_fills_membership(engine, counting_backend, small_dataset):
    """Test a cold query goes to the backend and its neighbors get cached."""
    q = small_dataset[1][0]
    result = await engine.tiered_search(q, 10)

    assert result.served_from == ServedFrom.BACKEND
    assert set(result.ids) <= set(engine.pool.membership)
    assert len(engine.pool.membership) == 10
    assert counting_backend.search_calls == 1
    assert counting_backend.fetch_calls == 1
    assert engine.stats.vectors_fetched == 10


async def test_repeat_query_hits_with_same_ids(engine, counting_backend, small_dataset):
    """Test re-issuing a missed query is served from cache with D=0."""
    q = small_dataset[1][0]
    first = await engine.tiered_search(q, 10)
    second = await engine.tiered_search(q, 10)

    assert second.served_from == ServedFrom.CACHE
    assert set(second.ids) == set(first.ids)
    assert second.distances == pytest.approx(first.distances, rel=1e-12)
    assert counting_backend.search_calls == 1
    assert engine.stats.hits == 1 and engine.stats.misses == 1


async def test_region_without_threshold_misses(deterministic_config, counting_backend, small_dataset):
    """Test a query in a region with no learned threshold always misses."""
    dim = small_dataset[0].dim
    row = np.zeros((1, dim))
    row[0, 0] = 1.0
    projector = Projector(row, bucket_min=[-50.0], bucket_width=[1.0], n_buckets=100)
    engine = CacheEngine(deterministic_config, counting_backend, ThresholdStore(projector, deviation_factor=0.0))

    q = small_dataset[1][0]
    await engine.tiered_search(q, 10)
    moved = q.copy()
    moved[0] += 5.0
    lookup = engine.pool.cache_search(engine.thresholds, moved, 10)
    assert lookup.hit is False
    assert lookup.scanned == deterministic_config.n_mini_index

    result = await engine.tiered_search(moved, 10)
    assert result.served_from == ServedFrom.BACKEND


async def test_miss_learns_threshold(engine, small_dataset):
    """Test the first miss in a region sets its threshold to the backend k-th distance."""
    q = small_dataset[1][3]
    result = await engine.tiered_search(q, 5)
    key = engine.thresholds.region_key(q)
    assert engine.thresholds.lookup_threshold(5, key) == result.distances[-1]


async def test_k_outside_range_rejected(engine, small_dataset):
    """Test k outside [1, k_max] is rejected."""
    with pytest.raises(ConfigError):
        await engine.tiered_search(small_dataset[1][0], 0)
    with pytest.raises(ConfigError):
        await engine.tiered_search(small_dataset[1][0], 11)


def test_projector_dimension_must_match_backend(deterministic_config, counting_backend):
    """Test a projector of the wrong input dimension is rejected."""
    projector = Projector.identity(3, [0.0] * 3, [1.0] * 3, n_buckets=2)
    with pytest.raises(ConfigError):
        CacheEngine(deterministic_config, counting_backend, ThresholdStore(projector))


def test_cache_metric_must_match_backend(deterministic_config, cosine_backend, single_region_store):
    """Test a Euclidean cache cannot front a cosine backend."""
    with pytest.raises(ConfigError) as exc:
        CacheEngine(deterministic_config, cosine_backend, single_region_store)
    assert "metric" in exc.value.fields


async def test_cosine_repeat_query_hits(deterministic_config, cosine_backend, single_region_store, small_dataset):
    """Test cosine thresholds and mini-index distances agree, so a repeat query hits."""
    config = deterministic_config.model_copy(update={"metric": DistanceMetric.COSINE_DISTANCE})
    engine = CacheEngine(config, cosine_backend, single_region_store)
    q = small_dataset[1][0]
    first = await engine.tiered_search(q, 10)
    second = await engine.tiered_search(q, 10)

    assert first.served_from == ServedFrom.BACKEND
    assert second.served_from == ServedFrom.CACHE
    assert set(second.ids) == set(first.ids)
    assert second.distances == pytest.approx(first.distances, rel=1e-12)
    assert cosine_backend.search_calls == 1


async def test_miss_colocates_new_neighbors(engine, counting_backend, small_dataset):
    """Test every id fetched for one miss lands in a single mini-index."""
    colocated = 0
    for q in small_dataset[1][:20]:
        before = set(engine.pool.membership)
        result = await engine.tiered_search(q, 10)
        if result.served_from != ServedFrom.BACKEND:
            continue
        fresh = set(result.ids) - before
        assert fresh <= set(engine.pool.membership)
        assert len({engine.pool.membership[i] for i in fresh}) <= 1
        if fresh:
            colocated += 1
    assert colocated > 0


async def test_backend_search_failure_propagates(engine, counting_backend, small_dataset):
    """Test a failing backend search surfaces as BackendError."""
    counting_backend.fail_search = True
    with pytest.raises(BackendError):
        await engine.tiered_search(small_dataset[1][0], 10)


async def test_fill_failure_is_logged_not_raised(deterministic_config, counting_backend, single_region_store, small_dataset, caplog):
    """Test production mode swallows and logs a failing fetch."""
    config = deterministic_config.model_copy(update={"deterministic_mode": False})
    counting_backend.fail_fetch = True
    q = small_dataset[1][0]

    with caplog.at_level(logging.ERROR, logger="simcache.services.cache_engine"):
        async with CacheEngine(config, counting_backend, single_region_store) as engine:
            result = await engine.tiered_search(q, 10)
            await engine.drain()

    assert result.served_from == ServedFrom.BACKEND
    assert engine.pool.membership == {}
    assert "Fill: failed" in caplog.text
    # learning still happens after a failed fill
    assert single_region_store.lookup_threshold(10, single_region_store.region_key(q)) is not None


async def test_production_mode_hits_after_drain(deterministic_config, counting_backend, single_region_store, small_dataset):
    """Test the background worker fills the cache before drain returns."""
    config = deterministic_config.model_copy(update={"deterministic_mode": False})
    q = small_dataset[1][2]
    async with CacheEngine(config, counting_backend, single_region_store) as engine:
        first = await engine.tiered_search(q, 10)
        await engine.drain()
        second = await engine.tiered_search(q, 10)
    assert first.served_from == ServedFrom.BACKEND
    assert second.served_from == ServedFrom.CACHE


async def test_live_vectors_never_exceed_capacity(counting_backend, single_region_store, small_dataset):
    """Test live vectors stay within total capacity under eviction pressure."""
    config = CacheConfig(
        k_max=10, n_mini_index=2, c_mini_index=20, search_list_size=16, deviation_factor=0.0, deterministic_mode=True
    )
    engine = CacheEngine(config, counting_backend, single_region_store)
    for q in small_dataset[1]:
        await engine.tiered_search(q, 10)
        assert engine.pool.live_vectors <= config.total_capacity
    assert engine.stats.evictions > 0


# ---- scan strategies ----

async def test_eager_hit_in_hottest_scans_one(engine, small_dataset):
    """Test EAGER stops at the hottest index when it hits."""
    q = small_dataset[1][0]
    await engine.tiered_search(q, 10)
    lookup = engine.pool.cache_search(engine.thresholds, q, 10, SearchStrategy.EAGER)
    assert lookup.hit is True
    assert lookup.scanned == 1


async def test_exhaustive_scans_every_index(engine, small_dataset):
    """Test EXHAUSTIVE scans every mini-index."""
    q = small_dataset[1][0]
    await engine.tiered_search(q, 10)
    lookup = engine.pool.cache_search(engine.thresholds, q, 10, SearchStrategy.EXHAUSTIVE)
    assert lookup.scanned == engine.config.n_mini_index


async def test_exhaustive_candidates_cover_eager(deterministic_config, counting_backend, small_dataset):
    """Test on a frozen pool EXHAUSTIVE keeps every slot and true neighbor EAGER finds."""
    dataset, queries = small_dataset
    store = ThresholdStore(_single_region(dataset.dim), deviation_factor=0.5)
    engine = CacheEngine(deterministic_config, counting_backend, store)
    for q in queries[:30]:
        await engine.tiered_search(q, 10)

    checked = 0
    for q in queries[:30]:
        eager = copy.deepcopy(engine.pool).cache_search(store, q, 10, SearchStrategy.EAGER)
        exhaustive = copy.deepcopy(engine.pool).cache_search(store, q, 10, SearchStrategy.EXHAUSTIVE)
        assert set(eager.contributing) <= set(exhaustive.contributing)
        if not eager.hit:
            continue
        checked += 1
        truth = [n.id for n in brute_force_search(dataset, q, 10)]
        assert exhaustive.hit is True
        assert compute_recall([n.id for n in exhaustive.neighbors], truth, 10) >= compute_recall(
            [n.id for n in eager.neighbors], truth, 10
        )
    assert checked > 0


def test_adaptive_switches_on_trend(tiny_pool):
    """Test ADAPTIVE follows the recent hit-ratio trend."""
    for hit in [True] * 95 + [False] * 5:
        tiny_pool.record_decision(hit)
    assert tiny_pool.resolve_strategy(SearchStrategy.ADAPTIVE) == SearchStrategy.EAGER
    for _ in range(10):
        tiny_pool.record_decision(False)
    assert tiny_pool.resolve_strategy(SearchStrategy.ADAPTIVE) == SearchStrategy.EXHAUSTIVE


def test_empty_pool_lookup(tiny_pool):
    """Test an empty pool never hits."""
    store = ThresholdStore(Projector.identity(2, [0.0, 0.0], [1.0, 1.0], n_buckets=1))
    store.learn_threshold([0.0, 0.0], 1, [1.0])
    lookup = tiny_pool.cache_search(store, np.array([0.0, 0.0], dtype=np.float32), 1)
    assert lookup.hit is False
    assert lookup.neighbors == []


# ---- hit-ratio trend ----

def test_trend_empty_log(tiny_pool):
    assert tiny_pool.hit_ratio_trend() == 0.0


def test_trend_counts_hits(tiny_pool):
    """Test the trend is the hit fraction of recorded decisions."""
    for hit in (True, False, True, True):
        tiny_pool.record_decision(hit)
    assert tiny_pool.hit_ratio_trend() == 0.75


def test_trend_uses_sliding_window():
    """Test the trend only looks at the last window of decisions."""
    pool = CachePool(CacheConfig(k_max=1, c_mini_index=1, search_list_size=1, adaptive_window=100), dim=2)
    for hit in [False] * 50 + [True] * 90 + [False] * 10:
        pool.record_decision(hit)
    assert pool.hit_ratio_trend() == 0.9


# ---- fill and eviction ----

def test_fill_targets_hottest_with_room(tiny_pool):
    """Test a fill goes to the hottest index that has room."""
    assert tiny_pool.cache_fill(_entries(1, 2)) == 0
    assert tiny_pool.cache_fill(_entries(3, 4)) == 1
    assert tiny_pool.eviction_order == [1, 0]
    assert tiny_pool.membership == {1: 0, 2: 0, 3: 1, 4: 1}


def test_fill_evicts_coldest_when_full(tiny_pool):
    """Test a fill with no room resets the coldest index."""
    tiny_pool.cache_fill(_entries(1, 2))
    tiny_pool.cache_fill(_entries(3, 4))
    assert tiny_pool.cache_fill(_entries(5, 6)) == 0

    assert tiny_pool.stats.evictions == 1
    assert tiny_pool.eviction_events[-1] == EvictionEvent(slot=0, evicted=2)
    assert tiny_pool.membership == {3: 1, 4: 1, 5: 0, 6: 0}
    assert tiny_pool.eviction_order == [0, 1]


def test_fill_of_cached_ids_is_noop(tiny_pool):
    """Test a fill of already-cached ids changes nothing."""
    tiny_pool.cache_fill(_entries(1, 2))
    tiny_pool.cache_fill(_entries(3, 4))
    before = dict(tiny_pool.membership)
    assert tiny_pool.cache_fill(_entries(1, 2)) is None
    assert tiny_pool.membership == before
    assert tiny_pool.eviction_order == [1, 0]


def test_fill_keeps_only_new_ids(tiny_pool):
    """Test only ids not yet cached are inserted."""
    tiny_pool.cache_fill(_entries(1, 2))
    assert tiny_pool.cache_fill(_entries(2, 3)) == 0
    assert tiny_pool.mini_indexes[0].live_count == 3


def test_fill_larger_than_index_rejected(tiny_pool):
    """Test a fill larger than one mini-index is rejected."""
    with pytest.raises(ConfigError):
        tiny_pool.cache_fill(_entries(1, 2, 3, 4))


def test_membership_matches_index_contents(tiny_pool):
    """Test the membership map mirrors what each index holds."""
    for ids in ((1, 2), (3, 4), (5, 6), (7,), (8, 9)):
        tiny_pool.cache_fill(_entries(*ids))
    for vector_id, slot in tiny_pool.membership.items():
        assert vector_id in tiny_pool.mini_indexes[slot]
    assert sum(ix.live_count for ix in tiny_pool.mini_indexes) == len(tiny_pool.membership)
