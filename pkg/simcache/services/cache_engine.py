"""
Similarity-aware query cache in front of an ANN backend.

Lookups scan the mini-index pool hottest-first and accept a candidate list
only when its k-th distance is within the learned threshold of the query's
region. Misses go to the backend; the missed neighbors are fetched and
colocated in one mini-index and the region threshold learns from the
backend's k-th distance. In production mode that maintenance runs on a
single background worker fed by an asyncio queue; in deterministic mode it
runs inline before the lookup returns.

All pool and threshold mutations happen on the event-loop thread without an
intervening await, so concurrent lookups always see each mini-index, the
eviction order and the membership map in a consistent state.
"""
import asyncio
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from simcache.exceptions import BackendError, ConfigError, SimCacheError
from simcache.models.metric import as_vector
from simcache.models.region import RegionKey
from simcache.models.result import Neighbor, SearchResult, ServedFrom, rerank
from simcache.schemas import CacheConfig, SearchStrategy
from simcache.services.backend import BackendInterface
from simcache.services.eviction import EvictionPolicy, LRUPolicy
from simcache.services.mini_index import InsertStatus, MiniIndex
from simcache.services.threshold_store import ThresholdStore

logger = logging.getLogger(__name__)

EVICTION_HISTORY = 1024


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    vectors_fetched: int = 0
    mini_indexes_scanned_total: int = 0


@dataclass(frozen=True)
class EvictionEvent:
    slot: int
    evicted: int  # live_count of the index at reset time


@dataclass
class CacheLookup:
    neighbors: List[Neighbor]
    hit: bool
    scanned: int
    strategy: SearchStrategy
    key: RegionKey
    contributing: List[int] = field(default_factory=list)  # slots whose top-k passed the hit test


@dataclass
class MissEvent:
    query: np.ndarray
    k: int
    neighbors: List[Neighbor]
    key: Optional[RegionKey] = None


class CachePool:
    """Fixed set of mini-indexes with heat ordering, id membership and decision history."""

    def __init__(self, config: CacheConfig, dim: int, policy: Optional[EvictionPolicy] = None):
        self.config = config
        self.dim = dim
        index_config = config.mini_index_config()
        self.mini_indexes: List[MiniIndex] = [
            MiniIndex(index_config, dim, config.metric) for _ in range(config.n_mini_index)
        ]
        self.policy = policy or LRUPolicy(config.n_mini_index)
        self.membership: Dict[int, int] = {}
        self.decision_log: Deque[bool] = deque(maxlen=config.adaptive_window)
        self.eviction_events: Deque[EvictionEvent] = deque(maxlen=EVICTION_HISTORY)
        self.stats = CacheStats()

    @property
    def eviction_order(self) -> List[int]:
        """Slots from hottest (MRU) to coldest (LRU)."""
        return self.policy.order()

    @property
    def live_vectors(self) -> int:
        return sum(index.live_count for index in self.mini_indexes)

    @property
    def total_capacity(self) -> int:
        return self.config.total_capacity

    def record_decision(self, hit: bool):
        self.decision_log.append(hit)
        if hit:
            self.stats.hits += 1
        else:
            self.stats.misses += 1

    def hit_ratio_trend(self) -> float:
        if not self.decision_log:
            return 0.0
        return sum(self.decision_log) / len(self.decision_log)

    def resolve_strategy(self, strategy: Optional[SearchStrategy] = None) -> SearchStrategy:
        strategy = strategy or self.config.strategy
        if strategy != SearchStrategy.ADAPTIVE:
            return strategy
        if self.hit_ratio_trend() < self.config.adaptive_hit_ratio_threshold:
            return SearchStrategy.EXHAUSTIVE
        return SearchStrategy.EAGER

    def cache_search(
        self,
        thresholds: ThresholdStore,
        query: np.ndarray,
        k: int,
        strategy: Optional[SearchStrategy] = None,
    ) -> CacheLookup:
        """
        Scan mini-indexes hottest-first. Indexes whose top-k passes the hit
        test contribute candidates and are promoted in scan order; EAGER
        stops at the first such index.
        """
        resolved = self.resolve_strategy(strategy)
        key = thresholds.region_key(query)
        order = self.eviction_order

        if thresholds.lookup_threshold(k, key) is None:
            # Nothing can hit without a threshold; every index counts as scanned
            self.stats.mini_indexes_scanned_total += len(order)
            return CacheLookup([], False, len(order), resolved, key)

        candidates: List[Neighbor] = []
        contributing: List[int] = []
        scanned = 0
        for slot in order:
            scanned += 1
            found = self.mini_indexes[slot].search(query, k)
            if thresholds.is_hit(query, k, [n.distance for n in found], key=key):
                candidates.extend(found)
                contributing.append(slot)
                if resolved == SearchStrategy.EAGER:
                    break

        for slot in contributing:
            self.policy.touch(slot)
        self.stats.mini_indexes_scanned_total += scanned
        return CacheLookup(rerank(candidates, k), bool(contributing), scanned, resolved, key, contributing)

    def cache_fill(self, entries: Sequence[Tuple[int, np.ndarray]]) -> Optional[int]:
        """
        Insert one miss's vectors into a single mini-index.

        Returns:
            The receiving slot, or None when every id was already cached
        """
        fresh: List[Tuple[int, np.ndarray]] = []
        seen = set()
        for vector_id, vector in entries:
            vector_id = int(vector_id)
            if vector_id in self.membership or vector_id in seen:
                continue
            seen.add(vector_id)
            fresh.append((vector_id, vector))
        if not fresh:
            return None

        m = len(fresh)
        if m > self.config.c_mini_index:
            raise ConfigError(
                f"a fill of {m} vectors exceeds c_mini_index ({self.config.c_mini_index})",
                fields=["c_mini_index"],
            )

        target = next((s for s in self.eviction_order if self.mini_indexes[s].free >= m), None)
        if target is None:
            target = self.policy.coldest()
            self.evict(target)

        index = self.mini_indexes[target]
        for vector_id, vector in fresh:
            status = index.insert(vector_id, vector)
            if status == InsertStatus.OK:
                self.membership[vector_id] = target
            else:
                logger.warning(f"Fill slot {target}: insert of id {vector_id} returned {status.value}")
        self.policy.touch(target)
        logger.debug(f"Fill slot {target}: inserted {m} vectors, live {index.live_count}/{index.capacity}")
        return target

    def evict(self, slot: int):
        index = self.mini_indexes[slot]
        evicted = index.ids()
        for vector_id in evicted:
            self.membership.pop(vector_id, None)
        index.reset()
        self.stats.evictions += 1
        self.eviction_events.append(EvictionEvent(slot, len(evicted)))
        logger.info(f"Evict slot {slot}: dropped {len(evicted)} vectors ({self.stats.evictions} evictions so far)")


class CacheEngine:
    """
    Tiered search over a CachePool and a backend.

    Usage:
        async with CacheEngine(config, backend, thresholds) as engine:
            result = await engine.tiered_search(query, k=10)
    """

    def __init__(
        self,
        config: CacheConfig,
        backend: BackendInterface,
        thresholds: ThresholdStore,
        policy: Optional[EvictionPolicy] = None,
    ):
        if thresholds.projector.dim_in != backend.dim:
            raise ConfigError(
                f"projector input dimension {thresholds.projector.dim_in} does not match backend dimension {backend.dim}",
                fields=["projector"],
            )
        if config.metric != backend.metric:
            raise ConfigError(
                f"cache metric {config.metric.value} does not match backend metric {backend.metric.value}",
                fields=["metric"],
            )
        self.config = config
        self.backend = backend
        self.thresholds = thresholds
        self.pool = CachePool(config, backend.dim, policy)
        self._queue: Optional[asyncio.Queue] = None
        self._worker: Optional[asyncio.Task] = None

    @property
    def deterministic(self) -> bool:
        return self.config.deterministic_mode

    @property
    def stats(self) -> CacheStats:
        return self.pool.stats

    async def start(self):
        if self.deterministic or self._worker is not None:
            return
        self._queue = asyncio.Queue()
        self._worker = asyncio.create_task(self._run_worker())
        logger.debug("Cache engine: background worker started")

    async def drain(self):
        """Wait until every queued miss has been filled and learned."""
        if self._queue is not None:
            await self._queue.join()

    async def close(self):
        await self.drain()
        if self._worker is not None:
            self._worker.cancel()
            try:
                await self._worker
            except asyncio.CancelledError:
                pass
            self._worker = None
            self._queue = None

    async def __aenter__(self) -> "CacheEngine":
        await self.start()
        return self

    async def __aexit__(self, exc_type, exc, tb):
        await self.close()

    async def tiered_search(self, query, k: int, strategy: Optional[SearchStrategy] = None) -> SearchResult:
        if not 1 <= k <= self.config.k_max:
            raise ConfigError(f"k ({k}) must be in [1, {self.config.k_max}]", fields=["k"])
        q = as_vector(query, self.pool.dim)

        lookup = self.pool.cache_search(self.thresholds, q, k, strategy)
        self.pool.record_decision(lookup.hit)
        if lookup.hit:
            logger.debug(f"Hit: k={k} region={lookup.key.packed} scanned={lookup.scanned}")
            return SearchResult(neighbors=tuple(lookup.neighbors), served_from=ServedFrom.CACHE)

        logger.debug(f"Miss: k={k} region={lookup.key.packed} scanned={lookup.scanned}")
        neighbors = await self._backend_call(self.backend.search, q, k)
        event = MissEvent(query=q, k=k, neighbors=list(neighbors), key=lookup.key)
        if self.deterministic:
            await self._maintain(event)
        else:
            await self.start()
            self._queue.put_nowait(event)
        return SearchResult(neighbors=tuple(neighbors), served_from=ServedFrom.BACKEND)

    async def _backend_call(self, fn, *args):
        try:
            if self.deterministic:
                return fn(*args)
            return await asyncio.to_thread(fn, *args)
        except SimCacheError:
            raise
        except Exception as e:
            raise BackendError(f"backend {fn.__name__} failed: {e}") from e

    async def _run_worker(self):
        while True:
            event = await self._queue.get()
            try:
                await self._maintain(event)
            finally:
                self._queue.task_done()

    async def _maintain(self, event: MissEvent):
        """Fetch and colocate the missed neighbors, then learn the region threshold."""
        ids = [n.id for n in event.neighbors if n.id not in self.pool.membership]
        try:
            if ids:
                vectors = await self._backend_call(self.backend.fetch, ids)
                self.pool.stats.vectors_fetched += len(ids)
                self.pool.cache_fill(list(zip(ids, vectors)))
        except Exception:
            logger.exception(f"Fill: failed for a miss with {len(ids)} new ids")

        try:
            if len(event.neighbors) >= event.k:
                self.thresholds.learn_threshold(
                    event.query, event.k, [n.distance for n in event.neighbors], key=event.key
                )
        except Exception:
            logger.exception(f"Learn: failed for k={event.k}")
