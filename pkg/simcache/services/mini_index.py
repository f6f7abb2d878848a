"""
Bounded-capacity dynamic proximity graph.

Insertion searches the existing graph for candidates and keeps a pruned,
degree-bounded neighbor list (robust prune with alpha slack). Eviction is
whole-index reset only; there is no per-node deletion.

Every node except the entry point has a parent whose edge to it is never
pruned, so all live nodes stay reachable from the entry point. A node may
protect at most max_degree // 2 children.
"""
import enum
import heapq
import logging
from typing import Dict, Iterable, List, Optional, Set

import numpy as np

from simcache.exceptions import DimensionMismatchError, InvalidVectorError
from simcache.models.metric import DistanceMetric, as_vector, distances, pairwise_distances
from simcache.models.result import Neighbor
from simcache.schemas import MiniIndexConfig

logger = logging.getLogger(__name__)


class InsertStatus(str, enum.Enum):
    OK = "OK"
    REJECTED_FULL = "REJECTED_FULL"
    REJECTED_DUPLICATE = "REJECTED_DUPLICATE"


class MiniIndex:
    def __init__(self, config: MiniIndexConfig, dim: int, metric: DistanceMetric = DistanceMetric.EUCLIDEAN):
        self.config = config
        self.dim = dim
        self.metric = metric
        self._max_protected = max(1, config.max_degree // 2)
        self._clear()

    def _clear(self):
        self._vectors: Optional[np.ndarray] = None
        self._ids: List[int] = []
        self._adj: List[List[int]] = []
        self._children: List[Set[int]] = []
        self._slot_of: Dict[int, int] = {}
        self.entry_point: Optional[int] = None  # slot of the first inserted node

    @property
    def capacity(self) -> int:
        return self.config.capacity

    @property
    def live_count(self) -> int:
        return len(self._ids)

    @property
    def free(self) -> int:
        return self.capacity - self.live_count

    def __contains__(self, vector_id: int) -> bool:
        return vector_id in self._slot_of

    def ids(self) -> List[int]:
        return list(self._ids)

    def entry_id(self) -> Optional[int]:
        return None if self.entry_point is None else self._ids[self.entry_point]

    def neighbors_of(self, vector_id: int) -> List[int]:
        return [self._ids[s] for s in self._adj[self._slot_of[vector_id]]]

    def vector_of(self, vector_id: int) -> np.ndarray:
        return self._vectors[self._slot_of[vector_id]].astype(np.float32)

    def reset(self):
        """Drop every node and release storage; the index is immediately reusable."""
        self._clear()

    def insert(self, vector_id: int, vector) -> InsertStatus:
        vec = as_vector(vector)
        if vec.shape[0] != self.dim:
            raise DimensionMismatchError(self.dim, vec.shape[0])
        if vector_id in self._slot_of:
            return InsertStatus.REJECTED_DUPLICATE
        if self.live_count >= self.capacity:
            return InsertStatus.REJECTED_FULL
        if self.metric == DistanceMetric.COSINE_DISTANCE and not np.any(vec):
            raise InvalidVectorError("cosine distance is undefined for the zero vector")

        if self._vectors is None:
            # float64 holds the float32 inputs exactly
            self._vectors = np.empty((self.capacity, self.dim), dtype=np.float64)

        slot = len(self._ids)
        self._vectors[slot] = vec
        self._ids.append(int(vector_id))
        self._adj.append([])
        self._children.append(set())
        self._slot_of[int(vector_id)] = slot

        if self.entry_point is None:
            self.entry_point = slot
            return InsertStatus.OK

        beam, expanded = self._beam_search(vec, self.config.search_list_size, exclude=slot)
        pool = {s: d for d, _, s in expanded}
        pool.update({s: d for d, _, s in beam})
        candidates = sorted(pool, key=lambda s: (pool[s], self._ids[s]))

        self._adj[slot] = self._robust_prune(slot, candidates, protected=())
        self._attach_parent(slot, candidates)

        for neighbor in list(self._adj[slot]):
            if slot not in self._adj[neighbor]:
                self._adj[neighbor].append(slot)
                if len(self._adj[neighbor]) > self.config.max_degree:
                    self._adj[neighbor] = self._robust_prune(
                        neighbor, self._adj[neighbor], protected=self._children[neighbor]
                    )
        return InsertStatus.OK

    def search(self, query, k: int) -> List[Neighbor]:
        """Greedy best-first search from the entry point; ascending (distance, id)."""
        if self.live_count == 0:
            return []
        q = as_vector(query)
        if q.shape[0] != self.dim:
            raise DimensionMismatchError(self.dim, q.shape[0])
        width = max(self.config.search_list_size, k)
        beam, _ = self._beam_search(q, width)
        return [Neighbor(id=nid, distance=d) for d, nid, _ in beam[:k]]

    def _beam_search(self, query: np.ndarray, width: int, exclude: Optional[int] = None):
        """
        Returns (beam, expanded): the best `width` nodes found, sorted by
        (distance, id), and every node expanded along the way.
        """
        ids = self._ids
        query = np.asarray(query, dtype=np.float64)
        start = self.entry_point
        d0 = float(distances(self._vectors[start:start + 1], query, self.metric)[0])
        visited = {start}
        if exclude is not None:
            visited.add(exclude)
        frontier = [(d0, ids[start], start)]
        best = [(-d0, -ids[start], start)]  # max-heap on (distance, id)
        expanded = []

        while frontier:
            d, nid, s = heapq.heappop(frontier)
            if len(best) >= width and (d, nid) > (-best[0][0], -best[0][1]):
                break
            expanded.append((d, nid, s))
            fresh = [n for n in self._adj[s] if n not in visited]
            if not fresh:
                continue
            visited.update(fresh)
            fresh_d = distances(self._vectors[fresh], query, self.metric).tolist()
            for n, dn in zip(fresh, fresh_d):
                key = (dn, ids[n])
                if len(best) < width:
                    heapq.heappush(best, (-dn, -ids[n], n))
                    heapq.heappush(frontier, (dn, ids[n], n))
                elif key < (-best[0][0], -best[0][1]):
                    heapq.heapreplace(best, (-dn, -ids[n], n))
                    heapq.heappush(frontier, (dn, ids[n], n))

        beam = sorted((-nd, -nid, s) for nd, nid, s in best)
        return beam, expanded

    def _robust_prune(self, slot: int, candidates: Iterable[int], protected: Iterable[int]) -> List[int]:
        """
        Keep candidate c only if no already-kept neighbor n has
        alpha * d(n, c) < d(slot, c). Protected children are kept first.
        """
        cands = [c for c in dict.fromkeys(candidates) if c != slot]
        if not cands:
            return []
        rows = self._vectors[cands]
        to_slot = distances(rows, self._vectors[slot], self.metric)
        pair = pairwise_distances(rows, self.metric)
        order = sorted(range(len(cands)), key=lambda i: (to_slot[i], self._ids[cands[i]]))
        position = {c: i for i, c in enumerate(cands)}

        alive = np.ones(len(cands), dtype=bool)
        kept: List[int] = []
        alpha = self.config.prune_alpha
        for child in protected:
            i = position.get(child)
            if i is None:
                continue
            kept.append(i)
            alive[i] = False
            alive &= ~(alpha * pair[i] < to_slot)

        for i in order:
            if len(kept) >= self.config.max_degree:
                break
            if not alive[i]:
                continue
            kept.append(i)
            alive[i] = False
            alive &= ~(alpha * pair[i] < to_slot)
        return [cands[i] for i in kept]

    def _attach_parent(self, slot: int, candidates: List[int]):
        parent = None
        for c in list(self._adj[slot]) + candidates:
            if len(self._children[c]) < self._max_protected:
                parent = c
                break
        if parent is None:
            # the most recent earlier node protects no children yet
            parent = slot - 1
        self._children[parent].add(slot)
        if slot not in self._adj[parent]:
            self._adj[parent].append(slot)
            if len(self._adj[parent]) > self.config.max_degree:
                self._adj[parent] = self._robust_prune(parent, self._adj[parent], protected=self._children[parent])

    def reachable_ids(self) -> Set[int]:
        """Ids reachable from the entry point by following edges."""
        if self.entry_point is None:
            return set()
        seen = {self.entry_point}
        stack = [self.entry_point]
        while stack:
            s = stack.pop()
            for n in self._adj[s]:
                if n not in seen:
                    seen.add(n)
                    stack.append(n)
        return {self._ids[s] for s in seen}

    def max_out_degree(self) -> int:
        return max((len(a) for a in self._adj), default=0)

    def edges_are_live(self) -> bool:
        n = self.live_count
        return all(0 <= t < n for a in self._adj for t in a)

    def __repr__(self) -> str:
        return f"MiniIndex(live={self.live_count}/{self.capacity}, dim={self.dim})"
