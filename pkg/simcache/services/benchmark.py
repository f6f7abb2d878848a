"""
Trace replay harness.

Replays a workload trace through the cache engine (and optionally through the
bare backend as a baseline), scores every answer against exact ground truth
and aggregates metrics per window step.
"""
import asyncio
import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from simcache.exceptions import ConfigError
from simcache.models.dataset import Dataset
from simcache.models.metric import DistanceMetric, distances
from simcache.models.result import SearchResult, ServedFrom
from simcache.models.trace import WorkloadTrace
from simcache.schemas import BenchConfig, BenchReport, RunSummary, StepMetrics
from simcache.services.backend import BackendInterface, build_backend
from simcache.services.cache_engine import CacheEngine
from simcache.services.dataset_io import generate_synthetic, load_vectors, read_bvecs, read_fvecs
from simcache.services.pca_trainer import train_from_dataset
from simcache.services.threshold_store import Projector, ThresholdStore
from simcache.services.workload_gen import generate_trace, load_trace

logger = logging.getLogger(__name__)

GROUND_TRUTH_BATCH = 64
TIE_TOLERANCE = 1e-9  # relative slack for GEMM rounding at the shortlist boundary


def compute_recall(result_ids: Sequence[int], ground_truth_ids: Sequence[int], k: int) -> float:
    """|result ∩ truth| / k."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    if len(ground_truth_ids) != k:
        raise ValueError(f"ground truth must have exactly {k} ids, got {len(ground_truth_ids)}")
    if len(result_ids) > k:
        raise ValueError(f"result has {len(result_ids)} ids, more than k={k}")
    return len(set(int(i) for i in result_ids) & set(int(i) for i in ground_truth_ids)) / k


def _exact_top_k(rows: np.ndarray, query: np.ndarray, ids: np.ndarray, k: int, metric: DistanceMetric) -> Tuple[int, ...]:
    dist = distances(rows, query, metric)
    order = np.lexsort((ids, dist))[:k]
    return tuple(int(i) for i in ids[order])


def ground_truth(dataset: Dataset, trace, k: int) -> Dict[int, Tuple[int, ...]]:
    """
    Exact top-k ids for every trace position, identical to brute_force_search.

    Identical query vectors are solved once. Queries are shortlisted in
    batches with a matrix product, and each shortlist is re-ranked with the
    exact distance and (distance, id) tie rule.
    """
    n = len(dataset)
    if not 0 < k <= n:
        raise ValueError(f"k ({k}) must be in [1, {n}]")
    queries = trace.queries() if isinstance(trace, WorkloadTrace) else np.asarray(trace, dtype=np.float32)
    if len(queries) == 0:
        return {}

    unique: Dict[bytes, int] = {}
    slot_of_position = []
    for q in queries:
        slot_of_position.append(unique.setdefault(q.tobytes(), len(unique)))
    firsts = np.empty(len(unique), dtype=np.int64)
    for position, slot in reversed(list(enumerate(slot_of_position))):
        firsts[slot] = position
    distinct = queries[firsts]

    data = dataset.vectors.astype(np.float64)
    shortlist = min(n, 2 * k + 16)
    cosine = dataset.metric == DistanceMetric.COSINE_DISTANCE
    if cosine:
        norms = np.linalg.norm(data, axis=1)
        scaled = data / np.where(norms > 0, norms, 1.0)[:, None]
    else:
        sq = (data * data).sum(axis=1)

    solved: List[Tuple[int, ...]] = []
    everything = np.arange(n)
    for start in range(0, len(distinct), GROUND_TRUTH_BATCH):
        block = distinct[start:start + GROUND_TRUTH_BATCH].astype(np.float64)
        if cosine:
            approx = -(block @ scaled.T)
            scale = np.linalg.norm(block, axis=1)
        else:
            approx = sq[None, :] - 2.0 * (block @ data.T)
            scale = sq.max() + (block * block).sum(axis=1)
        if shortlist < n:
            # Every id tied with the shortlist boundary stays in, so the
            # exact (distance, id) re-rank sees all of them
            bounds = np.partition(approx, shortlist - 1, axis=1)[:, shortlist - 1]
            cutoffs = bounds + TIE_TOLERANCE * (scale + np.abs(bounds))
            picks = [np.flatnonzero(row <= cutoff) for row, cutoff in zip(approx, cutoffs)]
        else:
            picks = [everything] * len(block)
        for row, q in zip(picks, distinct[start:start + GROUND_TRUTH_BATCH]):
            solved.append(_exact_top_k(dataset.vectors[row], q, row, k, dataset.metric))

    return {position: solved[slot] for position, slot in enumerate(slot_of_position)}


def _p50(values: List[float]) -> Optional[float]:
    return float(np.median(values)) if values else None


@dataclass
class QueryOutcome:
    served_from: ServedFrom
    latency: float
    recall: float


@dataclass
class PreparedRun:
    dataset: Dataset
    trace: WorkloadTrace
    projector: Projector
    truth: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    queries: Optional[np.ndarray] = None


class BenchmarkRunner:
    """
    Loads or generates every input named by a BenchConfig and replays the
    trace. Pieces passed in explicitly are reused (sweeps share them).
    """

    def __init__(
        self,
        config: BenchConfig,
        dataset: Optional[Dataset] = None,
        trace: Optional[WorkloadTrace] = None,
        projector: Optional[Projector] = None,
        truth: Optional[Dict[int, Tuple[int, ...]]] = None,
        queries: Optional[np.ndarray] = None,
    ):
        self.config = config
        self._dataset = dataset
        self._queries = queries
        self._trace = trace
        self._projector = projector
        self._truth = truth

    def prepare(self) -> PreparedRun:
        cfg = self.config
        dataset = self._dataset
        queries = self._queries
        if dataset is None:
            if cfg.synthetic is not None:
                dataset, queries = generate_synthetic(cfg.synthetic, cfg.metric)
            else:
                dataset = load_vectors(cfg.dataset_path, cfg.metric)
        if len(dataset) < cfg.k:
            raise ConfigError(f"k ({cfg.k}) exceeds dataset size ({len(dataset)})", fields=["k"])

        trace = self._trace
        if trace is None and cfg.trace_path is not None:
            trace = load_trace(cfg.trace_path)
        if trace is None:
            if queries is None:
                if cfg.queries_path is not None:
                    reader = read_bvecs if cfg.queries_path.endswith(".bvecs") else read_fvecs
                    queries = reader(cfg.queries_path).astype(np.float32)
                else:
                    raise ConfigError("a trace or query set is required", fields=["trace_path", "queries_path"])
            trace = generate_trace(queries, dataset, cfg.workload)
        if trace.dim != dataset.dim:
            raise ConfigError(
                f"trace dimension {trace.dim} does not match dataset dimension {dataset.dim}",
                fields=["trace_path"],
            )

        projector = self._projector
        if projector is None:
            if cfg.projector_path is not None and not cfg.projector.global_threshold:
                projector = Projector.load(cfg.projector_path)
            else:
                projector = train_from_dataset(dataset, cfg.projector)

        truth = self._truth
        if truth is None:
            started = time.perf_counter()
            truth = ground_truth(dataset, trace, cfg.k)
            logger.info(f"Ground truth: {len(trace)} queries in {time.perf_counter() - started:.1f}s")

        self._dataset, self._trace, self._projector, self._truth = dataset, trace, projector, truth
        self._queries = queries
        return PreparedRun(dataset, trace, projector, truth, queries)

    def run(self) -> BenchReport:
        return asyncio.run(self.run_async())

    async def run_async(self) -> BenchReport:
        prepared = self.prepare()
        cfg = self.config

        steps, summary = await self._replay(prepared, use_cache=not cfg.no_cache)
        report = BenchReport(config=cfg, steps=steps, summary=summary)
        if cfg.baseline:
            baseline_steps, baseline_summary = await self._replay(prepared, use_cache=False)
            report = report.model_copy(update={"baseline_steps": baseline_steps, "baseline_summary": baseline_summary})

        logger.info(
            f"Run: {summary.total_queries} queries, hit ratio {summary.hit_ratio:.3f}, "
            f"recall@{cfg.k} {summary.recall_at_k:.4f}, evictions {summary.evictions}"
        )
        return report

    async def _replay(self, prepared: PreparedRun, use_cache: bool) -> Tuple[List[StepMetrics], RunSummary]:
        cfg = self.config
        backend = build_backend(cfg.backend, prepared.dataset)
        thresholds = ThresholdStore(
            prepared.projector,
            adaptivity_rate=cfg.cache.adaptivity_rate,
            deviation_factor=cfg.cache.deviation_factor,
            max_regions=cfg.cache.max_regions,
        )
        engine = CacheEngine(cfg.cache, backend, thresholds)
        semaphore = asyncio.Semaphore(cfg.concurrency)

        async def issue(position: int) -> QueryOutcome:
            entry = prepared.trace[position]
            async with semaphore:
                started = time.perf_counter()
                if use_cache:
                    result = await engine.tiered_search(entry.query, cfg.k)
                else:
                    result = await self._search_uncached(backend, entry.query)
                latency = time.perf_counter() - started
            return QueryOutcome(result.served_from, latency, compute_recall(result.ids, prepared.truth[position], cfg.k))

        steps: List[StepMetrics] = []
        outcomes_all: List[QueryOutcome] = []
        wall_total = 0.0
        async with engine:
            for positions in prepared.trace.steps():
                scanned_before = engine.stats.mini_indexes_scanned_total
                started = time.perf_counter()
                if cfg.concurrency > 1:
                    outcomes = list(await asyncio.gather(*(issue(p) for p in positions)))
                else:
                    outcomes = [await issue(p) for p in positions]
                wall = time.perf_counter() - started
                if use_cache:
                    await engine.drain()
                wall_total += wall
                outcomes_all.extend(outcomes)

                step_no = prepared.trace[positions[0]].window_step
                working_set = {i for p in positions for i in prepared.truth[p]}
                steps.append(self._step_metrics(step_no, outcomes, wall, engine, thresholds, len(working_set),
                                                engine.stats.mini_indexes_scanned_total - scanned_before))

        summary = self._summarize(outcomes_all, wall_total, steps, engine, thresholds)
        return steps, summary

    async def _search_uncached(self, backend: BackendInterface, query) -> SearchResult:
        if self.config.cache.deterministic_mode:
            neighbors = backend.search(query, self.config.k)
        else:
            neighbors = await asyncio.to_thread(backend.search, query, self.config.k)
        return SearchResult(neighbors=tuple(neighbors), served_from=ServedFrom.BACKEND)

    @staticmethod
    def _step_metrics(step_no, outcomes, wall, engine, thresholds, working_set, scanned) -> StepMetrics:
        hit_lat = [o.latency for o in outcomes if o.served_from == ServedFrom.CACHE]
        miss_lat = [o.latency for o in outcomes if o.served_from == ServedFrom.BACKEND]
        n = len(outcomes)
        return StepMetrics(
            window_step=step_no,
            queries=n,
            hits=len(hit_lat),
            misses=len(miss_lat),
            hit_ratio=len(hit_lat) / n,
            hit_latency_p50=_p50(hit_lat),
            miss_latency_p50=_p50(miss_lat),
            overall_latency_p50=_p50([o.latency for o in outcomes]),
            qps=n / wall if wall > 0 else 0.0,
            recall_at_k=float(np.mean([o.recall for o in outcomes])),
            cumulative_vectors_fetched=engine.stats.vectors_fetched,
            live_cached_vectors=engine.pool.live_vectors,
            active_regions=thresholds.active_regions,
            mean_mini_indexes_scanned=scanned / n,
            cumulative_evictions=engine.stats.evictions,
            working_set=working_set,
        )

    @staticmethod
    def _summarize(outcomes, wall_total, steps, engine, thresholds) -> RunSummary:
        hits = [o.latency for o in outcomes if o.served_from == ServedFrom.CACHE]
        misses = [o.latency for o in outcomes if o.served_from == ServedFrom.BACKEND]
        total = len(outcomes)
        scanned = sum(s.mean_mini_indexes_scanned * s.queries for s in steps)
        return RunSummary(
            total_queries=total,
            hit_ratio=len(hits) / total if total else 0.0,
            recall_at_k=float(np.mean([o.recall for o in outcomes])) if outcomes else 0.0,
            hit_latency_p50=_p50(hits),
            miss_latency_p50=_p50(misses),
            overall_latency_p50=_p50([o.latency for o in outcomes]) or 0.0,
            qps=total / wall_total if wall_total > 0 else 0.0,
            evictions=engine.stats.evictions,
            vectors_fetched=engine.stats.vectors_fetched,
            mean_mini_indexes_scanned=scanned / total if total else 0.0,
            max_live_cached_vectors=max((s.live_cached_vectors for s in steps), default=0),
            active_regions=thresholds.active_regions,
            working_set_estimate=max((s.working_set for s in steps), default=0),
            total_capacity=engine.pool.total_capacity,
        )


def run_benchmark(config: BenchConfig) -> BenchReport:
    return BenchmarkRunner(config).run()
