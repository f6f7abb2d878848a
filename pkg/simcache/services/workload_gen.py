"""
Sliding-window workload with temporal-semantic locality.

Base queries are cut into contiguous splits. A window of `window_size`
splits is dispatched `n_repeat` times; every dispatch is one window step and
emits a freshly perturbed copy of each query in the window, shuffled. After
the repeats the window slides by `stride` splits. Rounds replay the whole
sweep with new perturbations.
"""
import logging
import struct
from pathlib import Path
from typing import List, Union

import numpy as np

from simcache.exceptions import ConfigError, DimensionMismatchError, VectorFormatError
from simcache.models.dataset import Dataset
from simcache.models.trace import TraceEntry, WorkloadTrace
from simcache.schemas import WorkloadParams

logger = logging.getLogger(__name__)

TRACE_MAGIC = b"QVTR"
TRACE_VERSION = 1
_HEADER = struct.Struct("<4sIII")
_SEED_MASK = (1 << 64) - 1


def perturb(q, r, eta: float) -> np.ndarray:
    """q' = (1 - eta) * q + eta * r, computed in float64 and stored as float32."""
    q = np.asarray(q)
    r = np.asarray(r)
    if q.shape != r.shape:
        raise DimensionMismatchError(q.shape[-1] if q.ndim else 0, r.shape[-1] if r.ndim else 0)
    if not 0.0 <= eta <= 1.0:
        raise ValueError(f"noise ratio must be in [0, 1], got {eta}")
    mixed = (1.0 - eta) * q.astype(np.float64) + eta * r.astype(np.float64)
    return mixed.astype(np.float32)


def split_queries(queries, n_split: int) -> List[np.ndarray]:
    """
    Contiguous, disjoint splits of query positions; the first
    len(queries) % n_split splits get one extra query.
    """
    n = len(queries)
    if n_split <= 0:
        raise ConfigError(f"n_split must be positive, got {n_split}", fields=["n_split"])
    if n < n_split:
        raise ConfigError(f"{n} queries cannot fill {n_split} splits", fields=["n_split"])
    return np.array_split(np.arange(n), n_split)


def step_rng(seed: int, round_no: int, position: int, repeat: int) -> np.random.Generator:
    return np.random.default_rng([seed & _SEED_MASK, round_no, position, repeat])


def generate_trace(queries, dataset: Dataset, params: WorkloadParams) -> WorkloadTrace:
    queries = np.asarray(queries, dtype=np.float32)
    if queries.ndim != 2:
        raise ConfigError(f"queries must be a 2-d array, got shape {queries.shape}", fields=["queries"])
    if len(dataset) == 0:
        raise ConfigError("cannot perturb against an empty dataset", fields=["dataset"])
    if queries.shape[1] != dataset.dim:
        raise DimensionMismatchError(dataset.dim, queries.shape[1], what="queries")

    splits = split_queries(queries, params.n_split)
    entries: List[TraceEntry] = []
    step = 0
    for round_no in range(params.n_round):
        for position in range(params.positions_per_round):
            first = position * params.stride
            base_ids = np.concatenate(splits[first:first + params.window_size])
            for repeat in range(params.n_repeat):
                rng = step_rng(params.seed, round_no, position, repeat)
                partners = rng.integers(0, len(dataset), size=len(base_ids))
                copies = perturb(queries[base_ids], dataset.vectors[partners], params.noise_ratio)
                for i in rng.permutation(len(base_ids)):
                    entries.append(TraceEntry(window_step=step, base_query_id=int(base_ids[i]), query=copies[i]))
                step += 1

    logger.info(
        f"Trace: {len(entries)} queries over {step} window steps "
        f"(n_split={params.n_split}, window={params.window_size}, stride={params.stride}, eta={params.noise_ratio})"
    )
    return WorkloadTrace(entries, dim=queries.shape[1])


def _entry_dtype(dim: int) -> np.dtype:
    return np.dtype([("step", "<u4"), ("base", "<u4"), ("query", "<f4", (dim,))])


def trace_to_bytes(trace: WorkloadTrace) -> bytes:
    records = np.empty(len(trace), dtype=_entry_dtype(trace.dim))
    for i, entry in enumerate(trace):
        records[i] = (entry.window_step, entry.base_query_id, entry.query)
    return _HEADER.pack(TRACE_MAGIC, TRACE_VERSION, trace.dim, len(trace)) + records.tobytes()


def trace_from_bytes(data: bytes, path: str = "<bytes>") -> WorkloadTrace:
    if len(data) < _HEADER.size:
        raise VectorFormatError(path, 0, "truncated trace header")
    magic, version, dim, count = _HEADER.unpack_from(data, 0)
    if magic != TRACE_MAGIC:
        raise VectorFormatError(path, 0, f"bad magic {magic!r}")
    if version != TRACE_VERSION:
        raise VectorFormatError(path, 4, f"unsupported trace version {version}")
    dtype = _entry_dtype(dim)
    expected = _HEADER.size + count * dtype.itemsize
    if len(data) != expected:
        raise VectorFormatError(path, min(len(data), expected), f"expected {expected} bytes, got {len(data)}")
    records = np.frombuffer(data, dtype=dtype, count=count, offset=_HEADER.size)
    entries = [
        TraceEntry(
            window_step=int(rec["step"]),
            base_query_id=int(rec["base"]),
            query=np.array(rec["query"], dtype=np.float32),
        )
        for rec in records
    ]
    try:
        return WorkloadTrace(entries, dim=dim)
    except ValueError as e:
        raise VectorFormatError(path, _HEADER.size, str(e)) from e


def save_trace(path: Union[str, Path], trace: WorkloadTrace):
    Path(path).write_bytes(trace_to_bytes(trace))


def load_trace(path: Union[str, Path]) -> WorkloadTrace:
    return trace_from_bytes(Path(path).read_bytes(), path=str(path))
