"""
Command-line harness: train-pca, gen-trace, gen-synthetic, ground-truth, run, sweep.

    python -m simcache.main run --synthetic --deterministic --output-prefix results/run
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from simcache import config
from simcache.exceptions import ConfigError, SimCacheError
from simcache.schemas import (
    BenchConfig,
    ProjectorSettings,
    SweepConfig,
    SyntheticSpec,
    WorkloadParams,
    validated,
)
from simcache.services.benchmark import BenchmarkRunner, ground_truth
from simcache.services.dataset_io import generate_synthetic, load_vectors, read_bvecs, read_fvecs, write_fvecs, write_ivecs
from simcache.services.pca_trainer import train_from_dataset
from simcache.services.sweep import run_sweep
from simcache.services.workload_gen import generate_trace, load_trace, save_trace
from simcache.utils.report_writer import write_report, write_sweep

logger = logging.getLogger(__name__)


def _read_queries(path: str) -> np.ndarray:
    reader = read_bvecs if path.endswith(".bvecs") else read_fvecs
    return reader(path).astype(np.float32)


def _load_json(path: Optional[str]) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object", fields=["config"])
    return data


def _set(data: dict, dotted: str, value):
    """Assign into nested dicts only when the flag was given."""
    if value is None:
        return
    *parents, leaf = dotted.split(".")
    node = data
    for part in parents:
        node = node.setdefault(part, {})
    node[leaf] = value


def _parse_values(text: str) -> list:
    values = []
    for raw in text.split(","):
        raw = raw.strip()
        try:
            values.append(json.loads(raw))
        except json.JSONDecodeError:
            values.append(raw)
    return values


def cmd_train_pca(args) -> int:
    settings = validated(ProjectorSettings, {
        k: v for k, v in {
            "sample_ratio": args.sample_ratio,
            "d_reduced": args.d_reduced,
            "n_buckets": args.n_buckets,
            "seed": args.seed,
            "global_threshold": args.global_threshold,
        }.items() if v is not None
    })
    dataset = load_vectors(args.input)
    projector = train_from_dataset(dataset, settings)
    projector.save(args.output)
    print(f"Projector {projector.d_reduced}x{projector.dim_in}, {projector.n_buckets} buckets -> {args.output}", flush=True)
    return 0


def cmd_gen_trace(args) -> int:
    params = validated(WorkloadParams, {
        k: v for k, v in {
            "noise_ratio": args.eta,
            "n_split": args.n_split,
            "window_size": args.window_size,
            "stride": args.stride,
            "n_repeat": args.n_repeat,
            "n_round": args.n_round,
            "seed": args.seed,
        }.items() if v is not None
    })
    dataset = load_vectors(args.dataset)
    trace = generate_trace(_read_queries(args.queries), dataset, params)
    save_trace(args.output, trace)
    print(f"Trace: {len(trace)} queries, {trace.n_steps} window steps -> {args.output}", flush=True)
    return 0


def cmd_gen_synthetic(args) -> int:
    stds = [float(s) for s in args.cluster_stds.split(",")] if args.cluster_stds else None
    spec = validated(SyntheticSpec, {
        k: v for k, v in {
            "n": args.n,
            "dim": args.dim,
            "clusters": args.clusters,
            "std": args.std,
            "center_spread": args.center_spread,
            "cluster_stds": stds,
            "queries": args.queries,
            "seed": args.seed,
        }.items() if v is not None
    })
    dataset, queries = generate_synthetic(spec)
    write_fvecs(args.output, dataset.vectors)
    print(f"Dataset: {len(dataset)} x {dataset.dim} -> {args.output}", flush=True)
    if len(queries):
        queries_path = args.queries_output or str(Path(args.output).with_suffix("")) + ".queries.fvecs"
        write_fvecs(queries_path, queries)
        print(f"Queries: {len(queries)} -> {queries_path}", flush=True)
    return 0


def cmd_ground_truth(args) -> int:
    dataset = load_vectors(args.dataset)
    trace = load_trace(args.trace)
    truth = ground_truth(dataset, trace, args.k)
    rows = np.array([truth[p] for p in range(len(trace))], dtype=np.int32).reshape(len(trace), args.k)
    write_ivecs(args.output, rows)
    print(f"Ground truth: {len(rows)} x {args.k} -> {args.output}", flush=True)
    return 0


def _bench_config(args) -> BenchConfig:
    data = _load_json(args.config)
    _set(data, "dataset_path", args.dataset)
    _set(data, "queries_path", args.queries)
    _set(data, "trace_path", args.trace)
    _set(data, "projector_path", args.projector)
    _set(data, "backend", args.backend)
    _set(data, "k", args.k)
    _set(data, "concurrency", args.concurrency)
    _set(data, "output_prefix", args.output_prefix)
    if args.synthetic and "synthetic" not in data:
        data["synthetic"] = {}
    if args.no_cache:
        data["no_cache"] = True
    if args.baseline:
        data["baseline"] = True
    if args.deterministic:
        _set(data, "cache.deterministic_mode", True)
    return validated(BenchConfig, data)


def cmd_run(args) -> int:
    bench = _bench_config(args)
    report = BenchmarkRunner(bench).run()
    prefix = bench.output_prefix or os.path.join(config.OUTPUT_DIR, "run")
    written = write_report(prefix, report)

    s = report.summary
    print(f"Queries: {s.total_queries}  hit ratio: {s.hit_ratio:.3f}  recall@{bench.k}: {s.recall_at_k:.4f}", flush=True)
    print(f"p50 hit/miss/all (ms): {_ms(s.hit_latency_p50)} / {_ms(s.miss_latency_p50)} / {_ms(s.overall_latency_p50)}", flush=True)
    print(f"Evictions: {s.evictions}  fetched: {s.vectors_fetched}  working set: {s.working_set_estimate}  capacity: {s.total_capacity}", flush=True)
    for path in written.values():
        print(f"Wrote {path}", flush=True)
    return 0


def cmd_sweep(args) -> int:
    base = _load_json(args.config)
    if args.deterministic:
        _set(base, "cache.deterministic_mode", True)
    sweep = validated(SweepConfig, {"base": base, "param": args.param, "values": _parse_values(args.values)})
    points = run_sweep(sweep)
    prefix = args.output or os.path.join(config.OUTPUT_DIR, "sweep")
    written = write_sweep(prefix, points)
    for p in points:
        print(f"{p.param}={p.value}: hit ratio {p.summary.hit_ratio:.3f}  recall {p.summary.recall_at_k:.4f}", flush=True)
    for path in written.values():
        print(f"Wrote {path}", flush=True)
    return 0


def _ms(seconds: Optional[float]) -> str:
    return "-" if seconds is None else f"{seconds * 1000:.3f}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="simcache", description="Similarity-aware ANN query cache benchmark")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-pca", help="train the region-key projector")
    p.add_argument("--input", required=True)
    p.add_argument("--sample-ratio", type=float)
    p.add_argument("--d-reduced", type=int)
    p.add_argument("--n-buckets", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--global", dest="global_threshold", action="store_true", default=None,
                   help="single region (d_reduced=1, n_buckets=1)")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train_pca)

    p = sub.add_parser("gen-trace", help="generate a sliding-window workload trace")
    p.add_argument("--queries", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--eta", type=float)
    p.add_argument("--n-split", type=int)
    p.add_argument("--window-size", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--n-repeat", type=int)
    p.add_argument("--n-round", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("gen-synthetic", help="write a Gaussian-mixture dataset as fvecs")
    p.add_argument("--n", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--clusters", type=int)
    p.add_argument("--std", type=float)
    p.add_argument("--center-spread", type=float)
    p.add_argument("--cluster-stds", help="comma-separated std per cluster")
    p.add_argument("--queries", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", required=True)
    p.add_argument("--queries-output")
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("ground-truth", help="exact top-k ids for every trace query")
    p.add_argument("--dataset", required=True)
    p.add_argument("--trace", required=True)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_ground_truth)

    p = sub.add_parser("run", help="replay a trace through the cache")
    p.add_argument("--config", help="BenchConfig JSON; flags override")
    p.add_argument("--dataset")
    p.add_argument("--queries")
    p.add_argument("--synthetic", action="store_true", help="use the default synthetic mixture")
    p.add_argument("--trace")
    p.add_argument("--projector")
    p.add_argument("--backend", help="exact or delayed:<search_ms>:<fetch_ms>")
    p.add_argument("--k", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--no-cache", action="store_true")
    p.add_argument("--baseline", action="store_true", help="also run a cache-disabled pass")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--output-prefix")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="vary one config field across values")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help="dotted field, e.g. cache.deviation_factor")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--deterministic", action="store_true")
    p.add_argument("--output")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    config.configure_logging(args.verbose)
    try:
        return args.func(args)
    except SimCacheError as e:
        print(f"error: {e}", file=sys.stderr, flush=True)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr, flush=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())
