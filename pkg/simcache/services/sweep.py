import logging
from typing import List

from simcache.schemas import BenchConfig, SweepConfig, SweepPoint, validated
from simcache.services.benchmark import BenchmarkRunner

logger = logging.getLogger(__name__)


def with_param(base: BenchConfig, param: str, value) -> BenchConfig:
    """Copy of `base` with one dotted field (e.g. "cache.deviation_factor") replaced."""
    section, _, name = param.partition(".")
    data = base.model_dump(mode="json")
    data[section][name] = value
    return validated(BenchConfig, data)


def run_sweep(sweep: SweepConfig) -> List[SweepPoint]:
    """
    Re-run the same workload once per value. The dataset is built once; the
    trace and ground truth are shared unless a workload field is swept, and
    the projector is shared unless a projector field is swept.
    """
    section = sweep.param.partition(".")[0]
    shared = BenchmarkRunner(sweep.base).prepare()

    points: List[SweepPoint] = []
    for value in sweep.values:
        config = with_param(sweep.base, sweep.param, value)
        runner = BenchmarkRunner(
            config,
            dataset=shared.dataset,
            queries=shared.queries,
            trace=None if section == "workload" else shared.trace,
            projector=None if section == "projector" else shared.projector,
            truth=None if section == "workload" else shared.truth,
        )
        report = runner.run()
        summary = report.summary
        logger.info(
            f"Sweep {sweep.param}={value}: hit ratio {summary.hit_ratio:.3f}, recall {summary.recall_at_k:.4f}"
        )
        points.append(SweepPoint(param=sweep.param, value=value, summary=summary))
    return points
