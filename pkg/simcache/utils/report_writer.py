import csv
import json
import logging
from pathlib import Path
from typing import Dict, List, Union

from simcache.schemas import BenchReport, StepMetrics, SweepPoint

logger = logging.getLogger(__name__)

STEP_COLUMNS = list(StepMetrics.model_fields)


def write_steps_csv(path: Union[str, Path], steps: List[StepMetrics]):
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=STEP_COLUMNS)
        writer.writeheader()
        for step in steps:
            writer.writerow(step.model_dump())


def write_report(prefix: Union[str, Path], report: BenchReport) -> Dict[str, str]:
    """
    Write <prefix>.csv (one row per window step), <prefix>.json (config echo
    and run aggregates) and <prefix>.baseline.csv when a baseline ran.
    """
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    written = {"steps": str(prefix.with_name(prefix.name + ".csv"))}
    write_steps_csv(written["steps"], report.steps)

    sidecar = report.model_dump(mode="json", exclude={"steps", "baseline_steps"})
    written["summary"] = str(prefix.with_name(prefix.name + ".json"))
    with open(written["summary"], "w") as f:
        json.dump(sidecar, f, indent=2)

    if report.baseline_steps is not None:
        written["baseline"] = str(prefix.with_name(prefix.name + ".baseline.csv"))
        write_steps_csv(written["baseline"], report.baseline_steps)

    logger.info(f"Report written to {', '.join(written.values())}")
    return written


def write_sweep(prefix: Union[str, Path], points: List[SweepPoint]) -> Dict[str, str]:
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = str(prefix.with_name(prefix.name + ".csv"))
    json_path = str(prefix.with_name(prefix.name + ".json"))

    rows = [{"param": p.param, "value": p.value, **p.summary.model_dump()} for p in points]
    with open(csv_path, "w", newline="") as f:
        if rows:
            writer = csv.DictWriter(f, fieldnames=list(rows[0]))
            writer.writeheader()
            writer.writerows(rows)
    with open(json_path, "w") as f:
        json.dump([p.model_dump(mode="json") for p in points], f, indent=2)
    return {"points": csv_path, "summary": json_path}
