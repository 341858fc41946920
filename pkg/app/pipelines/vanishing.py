from concurrent.futures import Executor
from typing import Any, Dict, List

from app.pipelines.common import artifact_path, options_from_config, stamp, system_from_config, write_json
from app.services.gg_estimator import vanishing_experiment
from app.utils.config import ExperimentConfig
from app.utils.logging import get_logger, log_event

LOGGER = get_logger("pipelines.vanishing")

REDUCIBLE_TARGET = 0.99


def run_vanishing_pipeline(
    run_name: str,
    config: ExperimentConfig,
    output_dir: str,
    pool: Executor | None = None,
) -> List[Dict[str, Any]]:
    f = system_from_config(config)
    sampling = config.sampling
    report = vanishing_experiment(f, sampling.n, sampling.N, sampling.seed, options_from_config(config), pool)
    record = report.to_record()
    record["passed"] = report.structural_violations == 0 and report.reducible_fraction >= REDUCIBLE_TARGET
    record["reducible_target"] = REDUCIBLE_TARGET
    log_event(LOGGER, "vanishing_reported", run=run_name, passed=record["passed"])
    path = write_json(artifact_path(output_dir, run_name, "report.json"), stamp(config, record))
    return [{"type": "report", "path": path, "metadata": {"passed": record["passed"]}}]
