from concurrent.futures import Executor
from typing import Any, Dict, List

from app.pipelines.common import (
    artifact_path,
    options_from_config,
    quasimorphism_from_config,
    stamp,
    system_from_config,
    truncation_from_config,
    write_jsonl,
)
from app.services.gg_estimator import estimate_phi_bar
from app.utils.config import ExperimentConfig
from app.utils.logging import get_logger, log_event

LOGGER = get_logger("pipelines.phibar")


def run_phibar_pipeline(
    run_name: str,
    config: ExperimentConfig,
    output_dir: str,
    pool: Executor | None = None,
) -> List[Dict[str, Any]]:
    """Homogenized average of f and of f^2; the second row checks homogeneity."""
    f = system_from_config(config)
    q = quasimorphism_from_config(config)
    sampling = config.sampling
    options = options_from_config(config)
    mode = truncation_from_config(config)
    schedule = config.estimator.p_schedule
    records = []
    metadata: Dict[str, Any] = {}
    for power, trace in ((1, f), (2, f.then(f))):
        estimate = estimate_phi_bar(trace, q, sampling.n, sampling.N, schedule, mode, sampling.seed, options, pool)
        log_event(LOGGER, "phibar_estimated", run=run_name, power=power, value=estimate.value, stderr=estimate.stderr)
        records.append(stamp(config, {"preset": config.system.preset, "power": power, **estimate.to_record()}))
        metadata[f"power_{power}"] = {"value": estimate.value, "stderr": estimate.stderr}
    first, second = metadata["power_1"], metadata["power_2"]
    combined = (second["stderr"] ** 2 + 4.0 * first["stderr"] ** 2) ** 0.5
    metadata["homogeneity_gap"] = second["value"] - 2.0 * first["value"]
    metadata["homogeneity_passed"] = abs(metadata["homogeneity_gap"]) <= max(3.0 * combined, 1e-12)
    path = write_jsonl(artifact_path(output_dir, run_name, "estimates.jsonl"), records)
    return [{"type": "estimates", "path": path, "metadata": metadata}]
