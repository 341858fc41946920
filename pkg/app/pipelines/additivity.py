from concurrent.futures import Executor
from typing import Any, Dict, List

from app.pipelines.common import (
    artifact_path,
    options_from_config,
    quasimorphism_from_config,
    stamp,
    truncation_from_config,
    write_json,
    write_jsonl,
)
from app.services.gg_estimator import additivity_experiment, check_disjoint
from app.services.norm_bounds import build_embedding, generator_trace
from app.utils.config import ExperimentConfig
from app.utils.logging import get_logger, log_event

LOGGER = get_logger("pipelines.additivity")


def run_additivity_pipeline(
    run_name: str,
    config: ExperimentConfig,
    output_dir: str,
    pool: Executor | None = None,
) -> List[Dict[str, Any]]:
    """Compare the composite of two antipodal twists with the sum of its parts."""
    embedding = config.embedding
    spec = build_embedding(2, embedding.area, embedding.strength, step=config.integrator.step)
    f1, f2 = generator_trace(spec, 0), generator_trace(spec, 1)
    margin = check_disjoint(f1.caps, f2.caps)
    sampling = config.sampling
    report = additivity_experiment(
        f1,
        f2,
        quasimorphism_from_config(config),
        sampling.n,
        sampling.N,
        config.estimator.p_schedule,
        sampling.seed,
        truncation_from_config(config),
        options_from_config(config),
        pool,
    )
    log_event(LOGGER, "additivity_reported", run=run_name, gap=report.gap, passed=report.passed)
    record = {"area": embedding.area, "support_margin": margin, **report.to_record()}
    report_path = write_json(artifact_path(output_dir, run_name, "report.json"), stamp(config, record))
    rows = [
        stamp(config, {"map": label, **estimate.to_record()})
        for label, estimate in (
            ("first", report.phi_first),
            ("second", report.phi_second),
            ("composite", report.phi_composite),
        )
    ]
    estimates_path = write_jsonl(artifact_path(output_dir, run_name, "estimates.jsonl"), rows)
    return [
        {"type": "report", "path": report_path, "metadata": {"passed": report.passed, "gap": report.gap}},
        {"type": "estimates", "path": estimates_path, "metadata": {"maps": len(rows)}},
    ]
