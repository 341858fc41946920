from concurrent.futures import Executor
from typing import Any, Dict, List

from app.pipelines.common import (
    artifact_path,
    options_from_config,
    quasimorphism_from_config,
    stamp,
    system_from_config,
    truncation_from_config,
    write_csv,
    write_json,
    write_jsonl,
)
from app.services.gg_estimator import shrink_to_budget, scaling_experiment
from app.utils.config import ExperimentConfig, config_hash
from app.utils.logging import get_logger, log_event

LOGGER = get_logger("pipelines.scaling")

FIT_COLUMNS = ["epsilon", "phibar", "stderr", "fitted_model_value", "residual", "config_hash"]


def run_scaling_pipeline(
    run_name: str,
    config: ExperimentConfig,
    output_dir: str,
    pool: Executor | None = None,
) -> List[Dict[str, Any]]:
    f = system_from_config(config)
    q = quasimorphism_from_config(config)
    sampling = config.sampling
    estimator = config.estimator
    fit = scaling_experiment(
        f,
        q,
        sampling.n,
        estimator.eps_grid,
        sampling.N,
        estimator.p_schedule,
        sampling.seed,
        truncation_from_config(config),
        options_from_config(config),
        pool,
    )
    choice = shrink_to_budget(fit, config.embedding.m)
    log_event(LOGGER, "budget_chosen", run=run_name, epsilon=choice.epsilon, branch=choice.branch)

    digest = config_hash(config)
    fit_path = write_csv(
        artifact_path(output_dir, run_name, "fit.csv"),
        FIT_COLUMNS,
        [{**row, "config_hash": digest} for row in fit.rows()],
    )
    estimates_path = write_jsonl(
        artifact_path(output_dir, run_name, "estimates.jsonl"),
        [stamp(config, {"epsilon": eps, **estimate.to_record()}) for eps, estimate in zip(fit.eps_grid, fit.estimates)],
    )
    summary = {
        "n": fit.n,
        "area": fit.area,
        "A": fit.A,
        "B": fit.B,
        "sigma_A": fit.sigma_A,
        "sigma_B": fit.sigma_B,
        "residual": fit.residual,
        "loglog_slope": fit.loglog_slope,
        "budget": {"m": config.embedding.m, "epsilon": choice.epsilon, "value": choice.value, "branch": choice.branch},
    }
    if q.is_synthetic:
        a = fit.area
        summary["closed_form"] = {"A": a**fit.n, "B": q.stand_in * a ** (fit.n - 1)}
    report_path = write_json(artifact_path(output_dir, run_name, "report.json"), stamp(config, summary))
    return [
        {"type": "fit", "path": fit_path, "metadata": {"A": fit.A, "B": fit.B}},
        {"type": "estimates", "path": estimates_path, "metadata": {"points": len(fit.eps_grid)}},
        {"type": "report", "path": report_path, "metadata": {"branch": choice.branch}},
    ]
