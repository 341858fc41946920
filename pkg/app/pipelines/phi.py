import os
from concurrent.futures import Executor
from typing import Any, Dict, List

import numpy as np

from app.pipelines.common import (
    artifact_path,
    options_from_config,
    quasimorphism_from_config,
    stamp,
    system_from_config,
    truncation_from_config,
    write_jsonl,
)
from app.services.braid_trace import build_loops, dump_scene
from app.services.gg_estimator import estimate_phi
from app.services.ham_dynamics import DiffeoTrace
from app.services.sphere_geom import uniform_sample
from app.utils.config import ExperimentConfig, config_hash
from app.utils.logging import get_logger, log_event, log_warning
from app.utils.validation import GGError

LOGGER = get_logger("pipelines.phi")


def _write_scene(run_name: str, config: ExperimentConfig, f: DiffeoTrace, output_dir: str) -> List[str]:
    """Strand polylines of one seeded sample, for external plotting."""
    sampling = config.sampling
    rng = np.random.default_rng([sampling.seed, 99])
    x = uniform_sample(rng, sampling.n, sampling.collision_tol).points
    z = uniform_sample(rng, sampling.n, sampling.collision_tol).points
    try:
        loops = build_loops(f, x, z, sampling.collision_tol)
    except GGError as exc:
        log_warning(LOGGER, "scene_skipped", run=run_name, error=str(exc))
        return []
    directory = artifact_path(output_dir, run_name, "scene")
    return dump_scene(loops, directory, sampling.time_steps, config.integrator.record_every, config_hash(config))


def run_phi_pipeline(
    run_name: str,
    config: ExperimentConfig,
    output_dir: str,
    pool: Executor | None = None,
) -> List[Dict[str, Any]]:
    f = system_from_config(config)
    q = quasimorphism_from_config(config)
    sampling = config.sampling
    estimate = estimate_phi(
        f,
        q,
        sampling.n,
        sampling.N,
        truncation_from_config(config),
        sampling.seed,
        options_from_config(config),
        pool,
    )
    log_event(LOGGER, "phi_estimated", run=run_name, value=estimate.value, stderr=estimate.stderr)
    path = write_jsonl(
        artifact_path(output_dir, run_name, "estimates.jsonl"),
        [stamp(config, {"preset": config.system.preset, **estimate.to_record()})],
    )
    artifacts = [{"type": "estimates", "path": path, "metadata": {"value": estimate.value, "stderr": estimate.stderr}}]
    scene = _write_scene(run_name, config, f, output_dir)
    if scene:
        artifacts.append({"type": "scene", "path": os.path.dirname(scene[0]), "metadata": {"strands": len(scene)}})
    return artifacts
