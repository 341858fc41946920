import json
import os
import time
import uuid
from concurrent.futures import Executor, ProcessPoolExecutor
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List

from app import __version__
from app.core.models import Artifact, Job
from app.pipelines.additivity import run_additivity_pipeline
from app.pipelines.common import write_json
from app.pipelines.embedding import run_embedding_pipeline
from app.pipelines.phi import run_phi_pipeline
from app.pipelines.phibar import run_phibar_pipeline
from app.pipelines.scaling import run_scaling_pipeline
from app.pipelines.vanishing import run_vanishing_pipeline
from app.storage import db
from app.utils.config import ExperimentConfig, config_hash, config_to_dict, validate_config
from app.utils.logging import get_logger, log_event
from app.utils.provider import resolve_workers

LOGGER = get_logger("core.job_manager")

MANIFEST_NAME = "manifest.json"

Pipeline = Callable[[str, ExperimentConfig, str, Executor | None], List[Dict[str, Any]]]

PIPELINES: Dict[str, Pipeline] = {
    "phi": run_phi_pipeline,
    "phibar": run_phibar_pipeline,
    "vanishing": run_vanishing_pipeline,
    "scaling": run_scaling_pipeline,
    "additivity": run_additivity_pipeline,
    "embedding": run_embedding_pipeline,
}


def run_name_for(config: ExperimentConfig) -> str:
    return f"{config.experiment}_{config_hash(config)[:12]}"


class JobManager:
    def __init__(self, output_dir: str) -> None:
        self.output_dir = output_dir
        self.db_path = db.db_path_for(output_dir)
        os.makedirs(output_dir, exist_ok=True)
        db.init_db(self.db_path)

    def get_job(self, job_id: str) -> Job | None:
        row = db.fetch_run(self.db_path, job_id)
        if not row:
            return None
        return Job(
            id=row["id"],
            experiment=row["experiment"],
            status=row["status"],
            config_hash=row["config_hash"],
            started_at=datetime.fromisoformat(row["started_at"]) if row["started_at"] else None,
            finished_at=datetime.fromisoformat(row["finished_at"]) if row["finished_at"] else None,
            error=row["error"],
        )

    def list_artifacts(self, job_id: str) -> List[Artifact]:
        rows = db.fetch_artifacts(self.db_path, job_id)
        return [
            Artifact(job_id, row["type"], row["path"], json.loads(row["metadata"]) if row["metadata"] else {})
            for row in rows
        ]

    def run(self, config: ExperimentConfig, workers: int | None = None) -> Job:
        """Run one experiment to completion; errors are recorded then re-raised."""
        validate_config(config)
        pipeline = PIPELINES[config.experiment]
        digest = config_hash(config)
        job_id = str(uuid.uuid4())
        run_name = run_name_for(config)
        workers = resolve_workers(workers)
        db.insert_run(self.db_path, job_id, config.experiment, digest)
        log_event(LOGGER, "pipeline_start", job_id=job_id, pipeline=config.experiment, workers=workers)

        started = time.perf_counter()
        try:
            if workers == 1:
                artifacts = pipeline(run_name, config, self.output_dir, None)
            else:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    artifacts = pipeline(run_name, config, self.output_dir, pool)
        except Exception as exc:
            db.insert_artifact(self.db_path, job_id, f"error_{config.experiment}", "", {"error": str(exc)})
            db.update_run(self.db_path, job_id, "failed", error=f"{type(exc).__name__}: {exc}")
            log_event(LOGGER, "pipeline_failed", job_id=job_id, pipeline=config.experiment, error=str(exc))
            raise
        wall_time = time.perf_counter() - started

        for artifact in artifacts:
            db.insert_artifact(self.db_path, job_id, artifact["type"], artifact["path"], artifact["metadata"])
        manifest = self._write_manifest(job_id, run_name, config, digest, workers, wall_time, artifacts)
        db.insert_artifact(self.db_path, job_id, "manifest", manifest, {"config_hash": digest})
        db.update_run(self.db_path, job_id, "completed")
        log_event(LOGGER, "pipeline_done", job_id=job_id, pipeline=config.experiment, wall_time=round(wall_time, 3))
        job = self.get_job(job_id)
        assert job is not None
        return job

    def _write_manifest(
        self,
        job_id: str,
        run_name: str,
        config: ExperimentConfig,
        digest: str,
        workers: int,
        wall_time: float,
        artifacts: List[Dict[str, Any]],
    ) -> str:
        payload = {
            "run_id": job_id,
            "run_name": run_name,
            "experiment": config.experiment,
            "config_hash": digest,
            "seed": config.sampling.seed,
            "version": __version__,
            "workers": workers,
            "wall_time_seconds": wall_time,
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "config": config_to_dict(config),
            "artifacts": [{"type": a["type"], "path": os.path.basename(a["path"])} for a in artifacts],
        }
        return write_json(os.path.join(self.output_dir, MANIFEST_NAME), payload)
