import json

import pytest

from app.core.job_manager import MANIFEST_NAME, JobManager, run_name_for
from app.services.gg_estimator import NoSupportDeclared
from app.storage import db
from app.utils.config import config_from_dict


@pytest.fixture
def config(tmp_path):
    return config_from_dict(
        {
            "experiment": "vanishing",
            "system": {"preset": "twist", "area": 0.1},
            "sampling": {"N": 60, "n": 4, "time_steps": 16},
            "output": str(tmp_path / "out"),
        }
    )


def test_run_records_ledger_and_manifest(config):
    manager = JobManager(config.output)
    job = manager.run(config, workers=1)
    assert job.status == "completed"
    assert job.experiment == "vanishing"
    types = [artifact.type for artifact in manager.list_artifacts(job.id)]
    assert types == ["report", "manifest"]
    with open(f"{config.output}/{MANIFEST_NAME}", encoding="utf-8") as handle:
        manifest = json.load(handle)
    assert manifest["run_name"] == run_name_for(config)
    assert manifest["artifacts"] == [{"type": "report", "path": f"{run_name_for(config)}_report.json"}]
    assert manifest["wall_time_seconds"] >= 0.0


def test_failed_runs_are_recorded(tmp_path):
    config = config_from_dict(
        {
            "experiment": "vanishing",
            "system": {"preset": "identity"},
            "sampling": {"N": 10},
            "output": str(tmp_path / "out"),
        }
    )
    manager = JobManager(config.output)
    with pytest.raises(NoSupportDeclared):
        manager.run(config, workers=1)
    row = db.fetch_one(manager.db_path, "SELECT id, status, error FROM runs")
    assert row["status"] == "failed"
    assert "NoSupportDeclared" in row["error"]
    assert [a.type for a in manager.list_artifacts(row["id"])] == ["error_vanishing"]
    assert manager.get_job("missing") is None
