import json
import os
import sqlite3
from datetime import datetime, timezone
from typing import Any, Dict, Iterable

DB_NAME = "runs.db"


def db_path_for(output_dir: str) -> str:
    return os.path.join(output_dir, DB_NAME)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _connect(db_path: str) -> sqlite3.Connection:
    conn = sqlite3.connect(db_path)
    conn.row_factory = sqlite3.Row
    return conn


def init_db(db_path: str) -> None:
    os.makedirs(os.path.dirname(db_path) or ".", exist_ok=True)
    conn = _connect(db_path)
    cur = conn.cursor()
    cur.execute(
        """
        CREATE TABLE IF NOT EXISTS runs (
            id TEXT PRIMARY KEY,
            experiment TEXT NOT NULL,
            status TEXT NOT NULL,
            config_hash TEXT NOT NULL,
            started_at TEXT,
            finished_at TEXT,
            error TEXT
        )
        """
    )
    cur.execute(
        """
        CREATE TABLE IF NOT EXISTS artifacts (
            run_id TEXT NOT NULL,
            type TEXT NOT NULL,
            path TEXT NOT NULL,
            metadata TEXT,
            FOREIGN KEY(run_id) REFERENCES runs(id)
        )
        """
    )
    conn.commit()
    conn.close()


def execute(db_path: str, query: str, params: Iterable[Any] = ()) -> None:
    conn = _connect(db_path)
    cur = conn.cursor()
    cur.execute(query, tuple(params))
    conn.commit()
    conn.close()


def fetch_one(db_path: str, query: str, params: Iterable[Any] = ()) -> sqlite3.Row | None:
    conn = _connect(db_path)
    cur = conn.cursor()
    cur.execute(query, tuple(params))
    row = cur.fetchone()
    conn.close()
    return row


def insert_run(db_path: str, run_id: str, experiment: str, config_hash: str) -> None:
    execute(
        db_path,
        "INSERT INTO runs (id, experiment, status, config_hash, started_at) VALUES (?, ?, ?, ?, ?)",
        (run_id, experiment, "running", config_hash, _now()),
    )


def update_run(db_path: str, run_id: str, status: str, error: str | None = None) -> None:
    execute(
        db_path,
        "UPDATE runs SET status = ?, error = ?, finished_at = ? WHERE id = ?",
        (status, error, _now(), run_id),
    )


def insert_artifact(db_path: str, run_id: str, artifact_type: str, path: str, metadata: Dict[str, Any]) -> None:
    execute(
        db_path,
        "INSERT INTO artifacts (run_id, type, path, metadata) VALUES (?, ?, ?, ?)",
        (run_id, artifact_type, path, json.dumps(metadata, ensure_ascii=True, sort_keys=True)),
    )


def fetch_run(db_path: str, run_id: str) -> sqlite3.Row | None:
    return fetch_one(db_path, "SELECT * FROM runs WHERE id = ?", (run_id,))


def fetch_artifacts(db_path: str, run_id: str) -> list[sqlite3.Row]:
    conn = _connect(db_path)
    cur = conn.cursor()
    cur.execute("SELECT * FROM artifacts WHERE run_id = ? ORDER BY rowid ASC", (run_id,))
    rows = cur.fetchall()
    conn.close()
    return rows
