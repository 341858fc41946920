import csv
import json
import os
from typing import Any, Dict, Iterable, List

import numpy as np

from app.core.models import TruncationMode
from app.services.gg_estimator import SamplingOptions
from app.services.ham_dynamics import DiffeoTrace, compose, identity_trace, twist_map
from app.services.norm_bounds import build_embedding, evaluate_J
from app.services.quasimorphism import (
    QuasimorphismSpec,
    empirical_defect,
    pure_pair_sampler,
    resolve_quasimorphism,
    word_pair_sampler,
)
from app.services.sphere_geom import SphericalCap
from app.utils.config import ExperimentConfig, config_hash


def system_from_config(config: ExperimentConfig) -> DiffeoTrace:
    system = config.system
    step = config.integrator.step
    if system.preset == "identity":
        return identity_trace(step)
    if system.preset == "twist":
        cap = SphericalCap(np.asarray(system.center, dtype=float), system.area)
        return compose([twist_map(cap, system.strength)], [1], step)
    embedding = config.embedding
    spec = build_embedding(embedding.m, embedding.area, embedding.strength, step=step)
    k = system.k or (1,) + (0,) * (embedding.m - 1)
    return evaluate_J(spec, k, budget=embedding.max_l1)


def options_from_config(config: ExperimentConfig) -> SamplingOptions:
    sampling = config.sampling
    return SamplingOptions(
        batch_size=sampling.batch_size,
        time_steps=sampling.time_steps,
        collision_tol=sampling.collision_tol,
        retry_cap=sampling.retry_cap,
        stratified=sampling.stratified,
    )


def quasimorphism_from_config(config: ExperimentConfig) -> QuasimorphismSpec:
    return resolve_quasimorphism(config.estimator.quasimorphism, config.estimator.p_schedule)


def truncation_from_config(config: ExperimentConfig) -> TruncationMode:
    return TruncationMode(config.estimator.truncation)


def sampled_defect(config: ExperimentConfig, q: QuasimorphismSpec) -> float:
    """Empirical defect lower bound of q on random word pairs (0 for homomorphisms)."""
    if q.exact_defect:
        return 0.0
    embedding = config.embedding
    n = config.sampling.n
    if q.name.startswith("linking"):
        sampler = pure_pair_sampler(n, embedding.defect_word_length)
    else:
        sampler = word_pair_sampler(n, embedding.defect_word_length)
    rng = np.random.default_rng([config.sampling.seed, 7])
    return empirical_defect(q, sampler, embedding.defect_trials, rng)


def stamp(config: ExperimentConfig, record: Dict[str, Any]) -> Dict[str, Any]:
    return {"experiment": config.experiment, "config_hash": config_hash(config), **record}


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, ensure_ascii=True, sort_keys=True) + "\n")
    return path


def write_json(path: str, payload: Dict[str, Any]) -> str:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, ensure_ascii=True, indent=2, sort_keys=True)
        handle.write("\n")
    return path


def write_csv(path: str, columns: List[str], rows: Iterable[Dict[str, Any]]) -> str:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: row[key] for key in columns})
    return path


def artifact_path(output_dir: str, run_name: str, suffix: str) -> str:
    return os.path.join(output_dir, f"{run_name}_{suffix}")
