"""Embedding experiment: quasimorphism matrix, defects and sandwich certificates."""

from concurrent.futures import Executor
from dataclasses import replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from app.core.models import GGEstimate, TruncationMode
from app.pipelines.common import (
    artifact_path,
    options_from_config,
    quasimorphism_from_config,
    sampled_defect,
    stamp,
    write_json,
    write_jsonl,
)
from app.services.braid_trace import default_pole
from app.services.gg_estimator import QuasimorphismMatrix, estimate_matrix, estimate_phi_bar
from app.services.norm_bounds import (
    DEFECT_CAVEAT,
    MissingEstimate,
    bilipschitz_ratio,
    build_embedding,
    certify,
    evaluate_J,
    generator_trace,
)
from app.utils.config import ExperimentConfig, l1_grid
from app.utils.logging import get_logger, log_event, log_warning

LOGGER = get_logger("pipelines.embedding")


def default_k_grid(m: int) -> List[Tuple[int, ...]]:
    units = [tuple(1 if j == i else 0 for j in range(m)) for i in range(m)]
    if m > 1:
        units.append((1,) * m)
    return units


def normalize_matrix(matrix: QuasimorphismMatrix) -> Tuple[QuasimorphismMatrix, np.ndarray]:
    """Scale row i by 1/M_ii so each quasimorphism is 1 on its own generator."""
    diag = np.diag(matrix.values).copy()
    for i, value in enumerate(diag):
        if value == 0.0 or abs(value) <= 3.0 * matrix.stderr[i, i]:
            raise MissingEstimate(f"generator {i + 1} has no resolvable value on its own cap ({value:.3e})")
    values = matrix.values / diag[:, None]
    stderr = matrix.stderr / np.abs(diag)[:, None]
    return QuasimorphismMatrix(values, stderr, matrix.estimates), diag


def _normalized(estimate: GGEstimate, scale: float) -> GGEstimate:
    return replace(estimate, value=estimate.value / scale, stderr=estimate.stderr / abs(scale))


def formula_grid(m: int, max_l1: int, bound_d: float) -> Dict[str, Any]:
    """Closed-form certificates over every k with |k|_1 <= max_l1."""
    rows = {}
    for k in l1_grid(m, max_l1):
        l1 = sum(abs(v) for v in k)
        rows[k] = {"k": list(k), "upper": float(l1), "lower": l1 / (m * bound_d) if bound_d > 0 else None}
    ordered = all(r["lower"] is None or r["lower"] <= r["upper"] for r in rows.values())
    linear = True
    for k, row in rows.items():
        doubled = rows.get(tuple(2 * v for v in k))
        if doubled is None:
            continue
        linear &= doubled["upper"] == 2.0 * row["upper"]
        if row["lower"] is not None:
            linear &= doubled["lower"] == 2.0 * row["lower"]
    return {"max_l1": max_l1, "rows": list(rows.values()), "ordered": ordered, "linear": linear}


def linkage(matrix: QuasimorphismMatrix, k: Sequence[int], estimates: Sequence[GGEstimate]) -> Dict[str, Any]:
    """Measured values on J(k) against the linear prediction M k."""
    kv = np.asarray(k, dtype=float)
    predicted = matrix.values @ kv
    predicted_err = np.sqrt((matrix.stderr**2) @ (kv**2))
    measured = np.asarray([e.value for e in estimates])
    measured_err = np.asarray([e.stderr for e in estimates])
    gap = measured - predicted
    tolerance = np.maximum(3.0 * np.sqrt(measured_err**2 + predicted_err**2), 1e-12)
    return {
        "predicted": predicted.tolist(),
        "measured": measured.tolist(),
        "gap": gap.tolist(),
        "passed": bool(np.all(np.abs(gap) <= tolerance)),
    }


def run_embedding_pipeline(
    run_name: str,
    config: ExperimentConfig,
    output_dir: str,
    pool: Executor | None = None,
) -> List[Dict[str, Any]]:
    embedding = config.embedding
    sampling = config.sampling
    schedule = config.estimator.p_schedule
    spec = build_embedding(embedding.m, embedding.area, embedding.strength, step=config.integrator.step)
    q = quasimorphism_from_config(config)
    options = options_from_config(config)
    options = replace(options, pole=default_pole(spec.caps))

    defect_q = sampled_defect(config, q)
    generators = [generator_trace(spec, i) for i in range(spec.m)]
    raw = estimate_matrix(generators, spec.caps, q, sampling.n, sampling.N, schedule, sampling.seed, options, pool)
    matrix, diag = normalize_matrix(raw)
    defects = [2.0 * defect_q / abs(d) for d in diag]
    spec.quasimorphisms = [f"{q.name}@cap{i + 1}" for i in range(spec.m)]
    spec.defects = {name: d for name, d in zip(spec.quasimorphisms, defects)}
    log_event(
        LOGGER,
        "embedding_matrix",
        run=run_name,
        defect=defect_q,
        condition=matrix.condition,
        near_diagonal=matrix.near_diagonal,
    )
    if defect_q > 0.0:
        log_warning(LOGGER, "embedding_defect_sampled", run=run_name, caveat=DEFECT_CAVEAT)

    certificates = []
    rows = []
    grid = list(embedding.k_grid) or default_k_grid(spec.m)
    for k in grid:
        budget = max(embedding.max_l1, sum(abs(v) for v in k))
        trace = evaluate_J(spec, k, budget=budget)
        estimates = []
        for i, cap in enumerate(spec.caps):
            estimate = estimate_phi_bar(
                trace, q, sampling.n, sampling.N, schedule, TruncationMode.ENFORCE, sampling.seed, options, pool, support=[cap]
            )
            estimates.append(_normalized(estimate, diag[i]))
            rows.append(stamp(config, {"k": list(k), "generator": i + 1, **estimates[-1].to_record()}))
        certificate = certify(spec, k, estimates, defects, matrix)
        record = certificate.to_record()
        record["linkage"] = linkage(matrix, k, estimates)
        certificates.append(record)
        log_event(LOGGER, "certificate", run=run_name, k=list(k), lower=certificate.lower, upper=certificate.upper)

    bound_d = max(defects)
    payload = {
        "embedding": spec.summary(),
        "defect_sampled": defect_q,
        "matrix_raw": raw.to_record(),
        "matrix": matrix.to_record(),
        "bilipschitz_ratio": bilipschitz_ratio(spec, defects) if bound_d > 0 else None,
        "certificates": certificates,
        "formula_grid": formula_grid(spec.m, embedding.max_l1, bound_d),
    }
    cert_path = write_json(artifact_path(output_dir, run_name, "certificates.json"), stamp(config, payload))
    estimates_path = write_jsonl(artifact_path(output_dir, run_name, "estimates.jsonl"), rows)
    return [
        {"type": "certificates", "path": cert_path, "metadata": {"count": len(certificates)}},
        {"type": "estimates", "path": estimates_path, "metadata": {"rows": len(rows)}},
    ]
