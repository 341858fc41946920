"""Disjointly supported twist generators and sandwich certificates for J(k).

J(k) = f_1^{k_1} o ... o f_m^{k_m} with f_i = h_i o f o h_i^{-1}. The upper
bound counts autonomous factors; the lower bound divides homogenized
quasimorphism values by their defects.
"""

from __future__ import annotations

from typing import List, Sequence

import numpy as np

from app.core.models import EmbeddingCertificate, EmbeddingSpec, GGEstimate
from app.services.gg_estimator import QuasimorphismMatrix
from app.services.ham_dynamics import DEFAULT_STEP, DiffeoTrace, compose, conjugate_by_rotation, twist_map
from app.services.sphere_geom import SphericalCap, fibonacci_centers, rotation_between
from app.utils.logging import get_logger, log_event
from app.utils.validation import GGError, InvariantViolation, ValidationError

LOGGER = get_logger("services.norm_bounds")

DEFAULT_MARGIN = 1e-3
DEFAULT_K_BUDGET = 16
SINGULAR_CONDITION = 1e12
NORTH = np.array([0.0, 0.0, 1.0])

AUTONOMOUS_ASSUMPTION = "time-1 maps of autonomous flows on surfaces have zero topological entropy"
DEFECT_CAVEAT = (
    "empirical defect => bound is heuristic upward, rigorous only relative to the sampled defect"
)


class PlacementFailed(GGError):
    pass


class MissingEstimate(GGError):
    pass


def _centers(m: int) -> np.ndarray:
    if m == 2:
        return np.array([NORTH, -NORTH])
    return fibonacci_centers(m)


def build_embedding(
    m: int,
    area: float,
    strength: float = 1.0,
    margin: float = DEFAULT_MARGIN,
    step: float = DEFAULT_STEP,
) -> EmbeddingSpec:
    if m < 1:
        raise ValidationError("embedding.m", f"must be at least 1, got {m}")
    if not 0.0 < area < 1.0 / m:
        raise ValidationError("embedding.area", f"each cap needs area in (0, 1/m) = (0, {1.0 / m:.6g}), got {area}")
    base = twist_map(SphericalCap(NORTH, area), strength)
    rotations: List[np.ndarray] = []
    caps: List[SphericalCap] = []
    generators = []
    for center in _centers(m):
        R = rotation_between(NORTH, center)
        generator = conjugate_by_rotation(base, R)
        rotations.append(R)
        caps.append(generator.cap)
        generators.append(generator)
    for i in range(m):
        for j in range(i + 1, m):
            gap = caps[i].margin_to(caps[j])
            if gap < margin:
                raise PlacementFailed(f"caps {i + 1} and {j + 1} are {gap:.3e} apart; need margin {margin}")
    log_event(LOGGER, "embedding_built", m=m, area=area, strength=strength)
    return EmbeddingSpec(m, area, strength, margin, rotations, caps, generators, step)


def generator_trace(spec: EmbeddingSpec, i: int) -> DiffeoTrace:
    return compose([spec.generators[i]], [1], spec.step)


def evaluate_J(spec: EmbeddingSpec, k: Sequence[int], budget: int = DEFAULT_K_BUDGET) -> DiffeoTrace:
    k = tuple(int(v) for v in k)
    if len(k) != spec.m:
        raise ValidationError("embedding.k", f"expected {spec.m} entries, got {len(k)}")
    if sum(abs(v) for v in k) > budget:
        raise ValidationError("embedding.k", f"|k|_1 = {sum(abs(v) for v in k)} exceeds the budget {budget}")
    return compose(spec.generators, k, spec.step)


def _l1(k: Sequence[int]) -> int:
    return sum(abs(int(v)) for v in k)


def upper_bound_certificate(spec: EmbeddingSpec, k: Sequence[int]) -> EmbeddingCertificate:
    """|k|_1 with constant 1: J(k) is a product of |k|_1 autonomous time-1 maps."""
    k = tuple(int(v) for v in k)
    if len(k) != spec.m:
        raise ValidationError("embedding.k", f"expected {spec.m} entries, got {len(k)}")
    witness = []
    for i, exponent in enumerate(k, start=1):
        witness.extend([(i, 1 if exponent > 0 else -1)] * abs(exponent))
    return EmbeddingCertificate(
        k=k,
        upper=float(_l1(k)),
        upper_constant=1.0,
        upper_witness=witness,
        upper_norms=["entropy", "autonomous"],
        status=["upper: formula-exact"],
        assumptions=[AUTONOMOUS_ASSUMPTION],
    )


def lower_bound_certificate(
    spec: EmbeddingSpec,
    k: Sequence[int],
    estimates: Sequence[GGEstimate | None] | None,
    defects: Sequence[float],
    matrix: QuasimorphismMatrix | None = None,
) -> EmbeddingCertificate:
    """Lower bound from normalized homogenized averages of J(k).

    `estimates[i]` is the i-th normalized quasimorphism evaluated on J(k);
    `defects[i]` its defect. A zero defect marks a homomorphism: the bound is
    then formally infinite and the certificate records the exact identity
    |value(J(k))| = |sum k_j value(f_j)| instead.
    """
    k = tuple(int(v) for v in k)
    m = spec.m
    if len(k) != m:
        raise ValidationError("embedding.k", f"expected {m} entries, got {len(k)}")
    if estimates is None or len(estimates) != m or any(e is None for e in estimates):
        raise MissingEstimate(f"need one estimate per generator ({m})")
    if len(defects) != m:
        raise MissingEstimate(f"need one defect per generator ({m})")
    records = [{"value": e.value, "stderr": e.stderr} for e in estimates]
    cert = EmbeddingCertificate(k=k, estimates=records, assumptions=[AUTONOMOUS_ASSUMPTION])

    if any(d <= 0.0 for d in defects):
        cert.lower_mode = "homomorphism"
        cert.status = ["lower: homomorphism, exact additivity instead of a defect bound"]
        if matrix is not None:
            predicted = matrix.values @ np.asarray(k, dtype=float)
            cert.estimates = [
                {**record, "predicted": float(p)} for record, p in zip(records, predicted)
            ]
        return cert

    bound_d = float(max(defects))
    cert.defect_bound = bound_d
    cert.lower_per_generator = [abs(e.value) / d for e, d in zip(estimates, defects)]
    if matrix is not None and not matrix.near_diagonal and matrix.condition < SINGULAR_CONDITION:
        inverse_norm = float(np.linalg.norm(np.linalg.inv(matrix.values), ord=np.inf))
        cert.lower_mode = "change_of_basis"
        cert.lower = _l1(k) / (m * bound_d * inverse_norm)
    else:
        cert.lower_mode = "aggregated"
        cert.lower = _l1(k) / (m * bound_d)
        if matrix is not None and not matrix.near_diagonal:
            cert.assumptions.append("quasimorphism matrix is singular; aggregated bound assumes it is near-diagonal")
    low = [max(0.0, abs(e.value) - 2.0 * e.stderr) / d for e, d in zip(estimates, defects)]
    high = [(abs(e.value) + 2.0 * e.stderr) / d for e, d in zip(estimates, defects)]
    cert.lower_interval = (max(low), max(high))
    cert.status = ["lower: formula-exact given D", f"lower: D sampled; {DEFECT_CAVEAT}"]
    return cert


def certify(
    spec: EmbeddingSpec,
    k: Sequence[int],
    estimates: Sequence[GGEstimate | None] | None,
    defects: Sequence[float],
    matrix: QuasimorphismMatrix | None = None,
) -> EmbeddingCertificate:
    """Merge the two certificates and enforce lower <= upper."""
    lower = lower_bound_certificate(spec, k, estimates, defects, matrix)
    upper = upper_bound_certificate(spec, k)
    lower.upper = upper.upper
    lower.upper_constant = upper.upper_constant
    lower.upper_witness = upper.upper_witness
    lower.upper_norms = upper.upper_norms
    lower.status = upper.status + lower.status
    if lower.lower is not None and lower.lower > lower.upper + 1e-12:
        raise InvariantViolation(f"certificate ordering broken for k={lower.k}: {lower.lower} > {lower.upper}")
    return lower


def bilipschitz_ratio(spec: EmbeddingSpec, defects: Sequence[float]) -> float:
    """Largest upper/lower ratio the aggregated formulas allow: m * D_m."""
    return spec.m * float(max(defects))
