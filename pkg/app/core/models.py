from __future__ import annotations

from dataclasses import asdict, dataclass, field
from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Tuple

import numpy as np

from app.services.ham_dynamics import HamiltonianSystem
from app.services.sphere_geom import SphericalCap


class TruncationMode(str, Enum):
    NONE = "none"
    ENFORCE = "enforce_reducible_vanishing"


@dataclass
class GGEstimate:
    value: float
    stderr: float
    samples: int
    n: int
    quasimorphism: str
    truncation: TruncationMode
    seed: int
    retries: int = 0
    zero_fraction: float = 0.0
    stratified: bool = False
    sequence: List[Dict[str, float]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record["truncation"] = self.truncation.value
        return record


@dataclass
class ScalingFit:
    n: int
    area: float
    eps_grid: List[float]
    estimates: List[GGEstimate]
    A: float
    B: float
    sigma_A: float
    sigma_B: float
    residual: float
    loglog_slope: float | None = None

    def model(self, eps: float) -> float:
        return eps ** (self.n - 1) * (eps * self.A + self.n * (1.0 - eps * self.area) * self.B)

    def rows(self) -> List[Dict[str, float]]:
        rows = []
        for eps, estimate in zip(self.eps_grid, self.estimates):
            fitted = self.model(eps)
            rows.append(
                {
                    "epsilon": eps,
                    "phibar": estimate.value,
                    "stderr": estimate.stderr,
                    "fitted_model_value": fitted,
                    "residual": estimate.value - fitted,
                }
            )
        return rows


@dataclass
class EmbeddingSpec:
    m: int
    area: float
    strength: float
    margin: float
    rotations: List[np.ndarray]
    caps: List[SphericalCap]
    generators: List[HamiltonianSystem]
    step: float
    quasimorphisms: List[str] = field(default_factory=list)
    defects: Dict[str, float] = field(default_factory=dict)

    def summary(self) -> Dict[str, Any]:
        return {
            "m": self.m,
            "area": self.area,
            "strength": self.strength,
            "margin": self.margin,
            "centers": [cap.center.round(12).tolist() for cap in self.caps],
            "quasimorphisms": list(self.quasimorphisms),
            "defects": dict(self.defects),
        }


@dataclass
class EmbeddingCertificate:
    k: Tuple[int, ...]
    lower: float | None = None
    lower_mode: str | None = None
    lower_per_generator: List[float] = field(default_factory=list)
    lower_interval: Tuple[float, float] | None = None
    defect_bound: float | None = None
    estimates: List[Dict[str, float]] = field(default_factory=list)
    upper: float | None = None
    upper_constant: float = 1.0
    upper_witness: List[Tuple[int, int]] = field(default_factory=list)
    upper_norms: List[str] = field(default_factory=list)
    status: List[str] = field(default_factory=list)
    assumptions: List[str] = field(default_factory=list)

    def to_record(self) -> Dict[str, Any]:
        record = asdict(self)
        record["k"] = list(self.k)
        return record


@dataclass
class Job:
    id: str
    experiment: str
    status: str
    config_hash: str
    started_at: datetime | None
    finished_at: datetime | None
    error: str | None


@dataclass
class Artifact:
    job_id: str
    type: str
    path: str
    metadata: Dict[str, Any]
