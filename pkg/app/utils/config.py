"""Experiment configuration: nested JSON file plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Mapping, Tuple

from app.services.quasimorphism import DEFAULT_SCHEDULE, resolve_quasimorphism
from app.utils.validation import (
    ValidationError,
    require_distinct_count,
    require_fraction,
    require_increasing,
    require_positive_float,
    require_positive_int,
)

EXPERIMENTS = ("phi", "phibar", "vanishing", "scaling", "additivity", "embedding")
PRESETS = ("identity", "twist", "embedding")
TRUNCATIONS = ("none", "enforce_reducible_vanishing")


@dataclass(frozen=True)
class SystemConfig:
    preset: str = "twist"
    center: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    area: float = 0.1
    strength: float = 1.0
    k: Tuple[int, ...] = ()


@dataclass(frozen=True)
class SamplingConfig:
    n: int = 4
    N: int = 2000
    seed: int = 0
    batch_size: int = 250
    collision_tol: float = 1e-6
    retry_cap: int = 5
    stratified: bool = False
    time_steps: int = 64


@dataclass(frozen=True)
class IntegratorConfig:
    step: float = 1e-3
    record_every: int = 10


@dataclass(frozen=True)
class EstimatorConfig:
    quasimorphism: str = "signature"
    truncation: str = "none"
    p_schedule: Tuple[int, ...] = DEFAULT_SCHEDULE
    eps_grid: Tuple[float, ...] = (1.0, 0.8, 0.6, 0.4)


@dataclass(frozen=True)
class EmbeddingConfig:
    m: int = 2
    area: float = 0.05
    strength: float = 1.0
    k_grid: Tuple[Tuple[int, ...], ...] = ()
    max_l1: int = 8
    defect_trials: int = 2000
    defect_word_length: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    system: SystemConfig = field(default_factory=SystemConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    output: str = "out"


_SECTIONS = {
    "system": SystemConfig,
    "sampling": SamplingConfig,
    "integrator": IntegratorConfig,
    "estimator": EstimatorConfig,
    "embedding": EmbeddingConfig,
}


def _section(name: str, cls: type, raw: Any) -> Any:
    if raw is None:
        return cls()
    if not isinstance(raw, Mapping):
        raise ValidationError(name, "expected an object")
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ValidationError(f"{name}.{unknown[0]}", "unknown key")
    values = {}
    for key, value in raw.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        values[key] = value
    return cls(**values)


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, Mapping):
        raise ValidationError("config", "top level must be an object")
    unknown = sorted(set(raw) - {"experiment", "output", *_SECTIONS})
    if unknown:
        raise ValidationError(unknown[0], "unknown key")
    if "experiment" not in raw:
        raise ValidationError("experiment", "missing")
    sections = {name: _section(name, cls, raw.get(name)) for name, cls in _SECTIONS.items()}
    config = ExperimentConfig(experiment=raw["experiment"], output=str(raw.get("output", "out")), **sections)
    validate_config(config)
    return config


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError("config", f"file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ValidationError("config", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}")
    return config_from_dict(raw)


def apply_overrides(
    config: ExperimentConfig,
    seed: int | None = None,
    out: str | None = None,
) -> ExperimentConfig:
    """Command-line flags win over file values."""
    if seed is not None:
        config = replace(config, sampling=replace(config.sampling, seed=seed))
    if out is not None:
        config = replace(config, output=out)
    validate_config(config)
    return config


def _require_int(name: str, value: Any, minimum: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValidationError(name, f"expected an integer >= {minimum}, got {value!r}")
    return value


def validate_config(config: ExperimentConfig) -> None:
    if config.experiment not in EXPERIMENTS:
        raise ValidationError("experiment", f"expected one of {', '.join(EXPERIMENTS)}, got {config.experiment!r}")

    system = config.system
    if system.preset not in PRESETS:
        raise ValidationError("system.preset", f"expected one of {', '.join(PRESETS)}, got {system.preset!r}")
    if len(system.center) != 3 or not any(float(c) != 0.0 for c in system.center):
        raise ValidationError("system.center", "expected a nonzero 3-vector")
    require_fraction("system.area", system.area)
    if isinstance(system.strength, bool) or not isinstance(system.strength, (int, float)) or system.strength == 0:
        raise ValidationError("system.strength", f"expected a nonzero number, got {system.strength!r}")
    for idx, value in enumerate(system.k):
        _require_int(f"system.k[{idx}]", value, -(10**6))
    if system.preset == "embedding" and system.k and len(system.k) != config.embedding.m:
        raise ValidationError("system.k", f"expected {config.embedding.m} entries, got {len(system.k)}")

    sampling = config.sampling
    _require_int("sampling.n", sampling.n, 2)
    require_positive_int("sampling.N", sampling.N)
    _require_int("sampling.seed", sampling.seed, 0)
    require_positive_int("sampling.batch_size", sampling.batch_size)
    require_positive_float("sampling.collision_tol", sampling.collision_tol)
    require_positive_int("sampling.retry_cap", sampling.retry_cap)
    require_positive_int("sampling.time_steps", sampling.time_steps)
    if not isinstance(sampling.stratified, bool):
        raise ValidationError("sampling.stratified", "expected true or false")

    require_fraction("integrator.step", config.integrator.step)
    require_positive_int("integrator.record_every", config.integrator.record_every)

    estimator = config.estimator
    if estimator.truncation not in TRUNCATIONS:
        raise ValidationError("estimator.truncation", f"expected one of {', '.join(TRUNCATIONS)}, got {estimator.truncation!r}")
    require_increasing("estimator.p_schedule", estimator.p_schedule)
    for idx, eps in enumerate(estimator.eps_grid):
        value = require_positive_float(f"estimator.eps_grid[{idx}]", eps)
        if value > 1.0:
            raise ValidationError(f"estimator.eps_grid[{idx}]", f"must lie in (0, 1], got {eps}")
    if config.experiment == "scaling":
        require_distinct_count("estimator.eps_grid", estimator.eps_grid, 3)
        if estimator.truncation != "enforce_reducible_vanishing":
            raise ValidationError("estimator.truncation", "the scaling experiment needs enforce_reducible_vanishing")
    q = resolve_quasimorphism(estimator.quasimorphism, estimator.p_schedule)
    if q.is_synthetic and config.experiment == "embedding":
        raise ValidationError("estimator.quasimorphism", "the synthetic stand-in has no values on J(k); pick a braid quasimorphism")

    embedding = config.embedding
    require_positive_int("embedding.m", embedding.m)
    require_fraction("embedding.area", embedding.area)
    if isinstance(embedding.strength, bool) or not isinstance(embedding.strength, (int, float)) or embedding.strength == 0:
        raise ValidationError("embedding.strength", f"expected a nonzero number, got {embedding.strength!r}")
    require_positive_int("embedding.max_l1", embedding.max_l1)
    require_positive_int("embedding.defect_trials", embedding.defect_trials)
    require_positive_int("embedding.defect_word_length", embedding.defect_word_length)
    for idx, k in enumerate(embedding.k_grid):
        if len(k) != embedding.m:
            raise ValidationError(f"embedding.k_grid[{idx}]", f"expected {embedding.m} entries, got {len(k)}")
        for jdx, value in enumerate(k):
            _require_int(f"embedding.k_grid[{idx}][{jdx}]", value, -(10**6))
    if not isinstance(config.output, str) or not config.output:
        raise ValidationError("output", "expected a nonempty path")


def config_to_dict(config: ExperimentConfig) -> Dict[str, Any]:
    def plain(value: Any) -> Any:
        if isinstance(value, tuple):
            return [plain(v) for v in value]
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        return value

    return plain(asdict(config))


def normalize_config(config: ExperimentConfig) -> str:
    return json.dumps(config_to_dict(config), ensure_ascii=True, indent=2, sort_keys=True) + "\n"


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(normalize_config(config).encode("utf-8")).hexdigest()


def l1_grid(m: int, max_l1: int) -> List[Tuple[int, ...]]:
    """All k in Z^m with 0 < |k|_1 <= max_l1, in lexicographic order."""
    grid: List[Tuple[int, ...]] = []

    def extend(prefix: Tuple[int, ...], remaining: int) -> None:
        if len(prefix) == m:
            if any(prefix):
                grid.append(prefix)
            return
        for value in range(-remaining, remaining + 1):
            extend(prefix + (value,), remaining - abs(value))

    extend((), max_l1)
    return grid
