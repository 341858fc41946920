"""Monte Carlo estimates of the braid quasimorphism averaged over n-point configurations.

Every estimate draws its base tuple z and its N sample tuples from one seeded
generator, so estimates that share a seed share samples (common random
numbers across powers, shrink factors and compared maps). Degenerate samples
are redrawn from per-sample streams seeded by (seed, sample index, attempt),
which keeps results independent of the worker count.

Truncation: with a declared support (one or more disjoint caps) a sample
contributes 0 unless a single cap holds at least n - 1 of its points. For a
single cap this is "at most one point outside".
"""

from __future__ import annotations

from concurrent.futures import Executor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np
from scipy import linalg
from scipy.stats import binom

from app.core.models import GGEstimate, ScalingFit, TruncationMode
from app.services.braid_core import delete_strands, is_probably_reducible
from app.services.braid_trace import DEFAULT_TIME_STEPS, default_pole, gamma_batch
from app.services.ham_dynamics import DiffeoTrace
from app.services.quasimorphism import QuasimorphismSpec, relabel_quasimorphism, resolve_quasimorphism
from app.services.sphere_geom import (
    COLLISION_TOL,
    SamplingBudgetExceeded,
    SphericalCap,
    normalize,
    sample_in_cap,
    uniform_batch,
    uniform_sample,
)
from app.utils.logging import get_logger, log_event, log_warning
from app.utils.validation import GGError, ValidationError

LOGGER = get_logger("services.gg_estimator")

DEFAULT_BATCH = 250
DEFAULT_RETRY_CAP = 5
RETRY_WARN_RATE = 0.01
RECOMMENDED_N = 4
DISC_BRAID_CAVEAT = "braids are disc representatives; sphere braid relations are not applied"


class NoSupportDeclared(GGError):
    pass


class IllConditionedFit(GGError):
    pass


class SupportsOverlap(GGError):
    pass


@dataclass(frozen=True, eq=False)
class SamplingOptions:
    batch_size: int = DEFAULT_BATCH
    time_steps: int = DEFAULT_TIME_STEPS
    collision_tol: float = COLLISION_TOL
    retry_cap: int = DEFAULT_RETRY_CAP
    stratified: bool = False
    pole: np.ndarray | None = None


@dataclass
class _Plan:
    z: np.ndarray
    xs: np.ndarray
    strata: np.ndarray | None = None
    weights: Dict[int, float] = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class _BatchTask:
    trace: DiffeoTrace
    xs: np.ndarray
    z: np.ndarray
    pole: np.ndarray
    powers: Tuple[int, ...]
    quasimorphism: str
    schedule: Tuple[int, ...]
    support: Tuple[SphericalCap, ...]
    truncate: bool
    time_steps: int
    collision_tol: float


@dataclass
class _BatchOutcome:
    values: np.ndarray
    zeroed: np.ndarray
    failures: Dict[int, str]


@dataclass
class _SampleTable:
    values: np.ndarray
    zeroed: np.ndarray
    retries: int
    plan: _Plan


def inside_counts(xs: np.ndarray, support: Sequence[SphericalCap]) -> np.ndarray:
    """Largest number of points of each sample held by one support cap."""
    xs = np.asarray(xs, dtype=float)
    if not support:
        return np.zeros(xs.shape[0], dtype=int)
    counts = np.stack([np.sum(cap.contains(xs), axis=-1) for cap in support])
    return counts.max(axis=0)


def _evaluate_batch(task: _BatchTask) -> _BatchOutcome:
    q = resolve_quasimorphism(task.quasimorphism, task.schedule)
    batch, n = task.xs.shape[0], task.xs.shape[1]
    values = np.zeros((batch, len(task.powers)))
    inside = inside_counts(task.xs, task.support)
    zeroed = inside < n - 1 if task.truncate else np.zeros(batch, dtype=bool)
    if q.is_synthetic:
        for b in np.nonzero(~zeroed)[0]:
            values[b, :] = q.sample_value(int(inside[b]), n)
        return _BatchOutcome(values, zeroed, {})
    active = np.nonzero(~zeroed)[0]
    failures: Dict[int, str] = {}
    if active.size == 0:
        return _BatchOutcome(values, zeroed, failures)
    result = gamma_batch(
        task.trace,
        task.xs[active],
        task.z,
        task.pole,
        task.time_steps,
        task.powers,
        task.collision_tol,
    )
    for local, b in enumerate(active):
        b = int(b)
        if local in result.failures:
            failures[b] = result.failures[local]
            values[b, :] = np.nan
            continue
        q_b = relabel_quasimorphism(q, result.strand_labels[local])
        for col, p in enumerate(task.powers):
            values[b, col] = q_b(result.words[p][local]) / p
    return _BatchOutcome(values, zeroed, failures)


def _draw_outside(rng: np.random.Generator, support: Sequence[SphericalCap], n: int, retry_cap: int) -> np.ndarray:
    if len(support) == 1:
        return sample_in_cap(rng, support[0].complement(), n)
    points: List[np.ndarray] = []
    for _ in range(retry_cap * n):
        candidate = normalize(rng.standard_normal(3))
        if not any(cap.contains(candidate) for cap in support):
            points.append(candidate)
            if len(points) == n:
                return np.asarray(points)
    raise SamplingBudgetExceeded("could not place base points outside the support caps")


def _stratum_draw(rng: np.random.Generator, cap: SphericalCap, inside: int, n: int, count: int) -> np.ndarray:
    parts = []
    if inside:
        parts.append(sample_in_cap(rng, cap, count * inside).reshape(count, inside, 3))
    if n - inside:
        parts.append(sample_in_cap(rng, cap.complement(), count * (n - inside)).reshape(count, n - inside, 3))
    stacked = np.concatenate(parts, axis=1)
    order = rng.permuted(np.tile(np.arange(n), (count, 1)), axis=1)
    return np.take_along_axis(stacked, order[..., None], axis=1)


def stratum_weights(n: int, area: float) -> Dict[int, float]:
    """Exact probability that k of n uniform points fall in a cap of the given area."""
    return {k: float(binom.pmf(k, n, area)) for k in range(n + 1)}


def _allocate(total: int, weights: Dict[int, float]) -> Dict[int, int]:
    """Largest-remainder allocation with at least two samples per stratum."""
    mass = sum(weights.values())
    raw = {k: total * w / mass for k, w in weights.items()}
    counts = {k: int(np.floor(v)) for k, v in raw.items()}
    leftover = total - sum(counts.values())
    for k in sorted(raw, key=lambda key: (counts[key] - raw[key], key))[:leftover]:
        counts[k] += 1
    return {k: max(2, c) for k, c in counts.items()}


def _draw_plan(
    seed: int,
    n: int,
    N: int,
    support: Sequence[SphericalCap],
    options: SamplingOptions,
    truncate: bool,
    z_outside: bool = False,
) -> _Plan:
    rng = np.random.default_rng(seed)
    if z_outside:
        z = _draw_outside(rng, support, n, options.retry_cap)
    else:
        z = uniform_sample(rng, n, options.collision_tol).points.copy()
    if not options.stratified:
        return _Plan(z, uniform_batch(rng, N, n, options.collision_tol))
    if len(support) != 1:
        raise ValidationError("sampling.stratified", "stratified sampling needs exactly one support cap")
    cap = support[0]
    weights = stratum_weights(n, cap.area)
    active = {k: w for k, w in weights.items() if w > 0.0 and (not truncate or k >= n - 1)}
    allocation = _allocate(N, active)
    blocks, labels = [], []
    for k in sorted(allocation):
        blocks.append(_stratum_draw(rng, cap, k, n, allocation[k]))
        labels.append(np.full(allocation[k], k))
    return _Plan(z, np.concatenate(blocks), np.concatenate(labels), active)


def _replacement(seed: int, index: int, attempt: int, plan: _Plan, support: Sequence[SphericalCap], options: SamplingOptions) -> np.ndarray:
    rng = np.random.default_rng([seed, index, attempt])
    n = plan.xs.shape[1]
    if plan.strata is not None:
        return _stratum_draw(rng, support[0], int(plan.strata[index]), n, 1)[0]
    return uniform_sample(rng, n, options.collision_tol).points.copy()


def _run_tasks(tasks: List[_BatchTask], pool: Executor | None) -> List[_BatchOutcome]:
    if pool is None:
        return [_evaluate_batch(task) for task in tasks]
    futures = [pool.submit(_evaluate_batch, task) for task in tasks]
    return [future.result() for future in futures]


def _sample_table(
    trace: DiffeoTrace,
    q: QuasimorphismSpec,
    plan: _Plan,
    powers: Sequence[int],
    support: Sequence[SphericalCap],
    truncate: bool,
    pole: np.ndarray,
    seed: int,
    options: SamplingOptions,
    pool: Executor | None,
) -> _SampleTable:
    xs = plan.xs.copy()
    total = xs.shape[0]
    values = np.zeros((total, len(powers)))
    zeroed = np.zeros(total, dtype=bool)

    def make_task(points: np.ndarray) -> _BatchTask:
        return _BatchTask(
            trace,
            points,
            plan.z,
            pole,
            tuple(powers),
            q.name,
            tuple(q.schedule),
            tuple(support),
            truncate,
            options.time_steps,
            options.collision_tol,
        )

    pending = np.arange(total)
    retries = 0
    attempt = 0
    while pending.size:
        if attempt > options.retry_cap:
            raise SamplingBudgetExceeded(
                f"{pending.size} samples still degenerate after {options.retry_cap} redraws"
            )
        if attempt:
            retries += int(pending.size)
            for idx in pending:
                xs[idx] = _replacement(seed, int(idx), attempt, plan, support, options)
        chunks = [pending[i : i + options.batch_size] for i in range(0, pending.size, options.batch_size)]
        outcomes = _run_tasks([make_task(xs[chunk]) for chunk in chunks], pool)
        failed: List[int] = []
        for chunk, outcome in zip(chunks, outcomes):
            values[chunk] = outcome.values
            zeroed[chunk] = outcome.zeroed
            failed.extend(int(chunk[b]) for b in sorted(outcome.failures))
        pending = np.asarray(failed, dtype=int)
        attempt += 1
    plan.xs = xs
    return _SampleTable(values, zeroed, retries, plan)


def _reduce(column: np.ndarray, plan: _Plan) -> Tuple[float, float]:
    if plan.strata is None:
        count = column.size
        stderr = float(np.std(column, ddof=1) / np.sqrt(count)) if count > 1 else 0.0
        return float(np.mean(column)), stderr
    value, variance = 0.0, 0.0
    for k, weight in sorted(plan.weights.items()):
        part = column[plan.strata == k]
        value += weight * float(np.mean(part))
        if part.size > 1:
            variance += weight**2 * float(np.var(part, ddof=1)) / part.size
    return value, float(np.sqrt(variance))


def _combine(values: np.ndarray, powers: Sequence[int], q: QuasimorphismSpec) -> np.ndarray:
    """Per-sample homogenized value from the per-power columns."""
    if q.exact_defect or len(powers) == 1:
        return values[:, -1]
    p1, p2 = powers[-2], powers[-1]
    return (p2 * values[:, -1] - p1 * values[:, -2]) / (p2 - p1)


def _resolve_support(f: DiffeoTrace, support: Sequence[SphericalCap] | None, mode: TruncationMode) -> Tuple[SphericalCap, ...]:
    caps = tuple(f.caps if support is None else support)
    if mode is TruncationMode.ENFORCE and not caps:
        raise NoSupportDeclared("truncation needs a declared support cap")
    return caps


def _check_inputs(n: int, N: int, powers: Sequence[int]) -> None:
    if n < 2:
        raise ValidationError("sampling.n", f"need at least 2 points, got {n}")
    if N < 1:
        raise ValidationError("sampling.N", f"need at least 1 sample, got {N}")
    if not powers or powers[0] < 1 or any(b <= a for a, b in zip(powers, powers[1:])):
        raise ValidationError("estimator.p_schedule", f"must be increasing positive integers, got {list(powers)}")


def _estimate(
    f: DiffeoTrace,
    q: QuasimorphismSpec,
    n: int,
    N: int,
    powers: Sequence[int],
    mode: TruncationMode,
    seed: int,
    options: SamplingOptions,
    pool: Executor | None,
    support: Sequence[SphericalCap] | None,
) -> Tuple[GGEstimate, np.ndarray]:
    powers = tuple(int(p) for p in powers)
    _check_inputs(n, N, powers)
    caps = _resolve_support(f, support, mode)
    truncate = mode is TruncationMode.ENFORCE
    if q.is_synthetic and not caps:
        raise NoSupportDeclared("the synthetic stand-in is defined through the support cap")
    pole = default_pole(caps or f.caps) if options.pole is None else options.pole
    plan = _draw_plan(seed, n, N, caps, options, truncate)
    table = _sample_table(f, q, plan, powers, caps, truncate, pole, seed, options, pool)

    sequence = []
    for col, p in enumerate(powers):
        value, stderr = _reduce(table.values[:, col], plan)
        sequence.append({"p": p, "value": value, "stderr": stderr})
    combined = _combine(table.values, powers, q)
    value, stderr = _reduce(combined, plan)

    warnings: List[str] = []
    if n < RECOMMENDED_N:
        warnings.append(f"n={n} is below {RECOMMENDED_N}; use for debugging only")
        log_warning(LOGGER, "small_n", n=n)
    if table.retries >= RETRY_WARN_RATE * N:
        warnings.append(f"degenerate-sample retries {table.retries} reached {RETRY_WARN_RATE:.0%} of N")
        log_warning(LOGGER, "retry_rate_high", retries=table.retries, samples=N)
    if truncate:
        warnings.append("samples without n-1 points in one support cap contribute 0")
    if not q.is_synthetic:
        warnings.append(DISC_BRAID_CAVEAT)
    if plan.strata is None:
        zero_fraction = float(np.mean(table.zeroed))
    else:
        zero_fraction = 1.0 - sum(plan.weights.values())
    estimate = GGEstimate(
        value=value,
        stderr=stderr,
        samples=int(table.values.shape[0]),
        n=n,
        quasimorphism=q.name,
        truncation=mode,
        seed=seed,
        retries=table.retries,
        zero_fraction=zero_fraction,
        stratified=plan.strata is not None,
        sequence=sequence,
        warnings=warnings,
    )
    log_event(
        LOGGER,
        "estimate_done",
        quasimorphism=q.name,
        value=value,
        stderr=stderr,
        samples=estimate.samples,
        retries=table.retries,
        powers=list(powers),
    )
    return estimate, combined


def estimate_phi(
    f: DiffeoTrace,
    q: QuasimorphismSpec,
    n: int,
    N: int,
    mode: TruncationMode,
    seed: int,
    options: SamplingOptions = SamplingOptions(),
    pool: Executor | None = None,
    support: Sequence[SphericalCap] | None = None,
) -> GGEstimate:
    estimate, _ = _estimate(f, q, n, N, (1,), mode, seed, options, pool, support)
    return estimate


def estimate_phi_bar(
    f: DiffeoTrace,
    q: QuasimorphismSpec,
    n: int,
    N: int,
    p_schedule: Sequence[int],
    mode: TruncationMode,
    seed: int,
    options: SamplingOptions = SamplingOptions(),
    pool: Executor | None = None,
    support: Sequence[SphericalCap] | None = None,
) -> GGEstimate:
    estimate, _ = _estimate(f, q, n, N, p_schedule, mode, seed, options, pool, support)
    return estimate


@dataclass
class VanishingReport:
    samples: int
    considered: int
    excluded_single_outside: int
    all_inside: int
    degenerate: int
    structural_violations: int
    reducible_flagged: int
    reasons: Dict[str, int]

    @property
    def reducible_fraction(self) -> float:
        return self.reducible_flagged / self.considered if self.considered else 1.0

    def to_record(self) -> Dict[str, object]:
        return {
            "samples": self.samples,
            "considered": self.considered,
            "excluded_single_outside": self.excluded_single_outside,
            "all_inside": self.all_inside,
            "degenerate": self.degenerate,
            "structural_violations": self.structural_violations,
            "reducible_flagged": self.reducible_flagged,
            "reducible_fraction": self.reducible_fraction,
            "reasons": dict(sorted(self.reasons.items())),
        }


@dataclass(frozen=True, eq=False)
class _VanishingTask:
    trace: DiffeoTrace
    xs: np.ndarray
    z: np.ndarray
    pole: np.ndarray
    cap: SphericalCap
    time_steps: int
    collision_tol: float


def _vanishing_batch(task: _VanishingTask) -> List[Tuple[str, bool, bool]]:
    """(status, outside sub-braid trivial, flagged reducible) per sample."""
    result = gamma_batch(task.trace, task.xs, task.z, task.pole, task.time_steps, (1,), task.collision_tol)
    rows: List[Tuple[str, bool, bool]] = []
    for b in range(task.xs.shape[0]):
        word = result.words[1][b]
        if word is None:
            rows.append(("degenerate", True, True))
            continue
        outside = np.nonzero(~task.cap.contains(task.xs[b]))[0]
        keep = [int(result.strand_labels[b][i]) for i in outside]
        trivial = delete_strands(word, keep).is_trivial()
        verdict = is_probably_reducible(word)
        rows.append((verdict.reason, trivial, verdict.reducible))
    return rows


def vanishing_experiment(
    f: DiffeoTrace,
    n: int,
    N: int,
    seed: int,
    options: SamplingOptions = SamplingOptions(),
    pool: Executor | None = None,
) -> VanishingReport:
    """Check that samples with two or more points outside the cap give reducible braids."""
    if n < 3:
        raise ValidationError("sampling.n", "the reducibility check needs n >= 3")
    caps = f.caps
    if len(caps) != 1:
        raise NoSupportDeclared("the vanishing experiment needs exactly one support cap")
    cap = caps[0]
    plan = _draw_plan(seed, n, N, caps, SamplingOptions(collision_tol=options.collision_tol), False, z_outside=True)
    inside = np.sum(cap.contains(plan.xs), axis=-1)
    outside = n - inside
    selected = np.nonzero(outside >= 2)[0]
    pole = default_pole(caps) if options.pole is None else options.pole
    chunks = [selected[i : i + options.batch_size] for i in range(0, selected.size, options.batch_size)]
    tasks = [_VanishingTask(f, plan.xs[chunk], plan.z, pole, cap, options.time_steps, options.collision_tol) for chunk in chunks]
    if pool is None:
        outcomes = [_vanishing_batch(task) for task in tasks]
    else:
        outcomes = [future.result() for future in [pool.submit(_vanishing_batch, task) for task in tasks]]

    reasons: Dict[str, int] = {}
    violations = flagged = degenerate = 0
    for rows in outcomes:
        for reason, trivial, reducible in rows:
            if reason == "degenerate":
                degenerate += 1
                continue
            reasons[reason] = reasons.get(reason, 0) + 1
            violations += int(not trivial)
            flagged += int(reducible)
    report = VanishingReport(
        samples=N,
        considered=int(selected.size) - degenerate,
        excluded_single_outside=int(np.sum(outside == 1)),
        all_inside=int(np.sum(outside == 0)),
        degenerate=degenerate,
        structural_violations=violations,
        reducible_flagged=flagged,
        reasons=reasons,
    )
    if violations:
        log_warning(LOGGER, "vanishing_violations", count=violations)
    log_event(LOGGER, "vanishing_done", **report.to_record())
    return report


def _fit(eps: np.ndarray, values: np.ndarray, stderrs: np.ndarray, n: int, area: float) -> Tuple[float, float, float, float, float]:
    design = np.stack([eps**n, n * eps ** (n - 1) * (1.0 - eps * area)], axis=1)
    if np.all(stderrs > 0):
        weights = 1.0 / stderrs
    else:
        weights = np.ones_like(values)
    wd = design * weights[:, None]
    wy = values * weights
    if np.linalg.cond(wd) > 1e12:
        raise IllConditionedFit("scaling design matrix is ill-conditioned; widen the epsilon grid")
    coef, _, rank, _ = linalg.lstsq(wd, wy)
    if rank < 2:
        raise IllConditionedFit("scaling design matrix is rank deficient")
    normal = np.linalg.inv(wd.T @ wd)
    if not np.all(stderrs > 0):
        dof = max(1, len(values) - 2)
        normal = normal * float(np.sum((wy - wd @ coef) ** 2)) / dof
    fitted = design @ coef
    scale = float(np.linalg.norm(values))
    residual = float(np.linalg.norm(values - fitted)) / scale if scale > 0 else float(np.linalg.norm(values - fitted))
    return float(coef[0]), float(coef[1]), float(np.sqrt(normal[0, 0])), float(np.sqrt(normal[1, 1])), residual


def loglog_slope(eps: Sequence[float], values: Sequence[float]) -> float | None:
    pairs = [(e, v) for e, v in zip(eps, values) if v > 0]
    if len({e for e, _ in pairs}) < 2:
        return None
    x = np.log([e for e, _ in pairs])
    y = np.log([v for _, v in pairs])
    return float(np.polyfit(x, y, 1)[0])


def scaling_experiment(
    f: DiffeoTrace,
    q: QuasimorphismSpec,
    n: int,
    eps_grid: Sequence[float],
    N: int,
    p_schedule: Sequence[int],
    seed: int,
    mode: TruncationMode = TruncationMode.ENFORCE,
    options: SamplingOptions = SamplingOptions(),
    pool: Executor | None = None,
) -> ScalingFit:
    """Estimate the homogenized average at shrunken supports and fit the scaling law."""
    if mode is not TruncationMode.ENFORCE:
        raise ValidationError("estimator.truncation", "the scaling experiment needs enforce_reducible_vanishing")
    grid = [float(e) for e in eps_grid]
    if len(set(grid)) < 3:
        raise IllConditionedFit(f"epsilon grid needs at least 3 distinct values, got {grid}")
    if any(not 0.0 < e <= 1.0 for e in grid):
        raise ValidationError("estimator.eps_grid", f"values must lie in (0, 1], got {grid}")
    caps = f.caps
    if len(caps) != 1:
        raise NoSupportDeclared("the scaling experiment needs exactly one support cap")
    area = caps[0].area
    shared = options if options.pole is not None else replace(options, pole=default_pole(caps))
    estimates = [
        estimate_phi_bar(f.rescaled(eps), q, n, N, p_schedule, mode, seed, shared, pool)
        for eps in grid
    ]
    eps = np.asarray(grid)
    values = np.asarray([e.value for e in estimates])
    stderrs = np.asarray([e.stderr for e in estimates])
    A, B, sigma_A, sigma_B, residual = _fit(eps, values, stderrs, n, area)
    fit = ScalingFit(
        n=n,
        area=area,
        eps_grid=grid,
        estimates=estimates,
        A=A,
        B=B,
        sigma_A=sigma_A,
        sigma_B=sigma_B,
        residual=residual,
        loglog_slope=loglog_slope(grid, values),
    )
    log_event(LOGGER, "scaling_fit", A=A, B=B, sigma_A=sigma_A, sigma_B=sigma_B, residual=residual)
    return fit


@dataclass(frozen=True)
class BudgetChoice:
    epsilon: float
    value: float
    branch: str


def shrink_to_budget(fit: ScalingFit, m: int, sigmas: float = 3.0) -> BudgetChoice:
    """Pick a shrink factor with epsilon * a < 1/m and a nonzero model value.

    If B vanishes within `sigmas` standard errors the model is eps^n A for any
    admissible eps; otherwise the model is followed down and, should it keep
    vanishing, the small-eps limit n B of value / eps^(n-1) is reported.
    """
    if m < 1:
        raise ValidationError("embedding.m", f"must be positive, got {m}")
    limit = 1.0 / (m * fit.area)
    eps = 1.0 if limit > 1.0 else 0.99 * limit
    if fit.B == 0.0 or abs(fit.B) < sigmas * fit.sigma_B:
        return BudgetChoice(eps, eps**fit.n * fit.A, "B_zero")
    scale = max(abs(fit.A), abs(fit.B), 1e-300)
    for _ in range(20):
        value = fit.model(eps)
        if abs(value) > 1e-9 * scale * eps ** (fit.n - 1):
            return BudgetChoice(eps, value, "generic")
        eps *= 0.5
    return BudgetChoice(eps, fit.n * fit.B, "small_eps_limit")


@dataclass
class AdditivityReport:
    phi_first: GGEstimate
    phi_second: GGEstimate
    phi_composite: GGEstimate
    gap: float
    paired_stderr: float
    combined_stderr: float

    @property
    def passed(self) -> bool:
        if self.paired_stderr == 0.0:
            return abs(self.gap) < 1e-12
        return abs(self.gap) < 3.0 * self.paired_stderr

    def to_record(self) -> Dict[str, object]:
        return {
            "phi_first": self.phi_first.to_record(),
            "phi_second": self.phi_second.to_record(),
            "phi_composite": self.phi_composite.to_record(),
            "gap": self.gap,
            "paired_stderr": self.paired_stderr,
            "combined_stderr": self.combined_stderr,
            "passed": self.passed,
        }


def check_disjoint(first: Sequence[SphericalCap], second: Sequence[SphericalCap], margin: float = 0.0) -> float:
    """Smallest geodesic gap between the two cap families; raises if they touch."""
    smallest = float("inf")
    for a in first:
        for b in second:
            gap = a.margin_to(b)
            if gap <= margin:
                raise SupportsOverlap(f"support caps overlap or touch (margin {gap:.3e})")
            smallest = min(smallest, gap)
    return smallest


def additivity_experiment(
    f1: DiffeoTrace,
    f2: DiffeoTrace,
    q: QuasimorphismSpec,
    n: int,
    N: int,
    p_schedule: Sequence[int],
    seed: int,
    mode: TruncationMode = TruncationMode.ENFORCE,
    options: SamplingOptions = SamplingOptions(),
    pool: Executor | None = None,
) -> AdditivityReport:
    check_disjoint(f1.caps, f2.caps)
    composite = f2.then(f1)
    pole = default_pole(composite.caps) if options.pole is None else options.pole
    shared = replace(options, pole=pole)
    if shared.stratified:
        raise ValidationError("sampling.stratified", "additivity compares maps with different supports; disable stratification")
    first, v1 = _estimate(f1, q, n, N, p_schedule, mode, seed, shared, pool, None)
    second, v2 = _estimate(f2, q, n, N, p_schedule, mode, seed, shared, pool, None)
    both, v12 = _estimate(composite, q, n, N, p_schedule, mode, seed, shared, pool, None)
    diff = v12 - v1 - v2
    gap = float(np.mean(diff))
    paired = float(np.std(diff, ddof=1) / np.sqrt(diff.size)) if diff.size > 1 else 0.0
    combined = float(np.sqrt(first.stderr**2 + second.stderr**2 + both.stderr**2))
    report = AdditivityReport(first, second, both, gap, paired, combined)
    log_event(LOGGER, "additivity_done", gap=gap, paired_stderr=paired, passed=report.passed)
    return report


@dataclass
class QuasimorphismMatrix:
    values: np.ndarray
    stderr: np.ndarray
    estimates: List[List[GGEstimate]]

    @property
    def condition(self) -> float:
        return float(np.linalg.cond(self.values))

    @property
    def off_diagonal_ratio(self) -> float:
        diag = np.abs(np.diag(self.values))
        off = np.abs(self.values - np.diag(np.diag(self.values)))
        if diag.min() == 0.0:
            return float("inf")
        return float(off.max() / diag.min()) if off.size else 0.0

    @property
    def near_diagonal(self) -> bool:
        m = self.values.shape[0]
        for i in range(m):
            for j in range(m):
                if i != j and abs(self.values[i, j]) > max(3.0 * self.stderr[i, j], 1e-12):
                    return False
        return True

    def to_record(self) -> Dict[str, object]:
        return {
            "values": self.values.tolist(),
            "stderr": self.stderr.tolist(),
            "condition": self.condition,
            "off_diagonal_ratio": self.off_diagonal_ratio,
            "near_diagonal": self.near_diagonal,
        }


def estimate_matrix(
    generators: Sequence[DiffeoTrace],
    supports: Sequence[SphericalCap],
    q: QuasimorphismSpec,
    n: int,
    N: int,
    p_schedule: Sequence[int],
    seed: int,
    options: SamplingOptions = SamplingOptions(),
    pool: Executor | None = None,
) -> QuasimorphismMatrix:
    """M[i, j]: homogenized average of generator j, truncated to support cap i."""
    if len(generators) != len(supports):
        raise ValueError("one support cap per generator is required")
    m = len(generators)
    pole = default_pole(list(supports)) if options.pole is None else options.pole
    shared = replace(options, pole=pole)
    values = np.zeros((m, m))
    stderr = np.zeros((m, m))
    rows: List[List[GGEstimate]] = []
    for i, cap in enumerate(supports):
        row = []
        for j, generator in enumerate(generators):
            estimate = estimate_phi_bar(generator, q, n, N, p_schedule, TruncationMode.ENFORCE, seed, shared, pool, support=[cap])
            values[i, j] = estimate.value
            stderr[i, j] = estimate.stderr
            row.append(estimate)
        rows.append(row)
    return QuasimorphismMatrix(values, stderr, rows)
