"""Braids traced by n-point trajectories of an isotopy.

Each strand follows the geodesic from its base point z_i to x_i, then the
trajectory of x_i under the isotopy, then the geodesic from f(x_i) back to
z_i. Strands are projected stereographically from a pole, ranked by the
first planar coordinate u, and every exchange of adjacent ranks emits
sigma_k^{+-1}: positive when the strand of rank k has the larger second
coordinate v at the crossing.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from app.services.braid_core import BraidWord, free_reduce, permutation
from app.services.ham_dynamics import DiffeoTrace
from app.services.sphere_geom import (
    ANTIPODAL_TOL,
    COLLISION_TOL,
    AntipodalPair,
    AtPole,
    SphericalCap,
    as_point,
    fibonacci_centers,
    normalize,
    slerp,
    stereo_project,
)
from app.utils.logging import get_logger, log_warning
from app.utils.retry import retry
from app.utils.validation import GGError, InvariantViolation

LOGGER = get_logger("services.braid_trace")

DEFAULT_TIME_STEPS = 64
MAX_REFINEMENTS = 6
POLE_TOL = ANTIPODAL_TOL
DEFAULT_GAMMA_RETRIES = 5


class DegenerateConfig(GGError):
    pass


class PoleTooClose(GGError):
    pass


class UnresolvedCrossing(GGError):
    pass


@dataclass(frozen=True)
class CrossingEvent:
    t: float
    strands: Tuple[int, int]
    sign: int


@dataclass(frozen=True, eq=False)
class LoopSystem:
    trace: DiffeoTrace
    x: np.ndarray
    z: np.ndarray
    fx: np.ndarray
    collision_tol: float = COLLISION_TOL

    @property
    def n(self) -> int:
        return int(self.x.shape[0])

    def at(self, t: float) -> np.ndarray:
        """Positions of all strands at loop time t in [0, 1]."""
        if t <= 1.0 / 3.0:
            return slerp(self.z, self.x, 3.0 * t)
        if t <= 2.0 / 3.0:
            return self.trace.apply(self.x, 3.0 * t - 1.0)
        return slerp(self.fx, self.z, 3.0 * t - 2.0)

    def frames(self, time_steps: int) -> Iterator[Tuple[float, np.ndarray]]:
        """(t, positions) along the loop; the middle third at integrator resolution."""
        yield 0.0, self.z.copy()
        for s in np.linspace(0.0, 1.0, time_steps + 1)[1:]:
            yield float(s) / 3.0, slerp(self.z, self.x, s)
        total = max(1, self.trace.units * self.trace.steps_per_unit)
        for index, positions in self.trace.iterate(self.x):
            yield (1.0 + index / total) / 3.0, positions.copy()
        for s in np.linspace(0.0, 1.0, time_steps + 1)[1:]:
            yield (2.0 + float(s)) / 3.0, slerp(self.fx, self.z, s)


def _check_not_antipodal(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if np.any(1.0 + np.sum(a * b, axis=-1) < ANTIPODAL_TOL):
        raise AntipodalPair(f"{what} contains an antipodal pair; resample x")


def build_loops(
    f: DiffeoTrace,
    x: np.ndarray,
    z: np.ndarray,
    collision_tol: float = COLLISION_TOL,
) -> LoopSystem:
    x = normalize(np.asarray(x, dtype=float))
    z = normalize(np.asarray(z, dtype=float))
    if x.shape != z.shape:
        raise ValueError("x and z must have the same number of points")
    _check_not_antipodal(x, z, "(x_i, z_i)")
    fx = f.apply(x)
    _check_not_antipodal(fx, z, "(f(x_i), z_i)")
    for tuple_name, pts in (("x", x), ("z", z), ("f(x)", fx)):
        if _min_gap(pts[None])[0] <= collision_tol:
            raise DegenerateConfig(f"two points of {tuple_name} are within {collision_tol}")
    return LoopSystem(f, x, z, fx, collision_tol)


def _min_gap(batch: np.ndarray) -> np.ndarray:
    n = batch.shape[1]
    if n < 2:
        return np.full(batch.shape[0], np.inf)
    diff = batch[:, :, None, :] - batch[:, None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    dist[:, np.arange(n), np.arange(n)] = np.inf
    return dist.min(axis=(1, 2))


def default_pole(caps: Sequence[SphericalCap]) -> np.ndarray:
    """Antipode of a single support cap; otherwise the lattice point farthest from all caps."""
    if not caps:
        return as_point((0.0, 0.0, -1.0))
    if len(caps) == 1:
        return as_point(-caps[0].center)
    candidates = fibonacci_centers(256)
    clearance = np.full(len(candidates), np.inf)
    for cap in caps:
        angles = np.arccos(np.clip(candidates @ cap.center, -1.0, 1.0)) - cap.half_angle
        clearance = np.minimum(clearance, angles)
    return as_point(candidates[int(np.argmax(clearance))])


class _Failure(Exception):
    def __init__(self, error: GGError) -> None:
        super().__init__(str(error))
        self.error = error


class CrossingTracker:
    """Streams frames of a batch of loop systems and accumulates braid letters.

    A sample that hits a degeneracy is marked failed and ignored afterwards.
    """

    def __init__(self, start: np.ndarray, pole: np.ndarray, collision_tol: float = COLLISION_TOL) -> None:
        self.pole = as_point(pole)
        self.collision_tol = collision_tol
        self.batch, self.n = start.shape[0], start.shape[1]
        self.failed: Dict[int, GGError] = {}
        self.words: List[List[int]] = [[] for _ in range(self.batch)]
        self.events: List[List[CrossingEvent]] = [[] for _ in range(self.batch)]
        self.prev_points = np.array(start, dtype=float)
        self.prev_t = 0.0
        planar = self._project(self.prev_points)
        self.order = np.argsort(planar[..., 0], axis=1, kind="stable")
        self.initial_order = self.order.copy()

    def copy(self) -> "CrossingTracker":
        other = object.__new__(CrossingTracker)
        other.pole = self.pole
        other.collision_tol = self.collision_tol
        other.batch, other.n = self.batch, self.n
        other.failed = dict(self.failed)
        other.words = [list(w) for w in self.words]
        other.events = [list(e) for e in self.events]
        other.prev_points = self.prev_points.copy()
        other.prev_t = self.prev_t
        other.order = self.order.copy()
        other.initial_order = self.initial_order
        return other

    def _project(self, points: np.ndarray) -> np.ndarray:
        near = 1.0 - points @ self.pole < POLE_TOL
        if near.any():
            for b in np.unique(np.nonzero(near)[0]):
                self._fail(int(b), PoleTooClose("a strand passes within tolerance of the projection pole"))
            points = np.where(near[..., None], -self.pole, points)
        return stereo_project(points, self.pole)

    def _fail(self, b: int, error: GGError) -> None:
        self.failed.setdefault(b, error)

    def feed(self, t: float, points: np.ndarray) -> None:
        points = np.asarray(points, dtype=float)
        gaps = _min_gap(points)
        for b in np.nonzero(gaps <= self.collision_tol)[0]:
            self._fail(int(b), DegenerateConfig(f"two strands within {self.collision_tol} at t={t:.6f}"))
        planar = self._project(points)
        u_in_old_order = np.take_along_axis(planar[..., 0], self.order, axis=1)
        changed = np.nonzero(np.any(np.diff(u_in_old_order, axis=1) < 0.0, axis=1))[0]
        for b in changed:
            b = int(b)
            if b in self.failed:
                continue
            try:
                order = list(self.order[b])
                self._resolve(b, self.prev_points[b], points[b], self.prev_t, t, order, 0)
                self.order[b] = order
            except _Failure as failure:
                self._fail(b, failure.error)
            except AtPole as exc:
                self._fail(b, PoleTooClose(str(exc)))
        self.prev_points = points.copy()
        self.prev_t = t

    def _resolve(
        self,
        b: int,
        p0: np.ndarray,
        p1: np.ndarray,
        t0: float,
        t1: float,
        order: List[int],
        depth: int,
    ) -> None:
        uv0 = stereo_project(p0, self.pole)
        uv1 = stereo_project(p1, self.pole)
        rank = {strand: idx for idx, strand in enumerate(order)}
        events = []
        for i in range(self.n):
            for j in range(i + 1, self.n):
                d0 = uv0[i, 0] - uv0[j, 0]
                d1 = uv1[i, 0] - uv1[j, 0]
                flipped = d1 > 0.0 if rank[i] < rank[j] else d1 < 0.0
                if not flipped:
                    continue
                denom = d0 - d1
                s = 0.5 if denom == 0.0 else float(np.clip(d0 / denom, 0.0, 1.0))
                events.append((s, i, j))
        events.sort()
        ambiguous = False
        planned = []
        local = list(order)
        for idx, (s, i, j) in enumerate(events):
            if idx > 0 and abs(s - events[idx - 1][0]) < 1e-12:
                ambiguous = True
                break
            ri, rj = local.index(i), local.index(j)
            if abs(ri - rj) != 1:
                ambiguous = True
                break
            low, high = (i, j) if ri < rj else (j, i)
            v_low = (1.0 - s) * uv0[low, 1] + s * uv1[low, 1]
            v_high = (1.0 - s) * uv0[high, 1] + s * uv1[high, 1]
            if abs(v_low - v_high) <= self.collision_tol:
                ambiguous = True
                break
            k = min(ri, rj)
            sign = 1 if v_low > v_high else -1
            planned.append((k + 1, sign, t0 + s * (t1 - t0), (low, high)))
            local[k], local[k + 1] = local[k + 1], local[k]
        if ambiguous:
            if depth >= MAX_REFINEMENTS:
                raise _Failure(UnresolvedCrossing(f"crossing order unresolved near t={t0:.6f} after {depth} halvings"))
            mid = slerp(p0, p1, 0.5)
            tm = 0.5 * (t0 + t1)
            self._resolve(b, p0, mid, t0, tm, order, depth + 1)
            self._resolve(b, mid, p1, tm, t1, order, depth + 1)
            return
        for k, sign, t, (low, high) in planned:
            self.words[b].append(sign * k)
            self.events[b].append(CrossingEvent(t, (low + 1, high + 1), sign))
        order[:] = local

    def result(self, b: int) -> BraidWord:
        if b in self.failed:
            raise self.failed[b]
        return BraidWord(self.n, free_reduce(self.words[b]))

    def start_rank(self, b: int) -> np.ndarray:
        """1-based braid strand label of each input point."""
        ranks = np.empty(self.n, dtype=int)
        ranks[self.initial_order[b]] = np.arange(1, self.n + 1)
        return ranks


def _assert_pure(word: BraidWord) -> None:
    if not permutation(word).is_identity():
        raise InvariantViolation(f"extracted braid is not pure: {permutation(word)}")


def extract_braid(L: LoopSystem, pole: np.ndarray, time_steps: int = DEFAULT_TIME_STEPS) -> BraidWord:
    frames = L.frames(time_steps)
    _, start = next(frames)
    tracker = CrossingTracker(start[None], pole, L.collision_tol)
    if tracker.failed:
        raise tracker.failed[0]
    for t, positions in frames:
        tracker.feed(t, positions[None])
        if tracker.failed:
            raise tracker.failed[0]
    word = tracker.result(0)
    _assert_pure(word)
    return word


def extract_events(L: LoopSystem, pole: np.ndarray, time_steps: int = DEFAULT_TIME_STEPS) -> List[CrossingEvent]:
    frames = L.frames(time_steps)
    _, start = next(frames)
    tracker = CrossingTracker(start[None], pole, L.collision_tol)
    for t, positions in frames:
        tracker.feed(t, positions[None])
    if tracker.failed:
        raise tracker.failed[0]
    return tracker.events[0]


def gamma(
    f: DiffeoTrace,
    x: np.ndarray,
    z: np.ndarray,
    pole: np.ndarray | None = None,
    steps: int = DEFAULT_TIME_STEPS,
    rng: np.random.Generator | None = None,
    retries: int = DEFAULT_GAMMA_RETRIES,
) -> BraidWord:
    """The pure braid traced by x under f, based at z.

    Measure-zero degeneracies are retried with a freshly drawn x only when an
    `rng` is supplied; otherwise they propagate.
    """
    pole = default_pole(f.caps) if pole is None else pole
    x = np.asarray(x, dtype=float)
    if rng is None:
        return extract_braid(build_loops(f, x, z), pole, steps)

    def _note(attempt: int, exc: BaseException) -> None:
        log_warning(LOGGER, "gamma_resample", attempt=attempt, error=str(exc))

    @retry(attempts=retries, exceptions=(AntipodalPair, DegenerateConfig, UnresolvedCrossing, PoleTooClose), on_retry=_note)
    def _attempt(attempt: int) -> BraidWord:
        sample = x if attempt == 0 else normalize(rng.standard_normal(x.shape))
        return extract_braid(build_loops(f, sample, z), pole, steps)

    word, _ = _attempt()
    return word


@dataclass
class BatchResult:
    """Words per snapshot power for each sample of a batch (None where degenerate)."""

    words: Dict[int, List[BraidWord | None]]
    strand_labels: np.ndarray
    failures: Dict[int, str] = field(default_factory=dict)


def gamma_batch(
    f: DiffeoTrace,
    xs: np.ndarray,
    z: np.ndarray,
    pole: np.ndarray,
    steps: int = DEFAULT_TIME_STEPS,
    powers: Sequence[int] = (1,),
    collision_tol: float = COLLISION_TOL,
) -> BatchResult:
    """Braids of f^p for every p in `powers`, sharing one integration of f^max(p).

    The isotopy of f^p is the first p units of the isotopy of f^max(p), so a
    single pass yields all powers.
    """
    xs = normalize(np.asarray(xs, dtype=float))
    z = normalize(np.asarray(z, dtype=float))
    batch, n = xs.shape[0], xs.shape[1]
    zb = np.broadcast_to(z, xs.shape)
    powers = sorted(set(int(p) for p in powers))
    failures: Dict[int, GGError] = {}

    bad_alpha = np.nonzero(np.any(1.0 + np.sum(xs * zb, axis=-1) < ANTIPODAL_TOL, axis=1))[0]
    for b in bad_alpha:
        failures[int(b)] = AntipodalPair("(x_i, z_i) antipodal")
    safe_x = xs.copy()
    safe_x[bad_alpha] = zb[bad_alpha]

    tracker = CrossingTracker(zb.copy(), pole, collision_tol)
    for s in np.linspace(0.0, 1.0, steps + 1)[1:]:
        tracker.feed(float(s) / 3.0, slerp(zb, safe_x, s))

    results: Dict[int, List[BraidWord | None]] = {p: [None] * batch for p in powers}
    trace = f.power(powers[-1])
    per_unit = f.units * f.steps_per_unit
    snapshot_at = {p * per_unit: p for p in powers}
    total = max(1, trace.units * trace.steps_per_unit)

    def _close(p: int, current: np.ndarray) -> None:
        closing = tracker.copy()
        bad_beta = np.any(1.0 + np.sum(current * zb, axis=-1) < ANTIPODAL_TOL, axis=1)
        start = np.where(bad_beta[:, None, None], zb, current)
        for b in np.nonzero(bad_beta)[0]:
            closing._fail(int(b), AntipodalPair("(f(x_i), z_i) antipodal"))
        for s in np.linspace(0.0, 1.0, steps + 1)[1:]:
            closing.feed((2.0 + float(s)) / 3.0, slerp(start, zb, s))
        for b in range(batch):
            if b in failures or b in closing.failed:
                failures.setdefault(b, closing.failed.get(b))
                continue
            word = closing.result(b)
            _assert_pure(word)
            results[p][b] = word

    if per_unit == 0 or trace.units == 0:
        for p in powers:
            _close(p, safe_x)
    else:
        flat = safe_x.reshape(batch * n, 3)
        for index, positions in trace.iterate(flat):
            current = positions.reshape(batch, n, 3)
            tracker.feed((1.0 + index / total) / 3.0, current)
            if index in snapshot_at:
                _close(snapshot_at[index], current)

    for b, error in tracker.failed.items():
        failures.setdefault(b, error)
    for b in failures:
        for p in powers:
            results[p][b] = None
    labels = np.stack([tracker.start_rank(b) for b in range(batch)]) if batch else np.empty((0, n), dtype=int)
    return BatchResult(results, labels, {b: str(e) for b, e in failures.items()})


def dump_scene(
    L: LoopSystem,
    directory: str,
    time_steps: int = DEFAULT_TIME_STEPS,
    record_every: int = 10,
    config_hash: str | None = None,
) -> List[str]:
    """Write one polyline CSV per strand (columns t, x, y, z, plus config_hash when given)."""
    os.makedirs(directory, exist_ok=True)
    rows: List[List[Tuple[float, np.ndarray]]] = [[] for _ in range(L.n)]
    for idx, (t, positions) in enumerate(L.frames(time_steps)):
        if idx % record_every and not (t == 1.0):
            continue
        for strand in range(L.n):
            rows[strand].append((t, positions[strand]))
    paths = []
    for strand, samples in enumerate(rows, start=1):
        path = os.path.join(directory, f"strand_{strand}.csv")
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            tag = [] if config_hash is None else [config_hash]
            writer.writerow(["t", "x", "y", "z"] + (["config_hash"] if tag else []))
            for t, point in samples:
                writer.writerow([f"{t:.9f}", f"{point[0]:.12f}", f"{point[1]:.12f}", f"{point[2]:.12f}"] + tag)
        paths.append(path)
    return paths
