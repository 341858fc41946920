"""Autonomous Hamiltonians on the sphere and their time-1 maps.

Hamilton's equation is taken against the normalized area form
omega = dA / (4 pi), so X_H(p) = 4 pi * (p x grad H(p)) with grad the
ambient gradient. Positive twist strength turns counterclockwise about the
cap center as seen from outside the sphere, one full turn per unit time at
the center for strength 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterator, List, Sequence, Tuple

import numpy as np

from app.services.sphere_geom import SphericalCap, as_point, normalize, tangent_frame
from app.utils.logging import get_logger
from app.utils.validation import GGError

LOGGER = get_logger("services.ham_dynamics")

HAMILTONIAN_CONST = 4.0 * np.pi
DEFAULT_STEP = 1e-3
RENORM_TOL = 1e-6


class StepSizeTooLarge(GGError):
    pass


@dataclass(frozen=True, eq=False)
class HamiltonianSystem:
    """Closed-form model Hamiltonian.

    kind "twist": H = -s * r0^2/12 * (1 - r^2/r0^2)^3 inside the cap, 0 outside,
    r the geodesic distance to the cap center.
    kind "height": H = s * <p, axis>, a rigid rotation about axis.
    kind "constant": H = 0.
    """

    kind: str
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    strength: float = 1.0
    cap: SphericalCap | None = None

    def __post_init__(self) -> None:
        if self.kind not in {"twist", "height", "constant"}:
            raise ValueError(f"unknown Hamiltonian kind {self.kind!r}")
        if self.kind == "twist" and self.cap is None:
            raise ValueError("a twist needs a support cap")
        object.__setattr__(self, "axis", as_point(self.axis))

    @property
    def is_identity(self) -> bool:
        return self.kind == "constant" or self.strength == 0.0

    def value(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        if self.is_identity:
            return np.zeros(p.shape[:-1])
        if self.kind == "height":
            return self.strength * (p @ self.axis)
        r0 = self.cap.half_angle
        r = np.arccos(np.clip(p @ self.axis, -1.0, 1.0))
        bump = np.clip(1.0 - (r / r0) ** 2, 0.0, None)
        return -self.strength * (r0**2 / 12.0) * bump**3

    def gradient(self, p: np.ndarray) -> np.ndarray:
        """Ambient gradient; only its tangential part matters for X_H."""
        p = np.asarray(p, dtype=float)
        if self.is_identity:
            return np.zeros_like(p)
        if self.kind == "height":
            return np.broadcast_to(self.strength * self.axis, p.shape).copy()
        return -0.5 * self.strength * self._twist_weight(p)[..., None] * self.axis

    def angular_speed(self, p: np.ndarray) -> np.ndarray:
        """Rate of rotation about `axis` at p, in radians per unit time."""
        p = np.asarray(p, dtype=float)
        if self.is_identity:
            return np.zeros(p.shape[:-1])
        if self.kind == "height":
            return np.full(p.shape[:-1], -HAMILTONIAN_CONST * self.strength)
        return 2.0 * np.pi * self.strength * self._twist_weight(p)

    def _twist_weight(self, p: np.ndarray) -> np.ndarray:
        r0 = self.cap.half_angle
        r = np.arccos(np.clip(p @ self.axis, -1.0, 1.0))
        sin = np.sin(r)
        ratio = np.where(sin < 1e-12, 1.0, r / np.where(sin < 1e-12, 1.0, sin))
        bump = np.clip(1.0 - (r / r0) ** 2, 0.0, None)
        return np.where(r < r0, ratio * bump**2, 0.0)


def constant() -> HamiltonianSystem:
    return HamiltonianSystem("constant")


def height(axis: Sequence[float], strength: float = 1.0) -> HamiltonianSystem:
    return HamiltonianSystem("height", np.asarray(axis, dtype=float), float(strength))


def hamiltonian_vector_field(H: HamiltonianSystem, p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if H.is_identity:
        return np.zeros_like(p)
    return HAMILTONIAN_CONST * np.cross(p, H.gradient(p))


def twist_map(cap: SphericalCap, strength: float) -> HamiltonianSystem:
    if strength == 0:
        raise ValueError("twist strength must be nonzero")
    return HamiltonianSystem("twist", cap.center, float(strength), cap)


def inverse(H: HamiltonianSystem) -> HamiltonianSystem:
    return replace(H, strength=-H.strength)


def rescale_support(f: HamiltonianSystem, epsilon: float) -> HamiltonianSystem:
    if f.cap is None:
        raise ValueError("rescale_support needs a declared support cap")
    if not 0.0 < epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if epsilon == 1.0:
        return f
    return replace(f, cap=SphericalCap(f.cap.center, f.cap.area * epsilon))


def rescale_point(p: np.ndarray, source: SphericalCap, target: SphericalCap) -> np.ndarray:
    """Radial map of `source` onto `target`, both centered at the same point."""
    p = np.asarray(p, dtype=float)
    center = source.center
    r = np.arccos(np.clip(p @ center, -1.0, 1.0))
    along = p - (p @ center)[..., None] * center
    norm = np.linalg.norm(along, axis=-1, keepdims=True)
    direction = np.where(norm < 1e-15, tangent_frame(center)[0], along / np.where(norm < 1e-15, 1.0, norm))
    r_new = r * (target.half_angle / source.half_angle)
    return normalize(np.cos(r_new)[..., None] * center + np.sin(r_new)[..., None] * direction)


def conjugate_by_rotation(f: HamiltonianSystem, R: np.ndarray) -> HamiltonianSystem:
    R = np.asarray(R, dtype=float)
    if not np.allclose(R @ R.T, np.eye(3), atol=1e-10) or np.linalg.det(R) < 0:
        raise ValueError("conjugation needs a proper rotation matrix")
    axis = R @ f.axis
    cap = SphericalCap(R @ f.cap.center, f.cap.area) if f.cap is not None else None
    return replace(f, axis=axis, cap=cap)


def _rk4_step(H: HamiltonianSystem, p: np.ndarray, h: float, sign: float) -> np.ndarray:
    k1 = sign * hamiltonian_vector_field(H, p)
    k2 = sign * hamiltonian_vector_field(H, p + 0.5 * h * k1)
    k3 = sign * hamiltonian_vector_field(H, p + 0.5 * h * k2)
    k4 = sign * hamiltonian_vector_field(H, p + h * k3)
    increment = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    moved = np.any(increment != 0.0, axis=-1)
    if not moved.any():
        return p
    out = p.copy()
    trial = p[moved] + increment[moved]
    norms = np.linalg.norm(trial, axis=-1)
    drift = float(np.max(np.abs(norms - 1.0)))
    if drift > RENORM_TOL:
        raise StepSizeTooLarge(f"renormalization correction {drift:.3e} exceeds {RENORM_TOL}; reduce the step")
    out[moved] = trial / norms[:, None]
    return out


def flow(H: HamiltonianSystem, t: float, p: np.ndarray, h: float = DEFAULT_STEP) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if t == 0.0 or H.is_identity:
        return p.copy()
    nsteps = int(np.ceil(abs(t) / h - 1e-9))
    step = abs(t) / nsteps
    sign = 1.0 if t > 0 else -1.0
    current = p.copy()
    for _ in range(nsteps):
        current = _rk4_step(H, current, step, sign)
    return current


@dataclass(frozen=True)
class DiffeoTrace:
    """Concatenated isotopy of unit-time autonomous flows.

    `schedule` lists the unit flows in the order they are traversed; the
    rightmost factor of a composition is traversed first.
    """

    schedule: Tuple[Tuple[HamiltonianSystem, int], ...]
    step: float = DEFAULT_STEP

    @property
    def units(self) -> int:
        return len(self.schedule)

    @property
    def steps_per_unit(self) -> int:
        return int(round(1.0 / self.step))

    @property
    def is_identity(self) -> bool:
        return all(system.is_identity for system, _ in self.schedule)

    @property
    def caps(self) -> List[SphericalCap]:
        seen: List[SphericalCap] = []
        for system, _ in self.schedule:
            if system.cap is not None and not any(system.cap is cap for cap in seen):
                seen.append(system.cap)
        return seen

    def power(self, p: int) -> "DiffeoTrace":
        if p < 0:
            flipped = tuple((system, -sign) for system, sign in reversed(self.schedule))
            return DiffeoTrace(flipped * (-p), self.step)
        return DiffeoTrace(self.schedule * p, self.step)

    def inverse(self) -> "DiffeoTrace":
        return self.power(-1)

    def then(self, other: "DiffeoTrace") -> "DiffeoTrace":
        """other o self: traverse self first."""
        return DiffeoTrace(self.schedule + other.schedule, self.step)

    def rescaled(self, epsilon: float) -> "DiffeoTrace":
        """Every cap-supported factor shrunk to epsilon times its support area."""
        shrunk: dict[int, HamiltonianSystem] = {}
        schedule = []
        for system, sign in self.schedule:
            if system.cap is not None:
                system = shrunk.setdefault(id(system), rescale_support(system, epsilon))
            schedule.append((system, sign))
        return DiffeoTrace(tuple(schedule), self.step)

    def conjugated(self, R: np.ndarray) -> "DiffeoTrace":
        moved: dict[int, HamiltonianSystem] = {}
        schedule = []
        for system, sign in self.schedule:
            schedule.append((moved.setdefault(id(system), conjugate_by_rotation(system, R)), sign))
        return DiffeoTrace(tuple(schedule), self.step)

    def iterate(self, points: np.ndarray) -> Iterator[Tuple[int, np.ndarray]]:
        """Yield (global_step, positions) after every integrator step."""
        current = np.asarray(points, dtype=float).copy()
        h = 1.0 / self.steps_per_unit
        index = 0
        for system, sign in self.schedule:
            if system.is_identity:
                index += self.steps_per_unit
                yield index, current
                continue
            for _ in range(self.steps_per_unit):
                index += 1
                current = _rk4_step(system, current, h, float(sign))
                yield index, current

    def apply(self, points: np.ndarray, t: float = 1.0) -> np.ndarray:
        """Position at trace time t in [0, 1] (t scaled over all units)."""
        current = np.asarray(points, dtype=float).copy()
        target = int(round(t * self.units * self.steps_per_unit))
        if target == 0:
            return current
        for index, current in self.iterate(current):
            if index >= target:
                break
        return current

    def trajectory(self, point: np.ndarray, record_every: int = 1) -> Tuple[np.ndarray, np.ndarray]:
        """Sampled times and positions of one point, starting exactly at `point`."""
        start = as_point(point).copy()
        total = max(1, self.units * self.steps_per_unit)
        times = [0.0]
        frames = [start]
        for index, current in self.iterate(start[None, :]):
            if index % record_every == 0 or index == total:
                times.append(index / total)
                frames.append(current[0].copy())
        return np.asarray(times), np.asarray(frames)


def compose(
    fs: Sequence[HamiltonianSystem],
    exponents: Sequence[int],
    step: float = DEFAULT_STEP,
) -> DiffeoTrace:
    if not fs:
        raise ValueError("compose needs at least one factor")
    if len(fs) != len(exponents):
        raise ValueError("one exponent per factor is required")
    schedule: List[Tuple[HamiltonianSystem, int]] = []
    for system, exponent in reversed(list(zip(fs, exponents))):
        if exponent == 0:
            continue
        sign = 1 if exponent > 0 else -1
        schedule.extend([(system, sign)] * abs(int(exponent)))
    return DiffeoTrace(tuple(schedule), step)


def identity_trace(step: float = DEFAULT_STEP) -> DiffeoTrace:
    return DiffeoTrace((), step)


def area_distortion(trace: DiffeoTrace, points: np.ndarray, delta: float = 1e-5) -> np.ndarray:
    """|det DF - 1| of the time-1 map at each point via central differences."""
    points = normalize(np.atleast_2d(np.asarray(points, dtype=float)))
    stencil = []
    for p in points:
        e1, e2 = tangent_frame(p)
        for direction in (e1, -e1, e2, -e2):
            stencil.append(normalize(p + delta * direction))
    images = trace.apply(np.asarray(stencil)).reshape(len(points), 4, 3)
    centers = trace.apply(points)
    out = np.empty(len(points))
    for idx, (center, image) in enumerate(zip(centers, images)):
        f1, f2 = tangent_frame(center)
        d1 = (image[0] - image[1]) / (2.0 * delta)
        d2 = (image[2] - image[3]) / (2.0 * delta)
        jac = np.array([[d1 @ f1, d2 @ f1], [d1 @ f2, d2 @ f2]])
        out[idx] = abs(np.linalg.det(jac) - 1.0)
    return out
