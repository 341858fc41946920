"""Geometry, measure and sampling on the unit sphere.

Areas are normalized so the whole sphere has area 1. A cap of half-angle
theta therefore has area (1 - cos theta) / 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from app.utils.logging import get_logger
from app.utils.validation import GGError

LOGGER = get_logger("services.sphere_geom")

ANTIPODAL_TOL = 1e-9
COLLISION_TOL = 1e-6
SAMPLE_RETRY_CAP = 100
UNIT_TOL = 1e-12


class AntipodalPair(GGError):
    pass


class AtPole(GGError):
    pass


class SamplingBudgetExceeded(GGError):
    pass


def normalize(v: np.ndarray) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    norms = np.linalg.norm(arr, axis=-1, keepdims=True)
    return arr / norms


def as_point(v: np.ndarray | Tuple[float, float, float]) -> np.ndarray:
    arr = normalize(np.asarray(v, dtype=float).reshape(3))
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ConfigTuple:
    points: np.ndarray

    def __post_init__(self) -> None:
        pts = normalize(np.atleast_2d(np.asarray(self.points, dtype=float)))
        if pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError(f"ConfigTuple expects an (n, 3) array, got {pts.shape}")
        if pts.shape[0] > 1 and min_pairwise_distance(pts) <= 0.0:
            raise ValueError("ConfigTuple points must be pairwise distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return int(self.points.shape[0])

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, index: int) -> np.ndarray:
        return self.points[index]


@dataclass(frozen=True, eq=False)
class GeodesicArc:
    a: np.ndarray
    b: np.ndarray
    angle: float = field(init=False)

    def __post_init__(self) -> None:
        a = as_point(self.a)
        b = as_point(self.b)
        if 1.0 + float(np.dot(a, b)) < ANTIPODAL_TOL:
            raise AntipodalPair("endpoints are antipodal; the shortest path is not unique")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "angle", float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0))))

    @property
    def length(self) -> float:
        return self.angle

    def __call__(self, s: float | np.ndarray) -> np.ndarray:
        return slerp(self.a, self.b, s)


def slerp(a: np.ndarray, b: np.ndarray, s: float | np.ndarray) -> np.ndarray:
    """Constant-speed great-circle interpolation, vectorized over leading axes.

    `a` and `b` may be (..., 3) stacks; `s` broadcasts against their leading
    shape. Pairs closer than float noise fall back to normalized lerp.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = np.asarray(s, dtype=float)
    cos = np.clip(np.sum(a * b, axis=-1), -1.0, 1.0)
    if np.any(1.0 + cos < ANTIPODAL_TOL):
        raise AntipodalPair("cannot interpolate between antipodal points")
    omega = np.arccos(cos)
    sin = np.sin(omega)
    small = sin < 1e-12
    safe = np.where(small, 1.0, sin)
    wa = np.where(small, 1.0 - s, np.sin((1.0 - s) * omega) / safe)
    wb = np.where(small, s, np.sin(s * omega) / safe)
    return normalize(wa[..., None] * a + wb[..., None] * b)


def geodesic_arc(a: np.ndarray, b: np.ndarray) -> GeodesicArc:
    return GeodesicArc(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def tangent_frame(pole: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Right-handed orthonormal pair (e1, e2) with e1 x e2 = pole."""
    pole = as_point(pole)
    helper = np.array([1.0, 0.0, 0.0]) if abs(pole[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = normalize(helper - np.dot(helper, pole) * pole)
    e2 = np.cross(pole, e1)
    return e1, e2


def stereo_project(p: np.ndarray, pole: np.ndarray) -> np.ndarray:
    """Project from `pole` onto the plane through the origin orthogonal to it.

    The equator of `pole` lands on the unit circle and -pole on the origin.
    Accepts (..., 3) stacks and returns (..., 2).
    """
    pole = as_point(pole)
    p = np.asarray(p, dtype=float)
    s = p @ pole
    if np.any(1.0 - s < ANTIPODAL_TOL):
        raise AtPole("point coincides with the projection pole")
    e1, e2 = tangent_frame(pole)
    denom = 1.0 - s
    return np.stack([(p @ e1) / denom, (p @ e2) / denom], axis=-1)


@dataclass(frozen=True, eq=False)
class SphericalCap:
    center: np.ndarray
    area: float

    def __post_init__(self) -> None:
        if not 0.0 < self.area < 1.0:
            raise ValueError(f"cap area must lie in (0, 1), got {self.area}")
        object.__setattr__(self, "center", as_point(self.center))

    @property
    def cos_half_angle(self) -> float:
        return 1.0 - 2.0 * self.area

    @property
    def half_angle(self) -> float:
        return float(np.arccos(self.cos_half_angle))

    def contains(self, p: np.ndarray) -> np.ndarray | bool:
        inside = np.asarray(p, dtype=float) @ self.center >= self.cos_half_angle
        return bool(inside) if np.ndim(inside) == 0 else inside

    def radius_of(self, p: np.ndarray) -> np.ndarray:
        return np.arccos(np.clip(np.asarray(p, dtype=float) @ self.center, -1.0, 1.0))

    def boundary_distance(self, p: np.ndarray) -> np.ndarray:
        """Signed geodesic distance to the boundary circle, positive inside."""
        return self.half_angle - self.radius_of(p)

    def complement(self) -> "SphericalCap":
        return SphericalCap(-self.center, 1.0 - self.area)

    def margin_to(self, other: "SphericalCap") -> float:
        gap = float(np.arccos(np.clip(np.dot(self.center, other.center), -1.0, 1.0)))
        return gap - self.half_angle - other.half_angle


def disc_region(center: np.ndarray, area: float) -> SphericalCap:
    return SphericalCap(np.asarray(center, dtype=float), float(area))


def min_pairwise_distance(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=float)
    if pts.shape[-2] < 2:
        return float("inf")
    diff = pts[..., :, None, :] - pts[..., None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    n = pts.shape[-2]
    dist[..., np.arange(n), np.arange(n)] = np.inf
    return float(dist.min())


def _draw(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    return normalize(rng.standard_normal(shape + (3,)))


def uniform_sample(
    rng: np.random.Generator,
    n: int,
    collision_tol: float = COLLISION_TOL,
    retry_cap: int = SAMPLE_RETRY_CAP,
) -> ConfigTuple:
    if n < 1:
        raise ValueError("n must be at least 1")
    for _ in range(retry_cap):
        pts = _draw(rng, (n,))
        if min_pairwise_distance(pts) > collision_tol:
            return ConfigTuple(pts)
    raise SamplingBudgetExceeded(
        f"no collision-free {n}-tuple after {retry_cap} draws; collision tolerance {collision_tol} too large"
    )


def uniform_batch(
    rng: np.random.Generator,
    count: int,
    n: int,
    collision_tol: float = COLLISION_TOL,
    retry_cap: int = SAMPLE_RETRY_CAP,
) -> np.ndarray:
    """Draw `count` collision-free n-tuples as a (count, n, 3) array."""
    out = _draw(rng, (count, n))
    for _ in range(retry_cap):
        bad = _colliding_rows(out, collision_tol)
        if not bad.any():
            return out
        out[bad] = _draw(rng, (int(bad.sum()), n))
    raise SamplingBudgetExceeded(
        f"collision tolerance {collision_tol} too large for {n}-point samples"
    )


def _colliding_rows(batch: np.ndarray, tol: float) -> np.ndarray:
    n = batch.shape[1]
    if n < 2:
        return np.zeros(batch.shape[0], dtype=bool)
    diff = batch[:, :, None, :] - batch[:, None, :, :]
    dist = np.linalg.norm(diff, axis=-1)
    dist[:, np.arange(n), np.arange(n)] = np.inf
    return dist.min(axis=(1, 2)) <= tol


def sample_in_cap(rng: np.random.Generator, cap: SphericalCap, count: int) -> np.ndarray:
    """Area-uniform points inside `cap`, shape (count, 3)."""
    heights = rng.uniform(cap.cos_half_angle, 1.0, size=count)
    phis = rng.uniform(0.0, 2.0 * np.pi, size=count)
    e1, e2 = tangent_frame(cap.center)
    radial = np.sqrt(np.clip(1.0 - heights**2, 0.0, None))
    pts = (
        heights[:, None] * cap.center
        + (radial * np.cos(phis))[:, None] * e1
        + (radial * np.sin(phis))[:, None] * e2
    )
    return normalize(pts)


def rotation_between(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotation matrix taking unit vector a to unit vector b (Rodrigues)."""
    a = as_point(a)
    b = as_point(b)
    axis = np.cross(a, b)
    s = float(np.linalg.norm(axis))
    c = float(np.dot(a, b))
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        perp, _ = tangent_frame(a)
        return 2.0 * np.outer(perp, perp) - np.eye(3)
    k = axis / s
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + s * kx + (1.0 - c) * (kx @ kx)


def fibonacci_centers(m: int) -> np.ndarray:
    """Near-uniform spherical Fibonacci lattice of m points."""
    if m == 1:
        return np.array([[0.0, 0.0, 1.0]])
    idx = np.arange(m, dtype=float) + 0.5
    heights = 1.0 - 2.0 * idx / m
    golden = np.pi * (3.0 - np.sqrt(5.0))
    phis = golden * idx
    radial = np.sqrt(1.0 - heights**2)
    return normalize(np.stack([radial * np.cos(phis), radial * np.sin(phis), heights], axis=-1))
