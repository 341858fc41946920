import numpy as np
import pytest
from scipy.stats import chisquare

from app.services.sphere_geom import (
    AntipodalPair,
    AtPole,
    ConfigTuple,
    SamplingBudgetExceeded,
    SphericalCap,
    disc_region,
    fibonacci_centers,
    geodesic_arc,
    rotation_between,
    sample_in_cap,
    slerp,
    stereo_project,
    tangent_frame,
    uniform_batch,
    uniform_sample,
)

NORTH = np.array([0.0, 0.0, 1.0])


def test_uniform_heights_pass_chi_square():
    # Archimedes: the height of a uniform point is uniform on [-1, 1]
    rng = np.random.default_rng(11)
    pts = uniform_batch(rng, 20000, 1)[:, 0, :]
    counts, _ = np.histogram(pts[:, 2], bins=20, range=(-1.0, 1.0))
    assert chisquare(counts).pvalue > 1e-3


def test_cap_hit_rate_matches_area():
    rng = np.random.default_rng(3)
    cap = SphericalCap(NORTH, 0.1)
    pts = uniform_batch(rng, 40000, 1)[:, 0, :]
    rate = cap.contains(pts).mean()
    assert rate == pytest.approx(0.1, abs=4 * np.sqrt(0.1 * 0.9 / 40000))


def test_sample_in_cap_stays_inside():
    rng = np.random.default_rng(5)
    cap = SphericalCap(np.array([1.0, 1.0, 0.0]), 0.05)
    pts = sample_in_cap(rng, cap, 500)
    assert np.all(cap.contains(pts))
    assert np.allclose(np.linalg.norm(pts, axis=1), 1.0)


def test_slerp_has_constant_speed():
    a = np.array([1.0, 0.0, 0.0])
    b = np.array([0.0, 1.0, 0.0])
    s = np.linspace(0.0, 1.0, 11)
    pts = slerp(a, b, s)
    steps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert np.allclose(pts[0], a) and np.allclose(pts[-1], b)
    assert np.allclose(steps, steps[0])
    assert geodesic_arc(a, b).length == pytest.approx(np.pi / 2)


def test_antipodal_endpoints_are_rejected():
    with pytest.raises(AntipodalPair):
        geodesic_arc(NORTH, -NORTH)


def test_stereo_projection_frame_and_special_points():
    e1, e2 = tangent_frame(NORTH)
    assert np.allclose(np.cross(e1, e2), NORTH)
    equator = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    assert np.allclose(np.linalg.norm(stereo_project(equator, NORTH), axis=1), 1.0)
    assert np.allclose(stereo_project(-NORTH, NORTH), 0.0)
    with pytest.raises(AtPole):
        stereo_project(NORTH, NORTH)


def test_rotation_between_is_proper():
    rng = np.random.default_rng(0)
    for a, b in [(NORTH, rng.standard_normal(3)), (NORTH, -NORTH)]:
        R = rotation_between(a, b)
        assert np.allclose(R @ R.T, np.eye(3))
        assert np.linalg.det(R) == pytest.approx(1.0)
        assert np.allclose(R @ a, b / np.linalg.norm(b))


def test_cap_geometry():
    cap = SphericalCap(NORTH, 0.25)
    assert cap.half_angle == pytest.approx(np.pi / 3)
    assert cap.complement().area == pytest.approx(0.75)
    assert cap.margin_to(SphericalCap(-NORTH, 0.25)) == pytest.approx(np.pi / 3)
    with pytest.raises(ValueError):
        SphericalCap(NORTH, 1.0)


def test_collision_budget_is_reported():
    with pytest.raises(SamplingBudgetExceeded):
        uniform_sample(np.random.default_rng(1), 3, collision_tol=3.0, retry_cap=5)


def test_config_tuple_rejects_duplicates():
    with pytest.raises(ValueError):
        ConfigTuple(np.array([NORTH, NORTH]))


def test_fibonacci_centers_are_unit():
    centers = fibonacci_centers(7)
    assert centers.shape == (7, 3)
    assert np.allclose(np.linalg.norm(centers, axis=1), 1.0)


def test_disc_region_matches_cap_area_formula():
    half = disc_region(NORTH, 0.5)
    assert half.half_angle == pytest.approx(np.pi / 2)
    tenth = disc_region(NORTH, 0.1)
    assert (1.0 - np.cos(tenth.half_angle)) / 2.0 == pytest.approx(0.1)
    assert tenth.complement().area == pytest.approx(0.9)
