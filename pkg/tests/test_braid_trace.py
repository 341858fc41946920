from dataclasses import replace

import numpy as np
import pytest

from app.services.braid_core import (
    BraidWord,
    DynnikovCoords,
    apply_word,
    delete_strands,
    exponent_sum,
    linking_matrix,
    permutation,
)
from app.services.braid_trace import (
    DegenerateConfig,
    build_loops,
    default_pole,
    dump_scene,
    extract_braid,
    extract_events,
    gamma,
    gamma_batch,
)
from app.services.ham_dynamics import compose, identity_trace, twist_map
from app.services.quasimorphism import signature_of_closure
from app.services.sphere_geom import SphericalCap, sample_in_cap, uniform_batch

NORTH = np.array([0.0, 0.0, 1.0])


@pytest.fixture
def twist_trace():
    return compose([twist_map(SphericalCap(NORTH, 0.1), 1.0)], [1])


@pytest.fixture
def pair():
    # the cap center is fixed; the second point turns just short of once around it
    return np.array([NORTH, [np.sin(0.05), 0.0, np.cos(0.05)]])


def test_full_twist_gives_sigma_one_squared(twist_trace, pair):
    word = gamma(twist_trace, pair, pair.copy())
    assert word == BraidWord(2, (1, 1))
    assert exponent_sum(word) == 2


def test_crossing_events_are_timed_and_signed(twist_trace, pair):
    events = extract_events(build_loops(twist_trace, pair, pair.copy()), default_pole(twist_trace.caps))
    assert [e.sign for e in events] == [1, 1]
    assert all(1.0 / 3.0 <= e.t <= 2.0 / 3.0 for e in events)
    assert events[0].t < events[1].t


def test_batch_shares_one_integration_across_powers(twist_trace, pair):
    result = gamma_batch(twist_trace, pair[None], pair, default_pole(twist_trace.caps), powers=(1, 2))
    assert result.words[1][0] == BraidWord(2, (1, 1))
    assert result.words[2][0] == BraidWord(2, (1, 1, 1, 1))
    assert not result.failures


def test_identity_traces_trivial_braids():
    rng = np.random.default_rng(3)
    xs = uniform_batch(rng, 20, 4)
    z = uniform_batch(rng, 1, 4)[0]
    result = gamma_batch(identity_trace(), xs, z, default_pole([]))
    assert all(word is None or word.is_trivial() for word in result.words[1])


def test_random_scenes_are_pure(twist_trace):
    rng = np.random.default_rng(12)
    xs = uniform_batch(rng, 200, 4)
    z = uniform_batch(rng, 1, 4)[0]
    result = gamma_batch(twist_trace, xs, z, default_pole(twist_trace.caps))
    words = [w for w in result.words[1] if w is not None]
    assert len(words) >= 190
    assert all(permutation(w).is_identity() for w in words)
    assert sorted(result.strand_labels[0]) == [1, 2, 3, 4]


@pytest.mark.slow
def test_ten_thousand_scenes_are_pure(twist_trace):
    rng = np.random.default_rng(13)
    for _ in range(10):
        xs = uniform_batch(rng, 1000, 4)
        z = uniform_batch(rng, 1, 4)[0]
        result = gamma_batch(twist_trace, xs, z, default_pole(twist_trace.caps))
        assert all(w is None or permutation(w).is_identity() for w in result.words[1])


def test_default_pole_avoids_supports():
    cap = SphericalCap(NORTH, 0.1)
    assert np.allclose(default_pole([cap]), -NORTH)
    assert np.allclose(default_pole([]), -NORTH)
    two = [cap, SphericalCap(-NORTH, 0.1)]
    pole = default_pole(two)
    assert all(not c.contains(pole) for c in two)


def test_colliding_points_are_degenerate(twist_trace):
    x = np.array([[1.0, 0.0, 0.0], [1.0, 1e-9, 0.0]])
    with pytest.raises(DegenerateConfig):
        build_loops(twist_trace, x, np.array([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0]]))


def test_dump_scene_writes_one_csv_per_strand(tmp_path, twist_trace, pair):
    loops = build_loops(twist_trace, pair, pair.copy())
    paths = dump_scene(loops, str(tmp_path / "scene"), record_every=50)
    assert [p.rsplit("/", 1)[-1] for p in paths] == ["strand_1.csv", "strand_2.csv"]
    lines = (tmp_path / "scene" / "strand_2.csv").read_text().splitlines()
    assert lines[0] == "t,x,y,z"
    assert len(lines) > 10


def test_extract_braid_from_loop_system(twist_trace, pair):
    loops = build_loops(twist_trace, pair, pair.copy())
    word = extract_braid(loops, default_pole(twist_trace.caps))
    assert word == BraidWord(2, (1, 1))
    assert permutation(word).is_identity()
    still = build_loops(identity_trace(), pair, pair.copy())
    assert extract_braid(still, default_pole([])).is_trivial()


# every support, base point and sample below stays inside this cap, so no
# trajectory enters the southern region where the poles are placed
REGION = SphericalCap(NORTH, 0.2)
SOUTHERN_POLES = [
    -NORTH,
    np.array([np.sin(2.2), 0.0, np.cos(2.2)]),
    np.array([0.0, np.sin(2.6), np.cos(2.6)]),
]


@pytest.fixture
def two_twists():
    f = compose([twist_map(SphericalCap(NORTH, 0.1), 1.0)], [1])
    g = compose([twist_map(SphericalCap([np.sin(0.4), 0.0, np.cos(0.4)], 0.05), -1.5)], [1])
    return f, g


def _region_batch(seed, batch, n=4):
    rng = np.random.default_rng(seed)
    xs = sample_in_cap(rng, REGION, batch * n).reshape(batch, n, 3)
    z = sample_in_cap(rng, REGION, n)
    return xs, z


def _point_linking(result, b, power=1):
    idx = result.strand_labels[b] - 1
    return linking_matrix(result.words[power][b])[np.ix_(idx, idx)]


def test_braid_does_not_depend_on_an_unvisited_pole(two_twists):
    f, _ = two_twists
    xs, z = _region_batch(51, 40)
    results = [gamma_batch(f, xs, z, pole) for pole in SOUTHERN_POLES]
    compared = 0
    for b in range(len(xs)):
        if any(r.words[1][b] is None for r in results):
            continue
        compared += 1
        reference = results[0]
        for other in results[1:]:
            assert np.array_equal(_point_linking(other, b), _point_linking(reference, b))
            assert exponent_sum(other.words[1][b]) == exponent_sum(reference.words[1][b])
            assert signature_of_closure(other.words[1][b]) == signature_of_closure(reference.words[1][b])
    assert compared >= 36


def _agreement_under_refinement(f, xs, z):
    pole = default_pole(f.caps)
    coarse = gamma_batch(f, xs, z, pole)
    fine = gamma_batch(replace(f, step=f.step / 2), xs, z, pole)
    agree = compared = 0
    for b in range(len(xs)):
        if coarse.words[1][b] is None or fine.words[1][b] is None:
            continue
        compared += 1
        assert np.array_equal(_point_linking(coarse, b), _point_linking(fine, b))
        agree += coarse.words[1][b] == fine.words[1][b]
    return agree, compared


def test_halving_the_step_keeps_the_braid(two_twists):
    f, _ = two_twists
    xs, z = _region_batch(52, 30)
    agree, compared = _agreement_under_refinement(f, xs, z)
    assert compared >= 27
    assert agree >= compared - 1


@pytest.mark.slow
def test_halving_the_step_keeps_the_braid_on_a_large_batch(two_twists):
    f, g = two_twists
    xs, z = _region_batch(53, 500)
    agree, compared = _agreement_under_refinement(f.then(g), xs, z)
    assert compared >= 480
    assert agree >= compared - 5


def _dynnikov_image(word, vectors):
    return [apply_word(DynnikovCoords.from_vector(v), word).vector() for v in vectors]


def test_braid_of_a_composition_is_a_cocycle(two_twists):
    f, g = two_twists
    xs, z = _region_batch(54, 25)
    pole = -NORTH
    both = gamma_batch(f.then(g), xs, z, pole)
    first = gamma_batch(f, xs, z, pole)
    second = gamma_batch(g, np.stack([f.apply(x) for x in xs]), z, pole)
    vectors = [(1, 0, 0, 1), (0, 1, -1, 0), (2, -1, 1, 3), (0, 0, 1, 0)]
    compared = 0
    for b in range(len(xs)):
        words = (both.words[1][b], first.words[1][b], second.words[1][b])
        if any(w is None for w in words):
            continue
        compared += 1
        # both pieces start from z, so strand labels agree
        assert np.array_equal(first.strand_labels[b], second.strand_labels[b])
        assert _dynnikov_image(words[0], vectors) == _dynnikov_image(words[1] * words[2], vectors)
    assert compared >= 22


def test_strands_outside_the_support_braid_trivially():
    cap = SphericalCap(NORTH, 0.05)
    f = compose([twist_map(cap, 2.0)], [1])
    xs, z = _region_batch(55, 40, n=5)
    result = gamma_batch(f, xs, z, -NORTH)
    checked = 0
    for b, word in enumerate(result.words[1]):
        if word is None:
            continue
        outside = [int(label) for label, x in zip(result.strand_labels[b], xs[b]) if not cap.contains(x)]
        if len(outside) < 2:
            continue
        checked += 1
        assert delete_strands(word, outside).is_trivial()
    assert checked >= 20
