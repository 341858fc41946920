import numpy as np
import pytest

from app.services.braid_core import BraidWord, NotPure, linking_number, parse_braid, permutation, random_word
from app.services.quasimorphism import (
    closure_diagram,
    empirical_defect,
    homogenize,
    linking_total,
    pure_generator,
    relabel_quasimorphism,
    resolve_quasimorphism,
    richardson,
    seifert_signature,
    signature_of_closure,
    word_pair_sampler,
)
from app.utils.validation import ValidationError


@pytest.mark.parametrize(
    ("text", "expected"),
    [
        ("2; 1 1 1", -2),
        ("3; 1 -2 1 -2", 0),
        ("3;", 0),
        ("2; 1", 0),
        ("2; -1 -1 -1", 2),
        ("4; 1 3", 0),
    ],
)
def test_signature_oracles(text, expected):
    assert signature_of_closure(parse_braid(text)) == expected


@pytest.mark.parametrize("p", [1, 2, 3, 4])
def test_torus_link_signatures(p):
    w = BraidWord(2, (1,) * (2 * p))
    assert signature_of_closure(w) == -(2 * p - 1)
    assert seifert_signature(w) == -(2 * p - 1)


def test_goeritz_and_seifert_agree_on_random_words():
    rng = np.random.default_rng(21)
    for _ in range(40):
        n = int(rng.integers(2, 5))
        w = random_word(rng, n, int(rng.integers(0, 9)))
        assert signature_of_closure(w) == seifert_signature(w), str(w)


def test_closure_diagram_counts_crossings():
    data = closure_diagram(parse_braid("4; 1 -2 1 3"))
    assert data.crossing_count == 4
    assert data.matrix.shape[0] == data.matrix.shape[1]
    assert np.allclose(data.matrix, data.matrix.T)


def test_homogenized_signature_of_full_twist():
    q = resolve_quasimorphism("signature")
    result = homogenize(q, BraidWord(2, (1, 1)), (8, 16, 32))
    assert result.value == pytest.approx(-2.0, abs=0.05)
    assert [p for p, _ in result.sequence] == [8, 16, 32]


def test_homogenization_of_homomorphisms_is_exact():
    q = resolve_quasimorphism("exponent_sum")
    assert float(homogenize(q, parse_braid("3; 1 -2 1"))) == 1.0
    assert homogenize(q, BraidWord(3)).value == 0.0
    with pytest.raises(ValueError):
        homogenize(q, parse_braid("3; 1"), (4, 4))


def test_richardson_cancels_one_over_p():
    points = [(p, -2.0 + 1.0 / p) for p in (8, 16, 32)]
    assert richardson(points) == pytest.approx(-2.0)


def test_empirical_defects():
    rng = np.random.default_rng(0)
    sampler = word_pair_sampler(4, 20)
    assert empirical_defect(resolve_quasimorphism("exponent_sum"), sampler, 200, rng) == 0.0
    assert empirical_defect(resolve_quasimorphism("signature"), sampler, 200, rng) > 0.0
    with pytest.raises(ValueError):
        empirical_defect(resolve_quasimorphism("signature"), sampler, 0, rng)


def test_pure_generators_link_one_pair():
    w = pure_generator(4, 1, 3, sign=-1)
    assert permutation(w).is_identity()
    assert linking_number(w, 1, 3) == -1
    assert linking_number(w, 2, 3) == 0 and linking_number(w, 1, 2) == 0


def test_linking_total():
    assert linking_total(parse_braid("3; 1 1 2 2")) == 2.0
    with pytest.raises(NotPure):
        linking_total(parse_braid("3; 1"))


def test_relabel_maps_points_to_strands():
    q = resolve_quasimorphism("linking:1,2")
    w = parse_braid("3; 2 2")
    assert relabel_quasimorphism(q, (1, 3, 2))(w) == 0.0
    assert relabel_quasimorphism(q, (3, 2, 1))(w) == 1.0
    assert relabel_quasimorphism(resolve_quasimorphism("signature"), (2, 1)).name == "signature"


def test_registry():
    assert resolve_quasimorphism("signature").exact_defect is False
    synthetic = resolve_quasimorphism("synthetic:0.25")
    assert synthetic.is_synthetic and synthetic.stand_in == 0.25
    assert [synthetic.sample_value(k, 4) for k in (4, 3, 2)] == [1.0, 0.25, 0.0]
    assert resolve_quasimorphism("synthetic").stand_in == 0.5
    for bad in ("nope", "linking:2,1", "linking:x", "synthetic:abc"):
        with pytest.raises(ValidationError):
            resolve_quasimorphism(bad)


def test_conjugate_of_sigma_one_closes_to_an_unlink():
    # sigma_2 sigma_1 sigma_2^-1 written with both columns crossing twice
    w = parse_braid("3; 1 2 1 -2 -2")
    assert signature_of_closure(w) == 0
    assert signature_of_closure(w.inverse()) == 0
    assert seifert_signature(w) == 0


def _multi_column_words(seed, count):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(3, 7))
        yield random_word(rng, n, int(rng.integers(4, 15)))


def test_signature_is_a_link_invariant_on_random_words():
    for w in _multi_column_words(33, 1000):
        value = signature_of_closure(w)
        assert signature_of_closure(w.inverse()) == -value, str(w)
        shift = len(w.letters) // 2
        rotated = BraidWord(w.n, w.letters[shift:] + w.letters[:shift])
        assert signature_of_closure(rotated) == value, str(w)


def test_goeritz_and_seifert_agree_on_multi_column_words():
    for w in _multi_column_words(34, 300):
        assert signature_of_closure(w) == seifert_signature(w), str(w)


@pytest.mark.parametrize("k", [2, 3])
def test_homogenization_scales_with_powers(k):
    # |signature(w^p) - p * limit| <= n, so two-point extrapolation differs by at most 2n(1 + k) / (p2 - p1)
    q = resolve_quasimorphism("signature")
    schedule = (16, 32, 64)
    words = [parse_braid("3; 1 1 2 -2 -1 2"), parse_braid("2; 1 1"), parse_braid("3; 1 -2")]
    words += list(_multi_column_words(35, 8))
    for w in words:
        tolerance = 2 * w.n * (1 + k) / (schedule[-1] - schedule[-2])
        base = homogenize(q, w, schedule).value
        assert homogenize(q, w.power(k), schedule).value == pytest.approx(k * base, abs=tolerance), str(w)
