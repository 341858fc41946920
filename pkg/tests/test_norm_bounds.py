import numpy as np
import pytest

from app.core.models import GGEstimate, TruncationMode
from app.services.gg_estimator import QuasimorphismMatrix
from app.services.norm_bounds import (
    MissingEstimate,
    PlacementFailed,
    bilipschitz_ratio,
    build_embedding,
    certify,
    evaluate_J,
    generator_trace,
    lower_bound_certificate,
    upper_bound_certificate,
)
from app.utils.validation import InvariantViolation, ValidationError


def _estimate(value: float, stderr: float = 0.01) -> GGEstimate:
    return GGEstimate(value, stderr, 100, 4, "signature", TruncationMode.ENFORCE, 0)


@pytest.fixture
def spec():
    return build_embedding(2, 0.05)


def test_antipodal_generators(spec):
    assert np.allclose(spec.caps[0].center, [0.0, 0.0, 1.0])
    assert np.allclose(spec.caps[1].center, [0.0, 0.0, -1.0])
    assert spec.caps[0].margin_to(spec.caps[1]) > spec.margin
    assert generator_trace(spec, 1).caps == [spec.caps[1]]


def test_placement_checks():
    assert len(build_embedding(3, 0.1).caps) == 3
    with pytest.raises(ValidationError):
        build_embedding(2, 0.5)
    with pytest.raises(PlacementFailed):
        build_embedding(8, 0.12)


def test_evaluate_J_orders_factors(spec):
    trace = evaluate_J(spec, (3, -4))
    assert trace.units == 7
    assert [sign for _, sign in trace.schedule] == [-1] * 4 + [1] * 3
    with pytest.raises(ValidationError):
        evaluate_J(spec, (10, 10), budget=16)
    with pytest.raises(ValidationError):
        evaluate_J(spec, (1,))


def test_upper_bound_counts_autonomous_factors(spec):
    cert = upper_bound_certificate(spec, (3, -4))
    assert cert.upper == 7.0
    assert cert.upper_constant == 1.0
    assert cert.upper_witness == [(1, 1)] * 3 + [(2, -1)] * 4
    assert cert.upper_norms == ["entropy", "autonomous"]


def test_aggregated_lower_bound(spec):
    cert = lower_bound_certificate(spec, (3, -4), [_estimate(3.0), _estimate(-4.0)], [0.5, 0.25])
    assert cert.lower_mode == "aggregated"
    assert cert.lower == pytest.approx(7 / (2 * 0.5))
    assert cert.defect_bound == 0.5
    assert cert.lower_per_generator == pytest.approx([6.0, 16.0])
    low, high = cert.lower_interval
    assert low <= 16.0 <= high


def test_certify_orders_bounds(spec):
    cert = certify(spec, (3, -4), [_estimate(3.0), _estimate(-4.0)], [0.5, 0.5])
    assert cert.lower <= cert.upper == 7.0
    assert cert.status[0] == "upper: formula-exact"
    with pytest.raises(InvariantViolation):
        certify(spec, (3, -4), [_estimate(3.0), _estimate(-4.0)], [0.1, 0.1])


def test_bounds_scale_linearly(spec):
    estimates = [_estimate(1.0), _estimate(1.0)]
    for k in [(1, 0), (2, -1), (3, -4)]:
        doubled = tuple(2 * v for v in k)
        single = certify(spec, k, estimates, [2.0, 2.0])
        double = certify(spec, doubled, estimates, [2.0, 2.0])
        assert double.lower == 2 * single.lower
        assert double.upper == 2 * single.upper


def test_homomorphism_records_prediction(spec):
    matrix = QuasimorphismMatrix(np.eye(2), np.zeros((2, 2)), [])
    cert = certify(spec, (3, -4), [_estimate(3.0), _estimate(-4.0)], [0.0, 0.0], matrix)
    assert cert.lower is None
    assert cert.lower_mode == "homomorphism"
    assert [e["predicted"] for e in cert.estimates] == [3.0, -4.0]
    assert cert.upper == 7.0


def test_change_of_basis_when_matrix_is_not_diagonal(spec):
    values = np.array([[1.0, 0.5], [0.0, 1.0]])
    matrix = QuasimorphismMatrix(values, np.full((2, 2), 0.01), [])
    cert = lower_bound_certificate(spec, (1, 1), [_estimate(1.5), _estimate(1.0)], [1.0, 1.0], matrix)
    assert cert.lower_mode == "change_of_basis"
    assert cert.lower == pytest.approx(2 / (2 * 1.0 * 1.5))


def test_missing_estimates(spec):
    with pytest.raises(MissingEstimate):
        lower_bound_certificate(spec, (1, 1), None, [1.0, 1.0])
    with pytest.raises(MissingEstimate):
        lower_bound_certificate(spec, (1, 1), [_estimate(1.0), None], [1.0, 1.0])


def test_bilipschitz_ratio(spec):
    assert bilipschitz_ratio(spec, [0.5, 1.5]) == 3.0


def test_near_diagonal_matrix_keeps_the_aggregated_bound(spec):
    matrix = QuasimorphismMatrix(np.eye(2), np.full((2, 2), 0.01), [])
    cert = lower_bound_certificate(spec, (3, -4), [_estimate(3.0), _estimate(-4.0)], [0.5, 0.25], matrix)
    assert cert.lower_mode == "aggregated"
    assert cert.lower == pytest.approx(7 / (2 * 0.5))
    assert cert.lower_per_generator == pytest.approx([6.0, 16.0])
    assert not any("singular" in note for note in cert.assumptions)
