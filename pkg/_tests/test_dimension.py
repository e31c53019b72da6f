from __future__ import annotations

import math

import numpy as np
import pytest

from mcl.api._exceptions import ConfigurationError
from mcl.api._models import CircuitInstance, MeasurementConfiguration, StreamKey
from mcl.api._responses import RankReport
from mcl.api.circuit import build_layout, configuration_from_rows, identity_gates, random_instance, sample_gates
from mcl.api.dimension import (
    cm_lower_bound,
    estimate_accessible_dimension,
    numerical_rank,
    pairs_for,
    perturbed_outputs,
    projector_monotonicity_test,
    realify,
    short_circuit_dim_bound,
)


def test_single_gate_reaches_the_state_sphere():
    report = estimate_accessible_dimension(MeasurementConfiguration.unmeasured(2, 2), samples=1, stream=StreamKey(1))

    assert report.rank == 7
    assert not report.degenerate
    assert (report.n, report.t, report.gate_count) == (2, 2, 1)


def test_fully_measured_output_is_pinned():
    M = configuration_from_rows(["xx", "xx"])
    report = estimate_accessible_dimension(M, samples=2, stream=StreamKey(2))
    assert report.rank <= 2


def test_rank_does_not_depend_on_the_rate():
    M = configuration_from_rows(["..x.", "....", ".x..", "...."])

    low = estimate_accessible_dimension(M, samples=1, stream=StreamKey(3), p=0.2)
    high = estimate_accessible_dimension(M, samples=1, stream=StreamKey(3), p=0.8)

    assert low.rank == high.rank


def test_extra_projector_never_raises_the_rank():
    d, d_prime, ok = projector_monotonicity_test(
        MeasurementConfiguration.unmeasured(4, 4), (2, 2), samples=1, stream=StreamKey(4)
    )
    assert ok
    assert d_prime <= d


def test_monotonicity_needs_an_unmeasured_site():
    with pytest.raises(ConfigurationError):
        projector_monotonicity_test(configuration_from_rows(["x.", ".."]), (1, 1))


def test_perturbations_restricted_to_chosen_gates():
    # Arrange
    layout = build_layout(4, 4)
    instance = CircuitInstance(layout, sample_gates(layout, StreamKey(5)), MeasurementConfiguration.unmeasured(4, 4), 0.5)

    # Act
    realified = perturbed_outputs(instance, "single_qubit6", gates={1, 3})

    # Assert
    assert realified.matrix.shape == (32, 12)
    assert {idx.gate for idx in realified.indices} == {1, 3}
    assert realified.indices[0].family == "single_qubit6"


def test_numerical_rank_thresholds():
    clean = numerical_rank(np.diag([1.0, 1e-3, 1e-12]), tol=1e-9)
    murky = numerical_rank(np.diag([1.0, 1e-8, 1e-10]), tol=1e-9)

    assert clean.rank == 2 and not clean.degenerate
    assert murky.rank == 2 and murky.degenerate
    assert numerical_rank(np.zeros((3, 3))).rank == 0


@pytest.mark.parametrize("tol", [0.0, 1.0, -1e-3])
def test_numerical_rank_rejects_tolerance(tol: float):
    with pytest.raises(ConfigurationError):
        numerical_rank(np.eye(2), tol=tol)


def test_unknown_family():
    with pytest.raises(ConfigurationError):
        pairs_for("pauli9")  # type: ignore[arg-type]


def test_rank_report_serialization_truncates_spectrum():
    report = RankReport(np.linspace(1.0, 0.0, 40), 1e-9, 39, n=4, t=4, gate_count=6, family="full15")

    body = report.to_dict(keep=8)

    assert len(body["singular_values"]) == 8
    assert RankReport.from_dict(body).rank == 39


def test_bound_formulas():
    bound = cm_lower_bound(100.0, 4)

    assert bound.divisor_13 == pytest.approx(86 / 13)
    assert bound.divisor_11 == pytest.approx(86 / 11)
    assert cm_lower_bound(5.0, 4).divisor_13 == 0.0
    assert short_circuit_dim_bound(2, 3, 4) == (33, 34)
    with pytest.raises(ConfigurationError):
        short_circuit_dim_bound(2, 5, 4)


def test_single_qubit_perturbations_on_the_first_leg():
    # Arrange
    layout = build_layout(2, 2)
    instance = CircuitInstance(layout, identity_gates(layout), MeasurementConfiguration.unmeasured(2, 2), 0.5)

    # Act
    realified = perturbed_outputs(instance, "single_qubit6")
    columns = {(idx.alpha, idx.beta): realified.matrix[:, k] for k, idx in enumerate(realified.indices)}

    # Assert
    assert np.allclose(columns["Z", "I"], np.eye(8)[0])
    assert np.allclose(columns["X", "I"], np.eye(8)[1])
    assert np.allclose(columns["I", "X"], np.eye(8)[2])
    assert realified.log_scale == pytest.approx(2 * math.log(0.5))


def test_rank_ignores_global_phase_and_repeated_columns():
    # Arrange
    layout = build_layout(4, 4)
    instance = CircuitInstance(layout, sample_gates(layout, StreamKey(6)), MeasurementConfiguration.unmeasured(4, 4), 0.5)
    base = perturbed_outputs(instance, "single_qubit6", gates={1, 2})
    half = base.matrix.shape[0] // 2
    complex_columns = base.matrix[:half] + 1j * base.matrix[half:]

    # Act
    rotated = numerical_rank(realify(np.exp(0.7j) * complex_columns))
    repeated = numerical_rank(np.hstack([base.matrix, base.matrix[:, :3]]))

    # Assert
    assert rotated.rank == numerical_rank(base).rank
    assert repeated.rank == numerical_rank(base).rank


def test_deep_instance_keeps_perturbed_columns():
    # Arrange
    instance = random_instance(2, 1000, 0.5, StreamKey(7))

    # Act
    realified = perturbed_outputs(instance, "single_qubit6", gates={1, 250, 500})

    # Assert
    assert math.isfinite(realified.log_scale)
    norms = np.linalg.norm(realified.matrix, axis=0)
    assert norms.max() > 0.1
    assert numerical_rank(realified).rank >= 1
