from __future__ import annotations

import json

import numpy as np
import pytest

from mcl.api._exceptions import ConfigurationError, PersistError
from mcl.api._models import (
    CircuitInstance,
    GateMatrix,
    MeasurementConfiguration,
    MeasurementStatus,
    Purpose,
    StreamKey,
)
from mcl.api.circuit import (
    I4,
    build_layout,
    configuration_from_rows,
    identity_gates,
    load_configuration,
    normalize_outcomes_to_zero,
    random_instance,
    sample_gates,
    sample_haar_su4,
    sample_measurement_configuration,
    save_configuration,
)
from mcl.engine import StateVectorEngine


def test_layout_alternates_pairs():
    # Act
    layout = build_layout(4, 4)

    # Assert
    assert layout.gate_count == 6
    assert [(pl.layer, pl.pair) for pl in layout.placements] == [
        (1, (1, 2)),
        (1, (3, 4)),
        (2, (2, 3)),
        (3, (1, 2)),
        (3, (3, 4)),
        (4, (2, 3)),
    ]
    assert layout.gate_on(1, 2) is None
    assert layout.next_gate(1, 1).index == 4
    assert layout.previous_gate(4, 2).index == 2


@pytest.mark.parametrize("n, t", [(3, 4), (4, 3), (0, 2), (4, 0)])
def test_layout_needs_even_sizes(n: int, t: int):
    with pytest.raises(ConfigurationError):
        build_layout(n, t)


def test_stream_keys_are_reproducible():
    key = StreamKey(42).child(Purpose.GATES, 3)

    assert key == StreamKey(42, (int(Purpose.GATES), 3))
    assert key.rng().random() == StreamKey(42).child(Purpose.GATES, 3).rng().random()
    assert key.rng().random() != StreamKey(42).child(Purpose.GATES, 4).rng().random()


def test_stream_key_rejects_negative_seed():
    with pytest.raises(ConfigurationError):
        StreamKey(-1)


def test_haar_gates_are_special_unitary():
    gates = sample_gates(build_layout(4, 4), StreamKey(7))

    assert all(g.is_special_unitary() for g in gates)
    assert np.allclose(gates[0].matrix, sample_haar_su4(StreamKey(7).child(1)).matrix)


def test_sampling_modes():
    stream = StreamKey(3)

    none = sample_measurement_configuration(4, 6, 0.0, "structural_zero", stream)
    every = sample_measurement_configuration(4, 6, 1.0, "structural_zero", stream)
    deferred = sample_measurement_configuration(4, 6, 1.0, "outcome_deferred", stream)

    assert none.measured_count == 0
    assert every.measured_count == 24 and not every.has_pending
    assert deferred.has_pending
    assert every.status(2, 3) == MeasurementStatus.with_outcome(0)


@pytest.mark.parametrize("p, mode", [(-0.1, "structural_zero"), (1.5, "structural_zero"), (0.5, "sometimes")])
def test_sampling_rejects_bad_arguments(p: float, mode: str):
    with pytest.raises(ConfigurationError):
        sample_measurement_configuration(4, 4, p, mode, StreamKey(0))  # type: ignore[arg-type]


def test_status_rules():
    with pytest.raises(ConfigurationError):
        MeasurementStatus(False, 1)
    with pytest.raises(ConfigurationError):
        MeasurementConfiguration.unmeasured(2, 2).status(3, 1)


def test_configuration_rows_and_serialization(tmp_path):
    # Arrange
    M = configuration_from_rows(["x...", "...1"])

    # Act
    body = M.to_dict()
    path = save_configuration(M, tmp_path / "config.json")

    # Assert
    measured = [s for s in body["sites"] if s["status"] == "measured"]
    assert measured == [
        {"q": 0, "tau": 0, "status": "measured", "outcome": 0},
        {"q": 1, "tau": 3, "status": "measured", "outcome": 1},
    ]
    assert load_configuration(path) == M


def test_configuration_rows_reject_unknown_marker():
    with pytest.raises(ConfigurationError):
        configuration_from_rows(["..?."])


def test_load_configuration_failures(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json", encoding="utf-8")

    with pytest.raises(PersistError):
        load_configuration(bad)
    with pytest.raises(PersistError):
        load_configuration(tmp_path / "missing.json")


def test_instance_validation():
    layout = build_layout(2, 2)
    M = MeasurementConfiguration.unmeasured(2, 2)

    with pytest.raises(ConfigurationError):
        GateMatrix(np.eye(2), (1, 2))
    with pytest.raises(ConfigurationError):
        CircuitInstance(layout, (), M, 0.5)
    with pytest.raises(ConfigurationError):
        CircuitInstance(layout, identity_gates(layout), M, 1.5)
    with pytest.raises(ConfigurationError):
        CircuitInstance(layout, (GateMatrix(I4, (2, 3)),), M, 0.5)


def test_outcome_normalization_keeps_the_output():
    # Arrange
    base = random_instance(4, 6, 0.5, StreamKey(5))
    M = configuration_from_rows(["1.....", "..1..0", ".x..1.", "....11"])
    instance = base.with_configuration(M)
    engine = StateVectorEngine()

    # Act
    normalized = normalize_outcomes_to_zero(instance)

    # Assert
    assert not np.any(normalized.configuration.codes == 1)
    before, w_before = engine.run(instance)
    after, w_after = engine.run(normalized)
    assert w_after == pytest.approx(w_before, rel=1e-10, abs=1e-300)
    assert np.allclose(before.vector(), after.vector(), atol=1e-12)


def test_outcome_normalization_rejects_pending():
    layout = build_layout(2, 2)
    M = sample_measurement_configuration(2, 2, 1.0, "outcome_deferred", StreamKey(0))
    with pytest.raises(ConfigurationError):
        normalize_outcomes_to_zero(CircuitInstance(layout, identity_gates(layout), M, 0.5))


def test_saved_configuration_is_versioned(tmp_path):
    path = save_configuration(MeasurementConfiguration.unmeasured(2, 2), tmp_path / "c.json")
    body = json.loads(path.read_text(encoding="utf-8"))
    assert (body["version"], body["n"], body["t"]) == (1, 2, 2)


def test_haar_entries_have_uniform_second_moment():
    # Act
    moments = np.array([np.abs(sample_haar_su4(StreamKey(0).child(i)).matrix) ** 2 for i in range(10_000)])

    # Assert
    assert np.allclose(moments.mean(axis=0), 0.25, atol=0.01)
    assert np.allclose(moments.sum(axis=1), 1.0)


def test_measured_fraction_matches_the_rate():
    M = sample_measurement_configuration(100, 100, 0.5, "structural_zero", StreamKey(6))

    assert M.measured_count / 10_000 == pytest.approx(0.5, abs=0.02)
