from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pytest

from mcl.api._exceptions import (
    ConfigurationError,
    GadgetPreconditionViolated,
    InsufficientPaths,
    NoBridgeFound,
    PersistError,
)
from mcl.api._models import MeasurementConfiguration, StreamKey
from mcl.api._responses import CrossingPath
from mcl.api.circuit import H, I2, I4, S, X, configuration_from_rows, sample_measurement_configuration
from mcl.api.embedding import (
    LogicalCircuit,
    SingleQubitGate,
    TwoQubitGate,
    assign_gates,
    dump_plan,
    embedded_dimension_bound,
    expected_weight,
    plan_embedding,
    random_logical_circuit,
    verify_embedding,
)
from mcl.api.percolation import circuit_to_bond_lattice


BELL_ROWS = ["....", "..x.", "....", "x..."]


def _bell(v1: np.ndarray = I2) -> LogicalCircuit:
    return LogicalCircuit(2, ((TwoQubitGate(1, cnot=True, u2=H, v1=v1),),))


def _edge(lattice, q: int, x: int, y: int) -> int:
    for e in range(lattice.edge_count):
        if lattice.edge_qubit[e] == q and {int(lattice.u[e]), int(lattice.v[e])} == {x, y}:
            return e
    raise AssertionError(f"no edge on qubit {q} between {x} and {y}")


@pytest.fixture()
def teleport_setup():
    """n=4, t=4, nothing measured; one crossing turns back through gate 3 and gate 2."""
    M = MeasurementConfiguration.unmeasured(4, 4)
    lattice = circuit_to_bond_lattice(M)
    left, right = 6, 7
    upper = CrossingPath(
        (_edge(lattice, 1, left, 0), _edge(lattice, 1, 0, 3), _edge(lattice, 1, 3, right)),
        (left, 0, 3, right),
    )
    turning = CrossingPath(
        (
            _edge(lattice, 2, left, 0),
            _edge(lattice, 2, 0, 2),
            _edge(lattice, 3, 1, 2),
            _edge(lattice, 4, 1, 4),
            _edge(lattice, 4, 4, right),
        ),
        (left, 0, 2, 1, 4, right),
    )
    return M, [turning, upper]


def test_bell_pair_across_separated_rows():
    # Arrange
    M = configuration_from_rows(BELL_ROWS)
    logical = _bell()

    # Act
    plan = plan_embedding(M, 2, 1, slots=logical.cnot_slots())
    gates = assign_gates(plan, logical)
    fid, weight = verify_embedding(plan, gates, logical)

    # Assert
    bridge = plan.bridges[(1, 1)]
    assert not bridge.trivial
    assert (bridge.source_gate, bridge.sink_gate) == (1, 3)
    assert plan.output_map == {1: 1, 3: 2}
    assert plan.added == ((2, 2),)
    assert fid == pytest.approx(1.0, abs=1e-10)
    assert weight == pytest.approx(0.5**16 * 0.5, rel=1e-9)
    assert weight == pytest.approx(expected_weight(plan, logical), rel=1e-9)


def test_teleportation_through_cap_and_cup(teleport_setup):
    # Arrange
    M, crossings = teleport_setup
    logical = _bell()

    # Act
    plan = plan_embedding(M, 2, 1, slots=logical.cnot_slots(), crossings=crossings)
    fid, weight = verify_embedding(plan, assign_gates(plan, logical), logical)

    # Assert
    turning = plan.paths[1]
    assert [v.kind for v in turning.visits] == ["carry", "cap", "cup", "carry"]
    assert turning.anticausal_steps == 1
    assert plan.teleports == 1
    assert plan.added == ((2, 2), (3, 2))
    assert plan.output_map == {1: 1, 4: 2}
    assert plan.bridges[(1, 1)].trivial
    assert fid == pytest.approx(1.0, abs=1e-10)
    assert weight == pytest.approx(0.5**16 * 0.25, rel=1e-9)


def test_teleported_wire_keeps_its_single_qubit_gates(teleport_setup):
    M, crossings = teleport_setup
    logical = _bell(v1=S @ H)
    plan = plan_embedding(M, 2, 1, slots=logical.cnot_slots(), crossings=crossings)

    fid, weight = verify_embedding(plan, assign_gates(plan, logical), logical)

    assert fid == pytest.approx(1.0, abs=1e-10)
    assert weight == pytest.approx(expected_weight(plan, logical), rel=1e-9)


def test_crossings_must_be_edge_disjoint(teleport_setup):
    M, crossings = teleport_setup
    with pytest.raises(ConfigurationError):
        plan_embedding(M, 2, 1, crossings=[crossings[1], crossings[1]])


def test_missing_cap_measurement_is_rejected(teleport_setup):
    # Arrange
    M, crossings = teleport_setup
    logical = _bell()
    plan = plan_embedding(M, 2, 1, slots=logical.cnot_slots(), crossings=crossings)
    stripped = replace(plan, added=())

    # Act / Assert
    with pytest.raises(GadgetPreconditionViolated):
        assign_gates(stripped, logical)


def test_missing_bridge_measurement_is_rejected():
    M = configuration_from_rows(BELL_ROWS)
    logical = _bell()
    plan = plan_embedding(M, 2, 1, slots=logical.cnot_slots())

    with pytest.raises(GadgetPreconditionViolated) as exc:
        assign_gates(replace(plan, added=()), logical)
    assert exc.value.site == (2, 2)


def test_adjacent_rows_share_every_cnot():
    # Arrange
    M = MeasurementConfiguration.unmeasured(6, 8)
    logical = random_logical_circuit(3, 4, StreamKey(11), cnot_probability=1.0)

    # Act
    plan = plan_embedding(M, 3, 4, p=0.0)
    gates = assign_gates(plan, logical)
    fid, weight = verify_embedding(plan, gates, logical)

    # Assert
    assert sorted(plan.bridges) == [(1, 1), (2, 2), (3, 1), (4, 2)]
    assert all(b.trivial for b in plan.bridges.values())
    assert plan.added == ()
    assert plan.simulation_rate() == 0.5
    assert plan.output_map == {1: 1, 2: 2, 3: 3}
    assert fid == pytest.approx(1.0, abs=1e-9)
    assert weight == pytest.approx(0.5 ** (6 * 8), rel=1e-9)


def test_isolated_rows_have_no_bridge():
    M = configuration_from_rows(["........", "xxxxxxxx", "xxxxxxxx", "........"])
    with pytest.raises(NoBridgeFound) as exc:
        plan_embedding(M, 2, 1)
    assert exc.value.wires == (1, 2)


def test_too_few_measurement_free_paths():
    M = configuration_from_rows(["....", "xxxx", "....", "...."])
    with pytest.raises(InsufficientPaths) as exc:
        plan_embedding(M, 4, 0)
    assert exc.value.requested == 4


@pytest.mark.parametrize("k, m", [(1, 1), (2, -1)])
def test_plan_rejects_bad_sizes(k: int, m: int):
    with pytest.raises(ConfigurationError):
        plan_embedding(MeasurementConfiguration.unmeasured(4, 4), k, m)


def test_logical_circuit_checks_brick_parity():
    with pytest.raises(ConfigurationError):
        LogicalCircuit(3, ((TwoQubitGate(2),),))


def test_single_qubit_gate_touches_one_physical_gate():
    # Arrange
    M = MeasurementConfiguration.unmeasured(4, 4)
    logical = LogicalCircuit(2, ((SingleQubitGate(1, H),),))
    plan = plan_embedding(M, 2, 0)

    # Act
    gates = assign_gates(plan, logical)

    # Assert
    changed = [g for g in gates if not np.allclose(g.matrix, I4)]
    assert len(changed) == 1
    assert changed[0].pair == (1, 2)
    assert np.allclose(changed[0].matrix, np.kron(H, I2))
    fid, _ = verify_embedding(plan, gates, logical)
    assert fid == pytest.approx(1.0, abs=1e-10)


def test_changing_one_wire_only_touches_its_path():
    # Arrange
    M = configuration_from_rows(BELL_ROWS)
    base, changed = _bell(), _bell(v1=X)
    plan = plan_embedding(M, 2, 1, slots=base.cnot_slots())

    # Act
    before = assign_gates(plan, base)
    after = assign_gates(plan, changed)

    # Assert
    differing = {j + 1 for j, (a, b) in enumerate(zip(before, after)) if not np.allclose(a.matrix, b.matrix)}
    on_wire_two = {v.gate for v in plan.paths[1].visits}
    assert differing
    assert differing <= on_wire_two


def test_random_plans_verify_whenever_they_exist():
    successes = 0
    for seed in range(30):
        M = sample_measurement_configuration(6, 8, 0.15, "structural_zero", StreamKey(seed))
        try:
            plan = plan_embedding(M, 2, 2, p=0.15)
        except (InsufficientPaths, NoBridgeFound, GadgetPreconditionViolated):
            continue
        logical = random_logical_circuit(2, 2, StreamKey(seed, (7,)), cnot_probability=1.0)
        fid, weight = verify_embedding(plan, assign_gates(plan, logical), logical)
        assert fid == pytest.approx(1.0, abs=1e-8)
        assert weight == pytest.approx(expected_weight(plan, logical), rel=1e-6)
        successes += 1
    assert successes >= 1


def test_embedded_dimension_bound_is_positive():
    M = MeasurementConfiguration.unmeasured(4, 8)
    assert embedded_dimension_bound(M, 2, 6, StreamKey(3)) >= 2


def test_dump_plan_writes_zero_based_json(tmp_path):
    # Arrange
    M = configuration_from_rows(BELL_ROWS)
    logical = _bell()
    plan = plan_embedding(M, 2, 1, slots=logical.cnot_slots())
    gates = assign_gates(plan, logical)

    # Act
    path = dump_plan(plan, tmp_path / "plan.json", gates)

    # Assert
    body = json.loads(path.read_text(encoding="utf-8"))
    assert body["version"] == 1
    assert (body["n"], body["t"], body["k"]) == (4, 4, 2)
    assert body["added"] == [[1, 1]]
    assert [p["output_qubit"] for p in body["paths"]] == [0, 2]
    assert body["bridges"][0]["slot"] == [1, 1]
    assert set(body["assignment"]) == {"0", "2"}


def test_dump_plan_to_directory_fails(tmp_path):
    plan = plan_embedding(MeasurementConfiguration.unmeasured(4, 4), 2, 0)
    with pytest.raises(PersistError):
        dump_plan(plan, tmp_path)
