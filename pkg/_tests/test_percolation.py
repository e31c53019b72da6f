from __future__ import annotations

import json
import math

import numpy as np
import pytest

from mcl.api._exceptions import ConfigurationError, InsufficientPaths
from mcl.api._models import CircuitInstance, GateMatrix, MeasurementConfiguration, StreamKey
from mcl.api.circuit import I4, configuration_from_rows, random_instance
from mcl.api.percolation import (
    EDGE_FINAL,
    EDGE_INITIAL,
    aspect_ratio_bounds,
    aspect_ratio_check,
    circuit_to_bond_lattice,
    cluster_tail_fit,
    cluster_union_bound,
    crossing_point,
    dual_lattice,
    dual_top_bottom_cut,
    dump_lattice,
    effective_gate_count,
    final_time_clusters,
    fkg_check,
    left_of_cut,
    left_right_crossing,
    max_edge_disjoint_crossings,
    mc_estimate,
    measurement_free_paths,
    rectangular_lattice,
    rectangular_window,
    square_family,
    subwindow,
    tilted_lattice,
    wilson_interval,
)
from mcl.engine import StateVectorEngine, fidelity

LAYER_TWO_MEASURED = [".x..", ".x..", ".x..", ".x.."]


@pytest.fixture()
def open_circuit():
    return circuit_to_bond_lattice(MeasurementConfiguration.unmeasured(4, 4))


def test_circuit_lattice_shape(open_circuit):
    # Assert
    assert open_circuit.vertex_count == 6 + 2
    assert open_circuit.edge_count == 16
    assert list(open_circuit.kinds[:4]) == [EDGE_INITIAL] * 4
    assert list(open_circuit.kinds[-4:]) == [EDGE_FINAL] * 4
    assert open_circuit.open.all()
    assert open_circuit.edge_sites[4] == ((1, 1), (1, 2))


def test_measured_site_closes_its_segment():
    M = configuration_from_rows(["....", ".x..", "....", "...."])

    lattice = circuit_to_bond_lattice(M)

    closed = [e for e in range(lattice.edge_count) if not lattice.open[e]]
    assert len(closed) == 1
    assert lattice.edge_sites[closed[0]] == ((2, 2),)


def test_open_circuit_has_one_crossing_per_qubit(open_circuit):
    report = max_edge_disjoint_crossings(open_circuit)

    assert left_right_crossing(open_circuit)
    assert report.count == 4
    used = [e for path in report.paths for e in path.edges]
    assert len(used) == len(set(used))
    assert all(path.vertices[0] == 6 and path.vertices[-1] == 7 for path in report.paths)


def test_measured_layer_blocks_every_crossing():
    # Arrange
    lattice = circuit_to_bond_lattice(configuration_from_rows(LAYER_TWO_MEASURED))

    # Act
    cut = dual_top_bottom_cut(lattice)

    # Assert
    assert not left_right_crossing(lattice)
    assert max_edge_disjoint_crossings(lattice).count == 0
    assert cut.exists
    assert left_of_cut(lattice, cut.edges) == [1, 2, 3]


def test_no_cut_without_measurements(open_circuit):
    assert not dual_top_bottom_cut(open_circuit).exists


def test_reset_window_limits_the_cut():
    lattice = circuit_to_bond_lattice(configuration_from_rows(LAYER_TWO_MEASURED))

    assert dual_top_bottom_cut(lattice, time_window=(1, 2)).exists
    assert not dual_top_bottom_cut(lattice, time_window=(3, 4)).exists


def test_left_of_cut_needs_a_separating_set(open_circuit):
    with pytest.raises(ConfigurationError):
        left_of_cut(open_circuit, [0])


def test_measurement_free_paths_shortfall():
    M = configuration_from_rows(["....", "xxxx", "....", "...."])
    with pytest.raises(InsufficientPaths):
        measurement_free_paths(M, 4)
    assert len(measurement_free_paths(M, 3)) == 3


@pytest.mark.parametrize("seed", range(20))
def test_crossing_and_dual_cut_are_exclusive(seed: int):
    lattice = rectangular_lattice(6, 6, 0.5, StreamKey(seed))
    assert dual_top_bottom_cut(lattice).exists != left_right_crossing(lattice)


@pytest.mark.parametrize("seed", range(10))
def test_circuit_crossing_and_cut_are_exclusive(seed: int):
    lattice = tilted_lattice(6, 8, 0.6, StreamKey(seed))
    assert dual_top_bottom_cut(lattice).exists != left_right_crossing(lattice)


def test_rectangular_window():
    full = rectangular_window(2, 2)

    assert full.edge_count == 12
    assert max_edge_disjoint_crossings(full).count == 3
    assert not left_right_crossing(rectangular_lattice(4, 4, 0.0, StreamKey(0)))
    with pytest.raises(ConfigurationError):
        rectangular_window(0, 2)


def test_subwindow_shares_edge_states():
    lattice = rectangular_lattice(6, 6, 0.5, StreamKey(1))

    whole = subwindow(lattice, (0, 6), (0, 6))

    assert np.array_equal(whole.open, lattice.open)
    with pytest.raises(ConfigurationError):
        subwindow(lattice, (0, 7), (0, 6))


def test_final_time_clusters():
    # Arrange
    open_M = MeasurementConfiguration.unmeasured(4, 4)
    last_layer_measured = configuration_from_rows(["...x", "...x", "...x", "...x"])

    # Act
    report = final_time_clusters(open_M)

    # Assert
    assert report.count == 1
    assert report.gates == ((1, 2, 3, 4, 5, 6),)
    assert report.final_legs == ((1, 2, 3, 4),)
    assert effective_gate_count(open_M) == 6
    assert effective_gate_count(last_layer_measured) == 0


def test_monte_carlo_estimates():
    always = mc_estimate(left_right_crossing, square_family(4), 1.0, 10, StreamKey(0))
    never = mc_estimate(left_right_crossing, square_family(4), 0.0, 10, StreamKey(0))

    assert (always.estimate, always.successes) == (1.0, 10)
    assert never.estimate == 0.0
    assert never.ci_lo == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ConfigurationError):
        mc_estimate(left_right_crossing, square_family(4), 0.5, 0, StreamKey(0))


def test_wilson_interval_bounds():
    lo, hi = wilson_interval(5, 10)
    assert 0.0 < lo < 0.5 < hi < 1.0
    with pytest.raises(ConfigurationError):
        wilson_interval(0, 0)


def test_crossing_point_interpolates():
    assert crossing_point([0.4, 0.6], [0.2, 0.8]) == pytest.approx(0.5)
    assert crossing_point([0.4, 0.6], [0.7, 0.8]) is None


def test_cluster_union_bound():
    assert cluster_union_bound(1.0, 10, 0.1) == pytest.approx(math.log(100))
    with pytest.raises(ConfigurationError):
        cluster_union_bound(0.0, 10, 0.1)


def test_aspect_ratio_bounds_at_certain_crossing():
    bounds = aspect_ratio_bounds(1.0, T=3)
    assert bounds == {"three_halves": 1.0, "two": 1.0, "large": 1.0}


def test_fkg_check_on_open_lattice():
    result = fkg_check(4, 1.0, 5, StreamKey(0))
    assert result["p_ab"] == 1.0
    assert result["passed"]


def test_dump_lattice(tmp_path, open_circuit):
    edges, labels = dump_lattice(open_circuit, tmp_path / "lattice.csv")

    lines = edges.read_text(encoding="utf-8").splitlines()
    assert lines[0] == "u,v,open"
    assert len(lines) == 1 + open_circuit.edge_count
    assert json.loads(labels.read_text(encoding="utf-8"))["provenance"] == "circuit_tilted"


def test_open_fraction_matches_q():
    lattice = rectangular_lattice(100, 100, 0.5, StreamKey(2))
    assert lattice.open_fraction() == pytest.approx(0.5, abs=0.02)


@pytest.mark.parametrize(
    "lattice",
    [rectangular_lattice(6, 5, 0.5, StreamKey(3)), tilted_lattice(6, 8, 0.5, StreamKey(4))],
    ids=["rectangular", "tilted"],
)
def test_dual_recovers_the_primal(lattice):
    dual = dual_lattice(lattice)

    recovered = dual.primal_pattern(lattice.edge_count)

    assert np.array_equal(recovered[dual.primal_edge], lattice.open[dual.primal_edge])
    assert np.array_equal(dual.open, ~lattice.open[dual.primal_edge])


@pytest.mark.parametrize("seed", range(5))
def test_opening_an_edge_never_hurts_crossings(seed: int):
    lattice = rectangular_lattice(6, 6, 0.5, StreamKey(seed))
    before_count = max_edge_disjoint_crossings(lattice, with_paths=False).count
    before_crossing = left_right_crossing(lattice)

    for e in np.flatnonzero(~lattice.open)[:10]:
        flags = lattice.open.copy()
        flags[e] = True
        opened = lattice.with_open(flags)
        assert max_edge_disjoint_crossings(opened, with_paths=False).count >= before_count
        assert left_right_crossing(opened) >= before_crossing


@pytest.mark.parametrize("L", [3, 5, 8])
def test_open_box_has_one_crossing_per_row(L: int):
    assert max_edge_disjoint_crossings(rectangular_window(L, L), with_paths=False).count == L + 1


@pytest.mark.parametrize("q", [0.4, 0.6])
def test_crossings_are_positively_correlated(q: float):
    result = fkg_check(16, q, 2000, StreamKey(20))
    assert result["passed"]


@pytest.mark.parametrize("T", [2, 3, 4])
def test_long_rectangles_respect_the_aspect_ratio_bound(T: int):
    result = aspect_ratio_check(16, T, 0.7, 200, StreamKey(30 + T))
    assert result["passed"]
    assert 0.0 < result["bound"] <= 1.0


def test_subcritical_cluster_tail_is_exponential():
    fit = cluster_tail_fit(0.3, 32, range(2, 16), 4000, StreamKey(40))

    assert fit["r_squared"] >= 0.9
    assert fit["slope"] < 0.0


@pytest.mark.parametrize("seed", range(5))
def test_output_depends_only_on_final_time_clusters(seed: int):
    # Arrange
    instance = random_instance(6, 8, 0.7, StreamKey(seed))
    members = {g for cluster in final_time_clusters(instance.configuration).gates for g in cluster}
    stripped = tuple(
        gate if pl.index in members else GateMatrix(I4, pl.pair)
        for pl, gate in zip(instance.layout.placements, instance.gates)
    )
    engine = StateVectorEngine()

    # Act
    original = engine.normalized_output(instance)
    reduced = engine.normalized_output(
        CircuitInstance(instance.layout, stripped, instance.configuration, instance.p)
    )

    # Assert
    assert fidelity(original, reduced) >= 1 - 1e-10
    assert effective_gate_count(instance.configuration) == len(members)
