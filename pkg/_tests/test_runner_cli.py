from __future__ import annotations

import csv
import json

import pytest

import mcl.engine as engine_module
from mcl.api._exceptions import ConfigurationError, PersistError
from mcl.api.runner import ExperimentConfig, emit_plot_data, persist, run_acceptance, run_sweep, trial_stream
from mcl.config import RESULT_COLUMNS, EngineSettings
from mcl.scripts.cli import main


@pytest.fixture()
def percolation_config() -> ExperimentConfig:
    return ExperimentConfig.from_dict({"kind": "percolation", "L": [4], "T": [1.0], "q": [0.4, 0.6], "trials": 6, "seed": 5})


def test_empty_grid_is_rejected():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"kind": "dimension", "n": [2], "t": [], "p": [0.1]})


def test_invalid_field_is_rejected():
    with pytest.raises(ConfigurationError):
        ExperimentConfig.from_dict({"kind": "embed", "n": [4], "t": [4], "p": [0.1], "trials": 0})


def test_config_file_round_trip(tmp_path, percolation_config: ExperimentConfig):
    path = percolation_config.save(tmp_path / "sweep.json")
    assert ExperimentConfig.load(path) == percolation_config


def test_missing_config_file(tmp_path):
    with pytest.raises(PersistError):
        ExperimentConfig.load(tmp_path / "absent.json")


def test_points_are_sorted_and_deduplicated():
    config = ExperimentConfig.from_dict({"kind": "sweep", "n": [4, 2, 4], "t": [2], "p": [0.5, 0.1]})
    assert config.points() == [(2, 2, 0.1), (2, 2, 0.5), (4, 2, 0.1), (4, 2, 0.5)]


def test_trial_streams_depend_on_point_and_trial(percolation_config: ExperimentConfig):
    assert trial_stream(percolation_config, 0, 1) == trial_stream(percolation_config, 0, 1)
    assert trial_stream(percolation_config, 0, 1) != trial_stream(percolation_config, 1, 1)
    assert trial_stream(percolation_config, 0, 1).path == (8, 1, 0, 1)


def test_percolation_sweep_is_deterministic(percolation_config: ExperimentConfig):
    # Act
    first = run_sweep(percolation_config, workers=1)
    second = run_sweep(percolation_config, workers=1)

    # Assert
    assert [r.observables for r in first] == [r.observables for r in second]
    assert [(r.n, r.t, r.p) for r in first] == [(4, 4, 0.4), (4, 4, 0.6)]
    crossing = first[0].observables["crossing"]
    assert 0.0 <= crossing.ci_lo <= crossing.ci_hi <= 1.0
    assert crossing.ci_lo - 1e-12 <= crossing.value <= crossing.ci_hi + 1e-12
    assert "edge_disjoint_per_L_median" in first[0].observables


def test_dimension_sweep_single_gate():
    config = ExperimentConfig.from_dict({"kind": "dimension", "n": [2], "t": [2], "p": [0.0], "samples": 1})

    records = run_sweep(config)

    assert records[0].observables["dimension"].value == 7.0
    assert records[0].errors == []


def test_embed_sweep_reports_fidelity():
    config = ExperimentConfig.from_dict(
        {"kind": "embed", "n": [4], "t": [8], "p": [0.0], "k": 2, "depth": 2, "trials": 2}
    )

    records = run_sweep(config)

    observables = records[0].observables
    assert observables["embeddable"].value == 1.0
    assert observables["fidelity"].value == pytest.approx(1.0, abs=1e-9)
    assert observables["teleports"].value == 0.0


def test_sweep_over_engine_cap_keeps_lattice_observables(monkeypatch):
    # Arrange
    monkeypatch.setattr(engine_module, "ENGINE_SETTINGS", EngineSettings(max_qubits=4))
    config = ExperimentConfig.from_dict({"kind": "sweep", "n": [6], "t": [4], "p": [0.3], "trials": 2})

    # Act
    records = run_sweep(config, workers=1)

    # Assert
    record = records[0]
    assert len(record.errors) == 2
    assert "exceeds the dense-engine cap" in record.errors[0]
    assert "edge_disjoint" in record.observables
    assert "dimension" not in record.observables


def test_sweep_within_engine_cap_has_dense_observables():
    config = ExperimentConfig.from_dict({"kind": "sweep", "n": [4], "t": [4], "p": [0.2], "trials": 2, "seed": 3})

    record = run_sweep(config)[0]

    assert record.errors == []
    assert {"dimension", "log_born_weight", "effective_gates", "reset_cut"} <= set(record.observables)


def test_persist_csv_and_json(tmp_path, percolation_config: ExperimentConfig):
    # Arrange
    records = run_sweep(percolation_config)

    # Act
    csv_path = persist(records, tmp_path / "out.csv", "csv")
    json_path = persist(records, tmp_path / "out.json", "json")

    # Assert
    with csv_path.open(encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RESULT_COLUMNS
    assert len(rows) == 1 + sum(len(r.observables) for r in records)
    body = json.loads(json_path.read_text(encoding="utf-8"))
    assert body["version"] == 1
    assert "wall_time" not in body["records"][0]


def test_persist_failure(tmp_path, percolation_config: ExperimentConfig):
    with pytest.raises(PersistError):
        persist(run_sweep(percolation_config), tmp_path, "csv")


def test_emit_plot_data(tmp_path, percolation_config: ExperimentConfig):
    paths = emit_plot_data(run_sweep(percolation_config), tmp_path / "plots")

    names = {p.name for p in paths}
    assert "percolation_crossing.csv" in names
    assert (tmp_path / "plots" / "percolation_crossing.csv").read_text(encoding="utf-8").startswith("n,t,p,value")


def test_emit_plot_data_needs_results(tmp_path):
    with pytest.raises(ConfigurationError):
        emit_plot_data([], tmp_path)


def test_acceptance_checks_pass():
    checks = run_acceptance(0)
    assert [c.name for c in checks if not c.passed] == []


def test_duality_check_covers_500_lattices():
    # Act
    default = {c.name: c for c in run_acceptance(1)}["cut_crossing_duality"]
    short = {c.name: c for c in run_acceptance(1, duality_trials=20)}["cut_crossing_duality"]

    # Assert
    assert default.detail == "violations=0 of 500"
    assert short.detail == "violations=0 of 20"


def test_cli_verify(capsys):
    assert main(["verify"]) == 0
    assert "PASS bell_embedding" in capsys.readouterr().out


def test_cli_percolation_writes_results(tmp_path):
    out = tmp_path / "perc.csv"

    code = main(["percolation", "--L", "4", "--q", "0.5", "--trials", "3", "--out", str(out)])

    assert code == 0
    assert out.read_text(encoding="utf-8").splitlines()[0] == ",".join(RESULT_COLUMNS)


def test_cli_embed_dumps_plan(tmp_path, capsys):
    plan_path = tmp_path / "plan.json"

    code = main(["embed", "--n", "4", "--t", "8", "--p", "0.0", "--dump-plan", str(plan_path)])

    assert code == 0
    assert json.loads(plan_path.read_text(encoding="utf-8"))["k"] == 2
    assert "fidelity=" in capsys.readouterr().out


def test_cli_sweep_uses_config_output(tmp_path):
    config = ExperimentConfig.from_dict(
        {"kind": "percolation", "L": [4], "q": [0.5], "T": [1.0], "output": str(tmp_path / "res.json"), "format": "json"}
    )
    path = config.save(tmp_path / "sweep.json")

    assert main(["sweep", "--config", str(path)]) == 0
    assert json.loads((tmp_path / "res.json").read_text(encoding="utf-8"))["records"]


def test_cli_reports_errors(tmp_path, capsys):
    code = main(["sweep", "--config", str(tmp_path / "absent.json")])

    assert code == 2
    assert capsys.readouterr().err.startswith("ERROR:")
