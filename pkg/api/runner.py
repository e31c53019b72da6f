"""Parameter sweeps, persistence and plot-data emission.

Every trial is a pure function of StreamKey(master).child(SWEEP, kind, point, trial),
so a grid point reproduces on its own and reduction never depends on worker
scheduling.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from ..config import PACKAGE_VERSION, RESULT_COLUMNS, RUNNER_SETTINGS, SWEEP_FORMAT_VERSION
from ..engine import default_engine
from ._exceptions import ConfigurationError, MCLError, PersistError, QubitLimitExceeded
from ._models import CircuitInstance, MeasurementConfiguration, Purpose, StreamKey
from ._responses import Observable, ResultRecord
from .circuit import build_layout, configuration_from_rows, sample_gates, sample_measurement_configuration, H
from .clifford import verify_d0_growth
from .dimension import estimate_accessible_dimension, rank_of_instance
from .embedding import (
    TwoQubitGate,
    LogicalCircuit,
    assign_gates,
    plan_embedding,
    random_logical_circuit,
    verify_embedding,
)
from .percolation import (
    circuit_to_bond_lattice,
    dual_top_bottom_cut,
    final_time_clusters,
    left_right_crossing,
    max_edge_disjoint_crossings,
    rectangular_lattice,
    wilson_interval,
)

logger = logging.getLogger(__name__)

Kind = Literal["percolation", "dimension", "embed", "sweep"]
KIND_CODES: Dict[str, int] = {"percolation": 1, "dimension": 2, "embed": 3, "sweep": 4}
DUALITY_TRIALS = 500
BINARY_OBSERVABLES = frozenset({"crossing", "embeddable"})
Point = Tuple[float, float, float]


class ExperimentConfig(BaseModel):
    """Versioned sweep description; JSON on disk.

    Percolation grids run over L (box height), T (aspect ratio) and q; circuit
    grids over n, t and p.
    """

    version: Literal[1] = SWEEP_FORMAT_VERSION
    kind: Kind
    n: List[int] = Field(default_factory=list)
    t: List[int] = Field(default_factory=list)
    p: List[float] = Field(default_factory=list)
    L: List[int] = Field(default_factory=list)
    T: List[float] = Field(default_factory=list)
    q: List[float] = Field(default_factory=list)
    trials: int = Field(default=1, ge=1)
    seed: int = Field(default=0, ge=0, lt=2**64)
    samples: Optional[int] = Field(default=None, ge=1)
    tolerance: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    k: int = Field(default=2, ge=2)
    depth: int = Field(default=2, ge=0)
    workers: Optional[int] = Field(default=None, ge=1)
    output: Optional[str] = None
    format: Literal["csv", "json"] = "csv"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            config = cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigurationError(f"invalid experiment config: {e}") from e
        config.points()
        return config

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise PersistError(str(path), f"could not read experiment config: {e}") from e
        return cls.from_dict(raw)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        try:
            path.write_text(json.dumps(self.model_dump(exclude_none=True), indent=2), encoding="utf-8")
        except OSError as e:
            raise PersistError(str(path), f"could not write experiment config: {e}") from e
        return path

    def points(self) -> List[Point]:
        """Grid points in sorted order; percolation points are (L, T, q)."""
        axes = (self.L, self.T, self.q) if self.kind == "percolation" else (self.n, self.t, self.p)
        names = ("L", "T", "q") if self.kind == "percolation" else ("n", "t", "p")
        empty = [name for name, axis in zip(names, axes) if not axis]
        if empty:
            raise ConfigurationError(f"{self.kind} grid is empty along {', '.join(empty)}")
        return sorted(itertools.product(*(sorted(set(axis)) for axis in axes)))


# ----- Trials -----
def _percolation_trial(config: ExperimentConfig, point: Point, stream: StreamKey, errors: List[str]) -> Dict[str, float]:
    L, T, q = int(point[0]), float(point[1]), float(point[2])
    lattice = rectangular_lattice(int(round(T * L)), L, q, stream.child(Purpose.MONTE_CARLO))
    count = max_edge_disjoint_crossings(lattice, with_paths=False).count
    return {"crossing": float(left_right_crossing(lattice)), "edge_disjoint_per_L": count / L}


def _configuration(point: Point, stream: StreamKey) -> MeasurementConfiguration:
    n, t, p = int(point[0]), int(point[1]), float(point[2])
    return sample_measurement_configuration(n, t, p, "structural_zero", stream.child(Purpose.CONFIGURATION))


def _dimension_trial(config: ExperimentConfig, point: Point, stream: StreamKey, errors: List[str]) -> Dict[str, float]:
    M = _configuration(point, stream)
    p = float(point[2])
    report = estimate_accessible_dimension(
        M, config.samples, stream.child(Purpose.RANK), p=p if 0.0 < p < 1.0 else 0.5, tol=config.tolerance
    )
    return {"dimension": float(report.rank), "degenerate": float(report.degenerate)}


def _sweep_trial(config: ExperimentConfig, point: Point, stream: StreamKey, errors: List[str]) -> Dict[str, float]:
    """Lattice observables always; dense observables when n fits the engine."""
    n, t, p = int(point[0]), int(point[1]), float(point[2])
    M = _configuration(point, stream)
    lattice = circuit_to_bond_lattice(M)
    clusters = final_time_clusters(lattice)
    values: Dict[str, float] = {
        "effective_gates": float(sum(len(g) for g in clusters.gates)),
        "max_final_cluster": float(clusters.max_size),
        "mean_final_cluster": float(np.mean(clusters.sizes)) if clusters.count else 0.0,
        "edge_disjoint": float(max_edge_disjoint_crossings(lattice, with_paths=False).count),
        "reset_cut": float(dual_top_bottom_cut(lattice, time_window=(max(1, t - n + 1), t)).exists),
    }
    engine = default_engine()
    try:
        engine.check_size(n)
    except QubitLimitExceeded as e:
        errors.append(str(e))
        return values
    layout = build_layout(n, t)
    gates = sample_gates(layout, stream.child(Purpose.GATES))
    rate = p if 0.0 < p < 1.0 else 0.5
    report = rank_of_instance(CircuitInstance(layout, gates, M, rate), "full15", config.tolerance)
    values["dimension"] = float(report.rank)
    _, state = engine.sample_trajectory(n, t, p, gates, stream.child(Purpose.TRAJECTORY))
    values["log_born_weight"] = state.log_squared_norm()
    if not state.is_zero:
        values["half_cut_renyi0"] = engine.renyi0_profile(state.normalize())[n // 2 - 1]
    return values


def _embed_trial(config: ExperimentConfig, point: Point, stream: StreamKey, errors: List[str]) -> Dict[str, float]:
    M = _configuration(point, stream)
    try:
        plan = plan_embedding(M, config.k, config.depth, p=float(point[2]))
    except MCLError as e:
        logger.debug("no embedding at %s: %s", point, e)
        return {"embeddable": 0.0}
    logical = random_logical_circuit(config.k, config.depth, stream.child(Purpose.LOGICAL))
    fid, weight = verify_embedding(plan, assign_gates(plan, logical), logical)
    return {
        "embeddable": 1.0,
        "fidelity": fid,
        "teleports": float(plan.teleports),
        "added_measurements": float(len(plan.added)),
        "log_weight": math.log(weight) if weight > 0.0 else -math.inf,
    }


_TRIALS = {
    "percolation": _percolation_trial,
    "dimension": _dimension_trial,
    "embed": _embed_trial,
    "sweep": _sweep_trial,
}


def trial_stream(config: ExperimentConfig, point_index: int, trial: int) -> StreamKey:
    return StreamKey(config.seed).child(Purpose.SWEEP, KIND_CODES[config.kind], point_index, trial)


def _run_trial(
    config: ExperimentConfig, job: Tuple[int, Point, int]
) -> Tuple[int, int, Dict[str, float], str]:
    point_index, point, trial = job
    errors: List[str] = []
    try:
        values = _TRIALS[config.kind](config, point, trial_stream(config, point_index, trial), errors)
    except MCLError as e:
        values = {}
        errors.append(str(e))
    return point_index, trial, values, "; ".join(f"trial {trial}: {e}" for e in errors)


# ----- Reduction -----
def _aggregate(name: str, values: Sequence[float]) -> Dict[str, Observable]:
    if name in BINARY_OBSERVABLES:
        hits = int(round(sum(values)))
        lo, hi = wilson_interval(hits, len(values))
        return {name: Observable(hits / len(values), lo, hi)}
    arr = np.asarray(values, dtype=float)
    finite = arr[np.isfinite(arr)]
    if finite.size == 0:
        return {name: Observable(float("nan"))}
    mean = float(finite.mean())
    out = {name: Observable(mean), f"{name}_median": Observable(float(np.median(finite)))}
    if finite.size > 1:
        half = 1.96 * float(finite.std(ddof=1)) / math.sqrt(finite.size)
        out[name] = Observable(mean, mean - half, mean + half)
    return out


def _record(
    config: ExperimentConfig, point: Point, outcomes: List[Tuple[int, Dict[str, float], str]], wall: float
) -> ResultRecord:
    outcomes = sorted(outcomes, key=lambda o: o[0])
    if config.kind == "percolation":
        L, T, q = point
        n, t, p = int(L), int(round(T * L)), float(q)
    else:
        n, t, p = int(point[0]), int(point[1]), float(point[2])
    record = ResultRecord(config.kind, n, t, p, config.trials, config.seed, wall_time=wall, version=PACKAGE_VERSION)
    names = sorted({name for _, values, _ in outcomes for name in values})
    for name in names:
        series = [values[name] for _, values, _ in outcomes if name in values]
        record.observables.update(_aggregate(name, series))
    record.errors = [err for _, _, err in outcomes if err]
    return record


def run_sweep(config: ExperimentConfig, *, workers: Optional[int] = None) -> List[ResultRecord]:
    """One ResultRecord per grid point; per-point failures land in `errors`."""
    points = config.points()
    workers = workers or config.workers or RUNNER_SETTINGS.workers
    jobs = [(i, point, trial) for i, point in enumerate(points) for trial in range(config.trials)]
    logger.info("sweep kind=%s points=%d trials=%d workers=%d", config.kind, len(points), config.trials, workers)
    started = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunk = max(1, len(jobs) // (4 * workers))
            results = list(pool.map(_run_trial, itertools.repeat(config), jobs, chunksize=chunk))
    else:
        results = [_run_trial(config, job) for job in jobs]
    wall = time.perf_counter() - started

    grouped: Dict[int, List[Tuple[int, Dict[str, float], str]]] = {i: [] for i in range(len(points))}
    for point_index, trial, values, error in results:
        grouped[point_index].append((trial, values, error))
    records = [_record(config, points[i], grouped[i], wall / len(points)) for i in range(len(points))]
    for record in records:
        if record.errors:
            logger.warning(
                "n=%s t=%s p=%s: %d failed trials (%s)", record.n, record.t, record.p, len(record.errors), record.errors[0]
            )
    return records


# ----- Output -----
def _cell(value: object) -> object:
    return "" if value is None else value


def persist(results: Iterable[ResultRecord], path: str | Path, fmt: Literal["csv", "json"] = "csv") -> Path:
    """CSV rows in RESULT_COLUMNS order, or JSON mirroring them per record.

    Wall times stay out of both formats so reruns are byte-identical.
    """
    path = Path(path)
    records = list(results)
    try:
        if fmt == "csv":
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=list(RESULT_COLUMNS), lineterminator="\n")
                writer.writeheader()
                for record in records:
                    for row in record.rows():
                        writer.writerow({k: _cell(row[k]) for k in RESULT_COLUMNS})
        elif fmt == "json":
            body = []
            for record in records:
                entry = record.to_dict()
                entry.pop("wall_time", None)
                body.append(entry)
            path.write_text(json.dumps({"version": SWEEP_FORMAT_VERSION, "records": body}, indent=2), encoding="utf-8")
        else:
            raise ConfigurationError(f"unknown result format {fmt!r}")
    except OSError as e:
        raise PersistError(str(path), f"could not write results: {e}") from e
    logger.info("wrote %d records to %s", len(records), path)
    return path


def emit_plot_data(results: Sequence[ResultRecord], directory: str | Path) -> List[Path]:
    """One long-format CSV per (kind, observable): n, t, p, value, ci_lo, ci_hi."""
    if not results:
        raise ConfigurationError("no results to emit")
    directory = Path(directory)
    table: Dict[Tuple[str, str], List[dict]] = {}
    for record in results:
        for row in record.rows():
            table.setdefault((record.kind, row["observable"]), []).append(row)
    written = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for (kind, observable), rows in sorted(table.items()):
            path = directory / f"{kind}_{observable}.csv"
            with path.open("w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["n", "t", "p", "value", "ci_lo", "ci_hi"])
                for row in sorted(rows, key=lambda r: (r["n"], r["t"], r["p"])):
                    writer.writerow([row["n"], row["t"], row["p"], row["value"], _cell(row["ci_lo"]), _cell(row["ci_hi"])])
            written.append(path)
    except OSError as e:
        raise PersistError(str(directory), f"could not write plot data: {e}") from e
    return written


# ----- Quick acceptance checks -----
@dataclass(frozen=True)
class AcceptanceCheck:
    name: str
    passed: bool
    detail: str


def _check_probability_conservation(stream: StreamKey) -> AcceptanceCheck:
    layout = build_layout(2, 2)
    gates = sample_gates(layout, stream.child(Purpose.GATES))
    engine = default_engine()
    total = 0.0
    for codes in itertools.product((-1, 0, 1), repeat=4):
        M = MeasurementConfiguration(2, 2, np.array(codes, dtype=np.int8).reshape(2, 2))
        total += engine.run(CircuitInstance(layout, gates, M, 0.3))[1]
    return AcceptanceCheck("probability_conservation", abs(total - 1.0) < 1e-10, f"sum={total:.12f}")


def _check_single_gate_rank(stream: StreamKey) -> AcceptanceCheck:
    layout = build_layout(2, 2)
    M = MeasurementConfiguration.unmeasured(2, 2)
    report = rank_of_instance(CircuitInstance(layout, sample_gates(layout, stream.child(Purpose.GATES)), M, 0.5))
    return AcceptanceCheck("single_gate_rank", report.rank == 7, f"rank={report.rank}")


def _check_clifford_growth(stream: StreamKey) -> AcceptanceCheck:
    checks = [verify_d0_growth(n, t) for n in (2, 4) for t in (6, 12, 24)]
    return AcceptanceCheck(
        "clifford_growth", all(c.passed for c in checks), ", ".join(f"{c.rank}>={c.bound}" for c in checks)
    )


def _check_bell_embedding(stream: StreamKey) -> AcceptanceCheck:
    M = configuration_from_rows(["....", "..x.", "....", "x..."])
    logical = LogicalCircuit(2, ((TwoQubitGate(1, cnot=True, u2=H),),))
    plan = plan_embedding(M, 2, 1, slots=logical.cnot_slots())
    fid, _ = verify_embedding(plan, assign_gates(plan, logical), logical)
    return AcceptanceCheck("bell_embedding", fid > 1.0 - 1e-10, f"fidelity={fid:.12f}")


def _check_duality(stream: StreamKey, trials: int = DUALITY_TRIALS) -> AcceptanceCheck:
    violations = 0
    for i in range(trials):
        lattice = rectangular_lattice(8, 8, 0.5, stream.child(Purpose.MONTE_CARLO, i))
        violations += dual_top_bottom_cut(lattice).exists == left_right_crossing(lattice)
    return AcceptanceCheck("cut_crossing_duality", violations == 0, f"violations={violations} of {trials}")


def run_acceptance(seed: int = 0, *, duality_trials: int = DUALITY_TRIALS) -> List[AcceptanceCheck]:
    stream = StreamKey(seed)
    checks = [
        _check_probability_conservation,
        _check_single_gate_rank,
        _check_clifford_growth,
        _check_bell_embedding,
        partial(_check_duality, trials=duality_trials),
    ]
    results = []
    for i, check in enumerate(checks):
        try:
            results.append(check(stream.child(i)))
        except MCLError as e:
            name = getattr(check, "func", check).__name__
            results.append(AcceptanceCheck(name.removeprefix("_check_"), False, str(e)))
    return results


def embedding_example(config: ExperimentConfig, point_index: int = 0):
    """Plan, logical circuit, gates and (fidelity, weight) for trial 0 of one embed grid point."""
    if config.kind != "embed":
        raise ConfigurationError("embedding_example needs an embed config")
    point = config.points()[point_index]
    stream = trial_stream(config, point_index, 0)
    plan = plan_embedding(_configuration(point, stream), config.k, config.depth, p=float(point[2]))
    logical = random_logical_circuit(config.k, config.depth, stream.child(Purpose.LOGICAL))
    gates = assign_gates(plan, logical)
    return plan, logical, gates, verify_embedding(plan, gates, logical)
