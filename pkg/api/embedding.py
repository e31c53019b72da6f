"""Compile logical circuits onto measurement-free paths of a measurement configuration.

Each logical qubit rides one edge-disjoint open crossing of the circuit's bond
lattice. At every gate the path visits, the state enters on one leg and
leaves on another:

- carry: input leg to output leg; the gate is I or SWAP times logical gates
- cap: input leg to the other input leg (the path turns back in time); the
  gate is (H x I) CNOT and both outputs are post-selected on 0
- carry_back: output leg to input leg, walked against the time direction
- cup: output leg to the other output leg; the gate is CNOT (H x I) acting
  on two |0> inputs

A cap, a stretch of carry_back steps and a cup together teleport the state
back in time with amplitude 1/2. Between paths, a logical CNOT either sits on
a gate both paths share or uses a bridge: a copy CNOT at the source gate, a
forward chain of free gates, and CNOT then H on the bridge qubit at the sink
gate, whose free output is post-selected on 0 (amplitude 1/sqrt 2).
Logical gates on a backward stretch are applied transposed and in reverse
time order.
"""

from __future__ import annotations

import json
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Literal, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy.stats import unitary_group

from ..engine import apply_single_qubit_gate, apply_two_qubit_gate, default_engine, fidelity, StateVector
from ._exceptions import ConfigurationError, GadgetPreconditionViolated, NoBridgeFound, PersistError, ZeroWeight
from ._models import (
    BrickwallLayout,
    CircuitInstance,
    GateMatrix,
    MeasurementConfiguration,
    Purpose,
    StreamKey,
    UNMEASURED,
)
from ._responses import CrossingPath
from .circuit import CNOT, CNOT_REVERSED, H, I2, I4, SWAP, build_layout, embed_single
from .dimension import rank_of_instance
from .percolation import EDGE_INITIAL, BondLattice, circuit_to_bond_lattice, measurement_free_paths

logger = logging.getLogger(__name__)

StepKind = Literal["carry", "carry_back", "cap", "cup"]
CARRIERS = ("carry", "carry_back")
PLAN_FORMAT_VERSION = 1

CAP = embed_single(H, True) @ CNOT  # <00| CAP = <Phi+|
CUP = CNOT @ embed_single(H, True)  # CUP |00> = |Phi+>


# ----- Logical circuits -----
@dataclass(frozen=True, eq=False)
class SingleQubitGate:
    wire: int
    u: np.ndarray


@dataclass(frozen=True, eq=False)
class TwoQubitGate:
    """(u1 x v1) W (u2 x v2) on wires (wire, wire+1); W is CNOT with control `wire` or I."""

    wire: int
    cnot: bool = False
    u1: np.ndarray = field(default_factory=lambda: I2)
    v1: np.ndarray = field(default_factory=lambda: I2)
    u2: np.ndarray = field(default_factory=lambda: I2)
    v2: np.ndarray = field(default_factory=lambda: I2)

    def matrix(self) -> np.ndarray:
        w = CNOT if self.cnot else I4
        return np.kron(self.u1, self.v1) @ w @ np.kron(self.u2, self.v2)


LogicalGate = Union[SingleQubitGate, TwoQubitGate]


@dataclass(frozen=True)
class LogicalCircuit:
    """Brick-wall layers on k wires: layer l pairs (i, i+1) with i odd for odd l, even for even l."""

    k: int
    layers: Tuple[Tuple[LogicalGate, ...], ...]

    def __post_init__(self) -> None:
        if self.k < 2:
            raise ConfigurationError(f"need k >= 2 logical qubits, got {self.k}")
        for layer_index, layer in enumerate(self.layers, start=1):
            busy: Set[int] = set()
            for gate in layer:
                wires = (gate.wire, gate.wire + 1) if isinstance(gate, TwoQubitGate) else (gate.wire,)
                if not all(1 <= w <= self.k for w in wires):
                    raise ConfigurationError(f"gate on wires {wires} outside 1..{self.k}")
                if isinstance(gate, TwoQubitGate) and gate.wire % 2 != layer_index % 2:
                    raise ConfigurationError(f"layer {layer_index} cannot hold a gate on ({gate.wire}, {gate.wire + 1})")
                if busy & set(wires):
                    raise ConfigurationError(f"layer {layer_index} uses a wire twice")
                busy.update(wires)

    @property
    def depth(self) -> int:
        return len(self.layers)

    def cnot_slots(self) -> List[Tuple[int, int]]:
        return [
            (layer_index, gate.wire)
            for layer_index, layer in enumerate(self.layers, start=1)
            for gate in layer
            if isinstance(gate, TwoQubitGate) and gate.cnot
        ]

    def simulate(self) -> StateVector:
        state = StateVector.basis(self.k)
        for layer in self.layers:
            for gate in layer:
                if isinstance(gate, TwoQubitGate):
                    state = apply_two_qubit_gate(state, gate.matrix(), gate.wire, gate.wire + 1)
                else:
                    state = apply_single_qubit_gate(state, gate.u, gate.wire)
        return state

    def wire_program(self, wire: int) -> List[Tuple[str, object]]:
        """('u', 2x2) and ('cnot', (slot, role)) items on one wire, in logical order."""
        items: List[Tuple[str, object]] = []
        for layer_index, layer in enumerate(self.layers, start=1):
            for gate in layer:
                if isinstance(gate, SingleQubitGate):
                    if gate.wire == wire:
                        items.append(("u", gate.u))
                    continue
                if wire not in (gate.wire, gate.wire + 1):
                    continue
                first = wire == gate.wire
                items.append(("u", gate.u2 if first else gate.v2))
                if gate.cnot:
                    items.append(("cnot", ((layer_index, gate.wire), "control" if first else "target")))
                items.append(("u", gate.u1 if first else gate.v1))
        return items


def identity_logical(k: int, m: int = 0) -> LogicalCircuit:
    return LogicalCircuit(k, tuple(() for _ in range(m)))


def random_logical_circuit(k: int, m: int, stream: StreamKey, *, cnot_probability: float = 0.5) -> LogicalCircuit:
    """Brick-wall circuit of (u1 x v1) W (u2 x v2) gates with Haar single-qubit factors."""
    rng = stream.rng()
    layers = []
    for layer_index in range(1, m + 1):
        gates = []
        for wire in range(1 if layer_index % 2 else 2, k, 2):
            u1, v1, u2, v2 = (unitary_group.rvs(2, random_state=rng) for _ in range(4))
            gates.append(TwoQubitGate(wire, bool(rng.random() < cnot_probability), u1, v1, u2, v2))
        layers.append(tuple(gates))
    return LogicalCircuit(k, tuple(layers))


def brickwall_slots(k: int, m: int) -> List[Tuple[int, int]]:
    return [(layer, wire) for layer in range(1, m + 1) for wire in range(1 if layer % 2 else 2, k, 2)]


# ----- Plan types -----
@dataclass(frozen=True)
class PathStep:
    edge: int
    qubit: int
    timestep: int  # layer of the gate the leg leaves; 0 for initial legs
    causal: bool


@dataclass(frozen=True)
class Visit:
    gate: int  # j, 1..R
    kind: StepKind
    enter_qubit: int
    exit_qubit: int

    @property
    def line(self) -> Tuple[int, int]:
        """(input-leg qubit, output-leg qubit) the carried state uses in time order."""
        if self.kind == "carry":
            return self.enter_qubit, self.exit_qubit
        if self.kind == "carry_back":
            return self.exit_qubit, self.enter_qubit
        raise ConfigurationError(f"a {self.kind} visit carries no line")


@dataclass(frozen=True)
class MeasurementFreePath:
    wire: int
    steps: Tuple[PathStep, ...]
    visits: Tuple[Visit, ...]

    @property
    def start_qubit(self) -> int:
        return self.steps[0].qubit

    @property
    def output_qubit(self) -> int:
        return self.steps[-1].qubit

    @property
    def teleports(self) -> int:
        return sum(1 for v in self.visits if v.kind == "cap")

    @property
    def anticausal_steps(self) -> int:
        return sum(1 for s in self.steps if not s.causal)


@dataclass(frozen=True)
class Bridge:
    """Connection for the CNOT slot (logical layer, control wire)."""

    slot: Tuple[int, int]
    source: Tuple[int, int]  # (wire, visit index) where the copy is taken
    sink: Tuple[int, int]
    source_gate: int
    sink_gate: int
    trivial: bool = False
    reversed: bool = False  # copy taken from the target wire, H on both sides
    edges: Tuple[int, ...] = ()
    through: Tuple[Tuple[int, int, int], ...] = ()  # (gate, in-leg qubit, out-leg qubit)
    copy_line: Optional[Tuple[int, int]] = None
    sink_line: Optional[Tuple[int, int]] = None
    measured_site: Optional[Tuple[int, int]] = None
    causality: Tuple[bool, bool] = (True, True)

    @property
    def case(self) -> str:
        causal = sum(self.causality)
        return {2: "both_causal", 1: "one_anticausal", 0: "both_anticausal"}[causal]


@dataclass(frozen=True, eq=False)
class EmbeddingPlan:
    configuration: MeasurementConfiguration
    k: int
    m: int
    p: float
    paths: Tuple[MeasurementFreePath, ...]
    bridges: Dict[Tuple[int, int], Bridge]
    added: Tuple[Tuple[int, int], ...]
    lattice: BondLattice = field(repr=False)

    @property
    def layout(self) -> BrickwallLayout:
        return build_layout(self.configuration.n, self.configuration.t)

    @property
    def output_map(self) -> Dict[int, int]:
        """Output qubit -> logical wire."""
        return {path.output_qubit: path.wire for path in self.paths}

    @property
    def teleports(self) -> int:
        return sum(path.teleports for path in self.paths)

    def augmented_configuration(self) -> MeasurementConfiguration:
        """Base configuration plus the added sites, every outcome forced to 0."""
        codes = np.where(self.configuration.codes == UNMEASURED, UNMEASURED, 0).astype(np.int8)
        for q, tau in self.added:
            codes[q - 1, tau - 1] = 0
        return MeasurementConfiguration(self.configuration.n, self.configuration.t, codes)

    def simulation_rate(self) -> float:
        """Kraus scalars do not change the normalized output, so p in {0, 1} runs at 1/2."""
        return self.p if 0.0 < self.p < 1.0 else 0.5

    def to_dict(self, gates: Optional[Sequence[GateMatrix]] = None) -> dict:
        body: dict = {
            "version": PLAN_FORMAT_VERSION,
            "n": self.configuration.n,
            "t": self.configuration.t,
            "k": self.k,
            "m": self.m,
            "configuration": self.configuration.to_dict(),
            "paths": [
                {
                    "wire": path.wire,
                    "output_qubit": path.output_qubit - 1,
                    "legs": [[s.qubit - 1, s.timestep - 1, s.causal] for s in path.steps],
                    "visits": [[v.gate - 1, v.kind] for v in path.visits],
                }
                for path in self.paths
            ],
            "bridges": [
                {
                    "slot": [layer, wire],
                    "trivial": b.trivial,
                    "reversed": b.reversed,
                    "case": b.case,
                    "source_gate": b.source_gate - 1,
                    "sink_gate": b.sink_gate - 1,
                    "through": [[g - 1, qi - 1, qo - 1] for g, qi, qo in b.through],
                }
                for (layer, wire), b in sorted(self.bridges.items())
            ],
            "added": [[q - 1, tau - 1] for q, tau in self.added],
        }
        if gates is not None:
            body["assignment"] = {
                str(j): [[float(z.real), float(z.imag)] for z in g.matrix.ravel()]
                for j, g in enumerate(gates)
                if not np.allclose(g.matrix, I4)
            }
        return body


# ----- Planning -----
class _LegIndex:
    """Edge ids by (gate id, qubit) for the legs entering and leaving each gate."""

    def __init__(self, lattice: BondLattice):
        self.lattice = lattice
        self.into: Dict[Tuple[int, int], int] = {}
        self.out_of: Dict[Tuple[int, int], int] = {}
        for e in range(lattice.edge_count):
            q = int(lattice.edge_qubit[e])
            self.into[(int(lattice.v[e]), q)] = e
            self.out_of[(int(lattice.u[e]), q)] = e

    def first_site(self, e: int) -> Tuple[int, int]:
        return self.lattice.edge_sites[e][0]


def _straight_rows(M: MeasurementConfiguration, lattice: BondLattice, k: int) -> Optional[List[Tuple[Tuple[int, ...], Tuple[int, ...]]]]:
    """Whole unmeasured rows as straight paths, preferring k adjacent rows."""
    rows = [q for q in range(1, M.n + 1) if not M.measured_mask[q - 1].any()]
    if len(rows) < k:
        return None
    chosen = rows[:k]
    for i in range(len(rows) - k + 1):
        if rows[i + k - 1] - rows[i] == k - 1:
            chosen = rows[i : i + k]
            break
    out = []
    for q in chosen:
        ids = [e for e in range(lattice.edge_count) if lattice.edge_qubit[e] == q]
        ids.sort(key=lambda e: (lattice.kinds[e] != EDGE_INITIAL, lattice.edge_sites[e][0][1] if lattice.edge_sites[e] else 0))
        vertices = [int(lattice.u[ids[0]])] + [int(lattice.v[e]) for e in ids]
        out.append((tuple(ids), tuple(vertices)))
    return out


def _checked_routes(
    lattice: BondLattice, crossings: Sequence[CrossingPath], k: int
) -> List[Tuple[Tuple[int, ...], Tuple[int, ...]]]:
    if len(crossings) != k:
        raise ConfigurationError(f"expected {k} crossings, got {len(crossings)}")
    left, right = lattice.vertex_count - 2, lattice.vertex_count - 1
    used: Set[int] = set()
    for crossing in crossings:
        edges, vertices = crossing.edges, crossing.vertices
        if len(vertices) != len(edges) + 1 or vertices[0] != left or vertices[-1] != right:
            raise ConfigurationError("a crossing must run from LEFT to RIGHT")
        for e, (x, y) in zip(edges, zip(vertices, vertices[1:])):
            if {int(lattice.u[e]), int(lattice.v[e])} != {x, y} or not lattice.open[e]:
                raise ConfigurationError(f"edge {e} is not an open bond between {x} and {y}")
        if used & set(edges) or len(set(vertices)) != len(vertices):
            raise ConfigurationError("crossings must be edge-disjoint and vertex-simple")
        used.update(edges)
    return [(tuple(c.edges), tuple(c.vertices)) for c in crossings]


def _trace(lattice: BondLattice, edges: Sequence[int], vertices: Sequence[int], wire: int) -> MeasurementFreePath:
    steps = []
    for i, e in enumerate(edges):
        sites = lattice.edge_sites[e]
        steps.append(
            PathStep(int(e), int(lattice.edge_qubit[e]), sites[0][1] if sites else 0, bool(lattice.u[e] == vertices[i]))
        )
    visits = []
    for i in range(1, len(vertices) - 1):
        g0, e_in, e_out = vertices[i], edges[i - 1], edges[i]
        forward_in = lattice.v[e_in] == g0
        forward_out = lattice.u[e_out] == g0
        kind: StepKind = {
            (True, True): "carry",
            (True, False): "cap",
            (False, False): "carry_back",
            (False, True): "cup",
        }[(bool(forward_in), bool(forward_out))]
        visits.append(Visit(int(g0) + 1, kind, int(lattice.edge_qubit[e_in]), int(lattice.edge_qubit[e_out])))
    return MeasurementFreePath(wire, tuple(steps), tuple(visits))


class _Planner:
    def __init__(self, M: MeasurementConfiguration, paths: Sequence[MeasurementFreePath], lattice: BondLattice, window: int):
        self.M = M
        self.layout = build_layout(M.n, M.t)
        self.lattice = lattice
        self.legs = _LegIndex(lattice)
        self.paths = {path.wire: path for path in paths}
        self.window = window
        self.occupancy: Dict[int, List[Tuple[int, int]]] = {}
        for path in paths:
            for index, visit in enumerate(path.visits):
                self.occupancy.setdefault(visit.gate, []).append((path.wire, index))
        self.used: Set[int] = set()
        self.last: Dict[int, int] = {path.wire: -1 for path in paths}
        self.added: Set[Tuple[int, int]] = set()

    def visit(self, wire: int, index: int) -> Visit:
        return self.paths[wire].visits[index]

    def pair(self, gate: int) -> Tuple[int, int]:
        return self.layout.placements[gate - 1].pair

    def check_meetings(self) -> None:
        for gate, occupants in self.occupancy.items():
            kinds = [self.visit(w, i).kind for w, i in occupants]
            if len(occupants) > 1 and not all(kind in CARRIERS for kind in kinds):
                pl = self.layout.placements[gate - 1]
                raise GadgetPreconditionViolated((pl.a, pl.layer), "two paths turn back at the same gate")

    def require_measured(self, e: int) -> None:
        if self.lattice.open[e]:
            self.added.add(self.legs.first_site(e))

    def add_cap_measurements(self) -> None:
        for path in self.paths.values():
            for visit in path.visits:
                if visit.kind == "cap":
                    for q in self.pair(visit.gate):
                        self.require_measured(self.legs.out_of[(visit.gate - 1, q)])

    def _sink_ok(self, gate: int, wire: int) -> Optional[int]:
        occupants = self.occupancy.get(gate, [])
        if gate in self.used or len(occupants) != 1:
            return None
        w, index = occupants[0]
        if w != wire or index <= self.last[wire] or self.visit(w, index).kind not in CARRIERS:
            return None
        return index

    def _search(self, from_wire: int, index: int, to_wire: int, slot: Tuple[int, int], reversed_: bool) -> Optional[Bridge]:
        visit = self.visit(from_wire, index)
        gate = visit.gate
        a, b = self.pair(gate)
        line_in, line_out = visit.line
        copy_in = b if line_in == a else a
        copy_out = b if line_out == a else a
        start = self.legs.out_of[(gate - 1, copy_out)]
        if not self.lattice.open[start]:
            return None
        limit = self.layout.placements[gate - 1].layer + self.window
        right = self.lattice.vertex_count - 1
        queue = deque([(start, (start,), ())])
        seen = {start}
        while queue:
            e, trail, through = queue.popleft()
            head = int(self.lattice.v[e])
            if head == right:
                continue
            here = head + 1
            pl = self.layout.placements[head]
            if pl.layer > limit:
                continue
            arriving = int(self.lattice.edge_qubit[e])
            sink_index = self._sink_ok(here, to_wire)
            if sink_index is not None:
                sink_visit = self.visit(to_wire, sink_index)
                free_out = pl.a + 1 if sink_visit.line[1] == pl.a else pl.a
                out_edge = self.legs.out_of[(head, free_out)]
                measured_site = self.legs.first_site(out_edge) if self.lattice.open[out_edge] else None
                return Bridge(
                    slot=slot,
                    source=(from_wire, index),
                    sink=(to_wire, sink_index),
                    source_gate=gate,
                    sink_gate=here,
                    reversed=reversed_,
                    edges=trail,
                    through=through,
                    copy_line=(copy_in, copy_out),
                    sink_line=(arriving, free_out),
                    measured_site=measured_site,
                    causality=(visit.kind == "carry", sink_visit.kind == "carry"),
                )
            if here in self.used or here in self.occupancy:
                continue
            for q_out in pl.pair:
                nxt = self.legs.out_of[(head, q_out)]
                if self.lattice.open[nxt] and nxt not in seen:
                    seen.add(nxt)
                    queue.append((nxt, trail + (nxt,), through + ((here, arriving, q_out),)))
        return None

    def find_bridge(self, slot: Tuple[int, int]) -> Bridge:
        control, target = slot[1], slot[1] + 1
        for index in range(self.last[control] + 1, len(self.paths[control].visits)):
            visit = self.visit(control, index)
            if visit.kind not in CARRIERS or visit.gate in self.used:
                continue
            occupants = self.occupancy[visit.gate]
            partner = [(w, i) for w, i in occupants if w == target]
            if partner:
                w, i = partner[0]
                other = self.visit(w, i)
                if i > self.last[target] and other.kind in CARRIERS:
                    return Bridge(
                        slot=slot,
                        source=(control, index),
                        sink=(target, i),
                        source_gate=visit.gate,
                        sink_gate=visit.gate,
                        trivial=True,
                        causality=(visit.kind == "carry", other.kind == "carry"),
                    )
                continue
            if len(occupants) == 1:
                found = self._search(control, index, target, slot, False)
                if found is not None:
                    return found
        for index in range(self.last[target] + 1, len(self.paths[target].visits)):
            visit = self.visit(target, index)
            if visit.kind in CARRIERS and visit.gate not in self.used and len(self.occupancy[visit.gate]) == 1:
                found = self._search(target, index, control, slot, True)
                if found is not None:
                    return found
        raise NoBridgeFound(slot[0], (control, target), {"window": self.window})

    def commit(self, bridge: Bridge) -> None:
        self.used.update({bridge.source_gate, bridge.sink_gate, *(g for g, _, _ in bridge.through)})
        for wire, index in (bridge.source, bridge.sink):
            self.last[wire] = index
        if bridge.measured_site is not None:
            self.added.add(bridge.measured_site)


def plan_embedding(
    M: MeasurementConfiguration,
    k: int,
    m: int,
    *,
    slots: Optional[Iterable[Tuple[int, int]]] = None,
    p: float = 0.5,
    window: Optional[int] = None,
    crossings: Optional[Sequence[CrossingPath]] = None,
) -> EmbeddingPlan:
    """k measurement-free paths plus one bridge per CNOT slot of a depth-m brick wall.

    `slots` narrows the CNOT slots to the ones a given logical circuit uses.
    `crossings` replaces the path search with caller-chosen open crossings.
    Bridges are searched forward in time within `window` layers (default 2n)
    of their source gate.
    """
    if k < 2:
        raise ConfigurationError(f"need k >= 2 logical qubits, got {k}")
    if m < 0:
        raise ConfigurationError(f"logical depth must be non-negative, got {m}")
    if M.has_pending:
        raise ConfigurationError("configuration has pending outcomes")
    lattice = circuit_to_bond_lattice(M)
    if crossings is not None:
        routes = _checked_routes(lattice, crossings, k)
    else:
        routes = _straight_rows(M, lattice, k)
    if routes is None:
        routes = [(c.edges, c.vertices) for c in measurement_free_paths(M, k)]
    routes.sort(key=lambda r: int(lattice.edge_qubit[r[0][0]]))
    paths = [_trace(lattice, edges, vertices, wire) for wire, (edges, vertices) in enumerate(routes, start=1)]

    planner = _Planner(M, paths, lattice, window if window is not None else 2 * M.n)
    planner.check_meetings()
    planner.add_cap_measurements()
    wanted = sorted(set(slots)) if slots is not None else brickwall_slots(k, m)
    bridges: Dict[Tuple[int, int], Bridge] = {}
    for slot in wanted:
        if not 1 <= slot[1] < k:
            raise ConfigurationError(f"slot {slot} has no wire pair in 1..{k}")
        bridge = planner.find_bridge(slot)
        planner.commit(bridge)
        bridges[slot] = bridge
    added = tuple(sorted(planner.added))
    logger.info(
        "embedding plan n=%d t=%d k=%d: %d teleports, %d bridges (%d trivial), %d added measurements",
        M.n, M.t, k, sum(path.teleports for path in paths), len(bridges),
        sum(b.trivial for b in bridges.values()), len(added),
    )
    return EmbeddingPlan(M, k, m, p, tuple(paths), bridges, added, lattice)


# ----- Gate assignment -----
def _lift(u: np.ndarray, q: int, a: int) -> np.ndarray:
    return embed_single(u, q == a)


def _cnot(control: int, target: int, a: int) -> np.ndarray:
    return CNOT if control == a else CNOT_REVERSED


def _hosted_ops(plan: EmbeddingPlan, logical: LogicalCircuit) -> Dict[Tuple[int, int], Dict[str, np.ndarray]]:
    """(wire, visit index) -> {'pre', 'post'} single-qubit unitaries in logical order."""
    hosts: Dict[Tuple[int, int], Dict[str, np.ndarray]] = {}
    for path in plan.paths:
        wire = path.wire
        acc = I2
        last_host: Optional[Tuple[int, int]] = None
        for kind, payload in logical.wire_program(wire):
            if kind == "u":
                acc = np.asarray(payload) @ acc
                continue
            slot, _role = payload  # type: ignore[misc]
            bridge = plan.bridges[slot]
            host = bridge.source if bridge.source[0] == wire else bridge.sink
            if bridge.reversed:
                acc = H @ acc
            hosts.setdefault(host, {})["pre"] = acc
            acc = H if bridge.reversed else I2
            last_host = host
        if last_host is None:
            last_host = (wire, len(path.visits) - 1)
        hosts.setdefault(last_host, {})["post"] = acc
    return hosts


def assign_gates(plan: EmbeddingPlan, logical: LogicalCircuit) -> Tuple[GateMatrix, ...]:
    """One gate per placement: carriers, teleportation gadgets and bridge gadgets; identity elsewhere."""
    if logical.k != plan.k:
        raise ConfigurationError(f"logical circuit has {logical.k} wires, plan has {plan.k}")
    slots = logical.cnot_slots()
    missing = [s for s in slots if s not in plan.bridges]
    if missing:
        raise ConfigurationError(f"plan has no bridge for CNOT slots {missing}")
    layout = plan.layout
    legs = _LegIndex(plan.lattice)
    augmented = plan.augmented_configuration().measured_mask

    def measured_leg(e: int) -> bool:
        return any(augmented[q - 1, tau - 1] for q, tau in plan.lattice.edge_sites[e])

    occupancy: Dict[int, List[Tuple[int, int]]] = {}
    for path in plan.paths:
        for index, visit in enumerate(path.visits):
            occupancy.setdefault(visit.gate, []).append((path.wire, index))
            if visit.kind == "cap":
                for q in layout.placements[visit.gate - 1].pair:
                    e = legs.out_of[(visit.gate - 1, q)]
                    if not measured_leg(e):
                        raise GadgetPreconditionViolated(legs.first_site(e), "teleportation needs a post-selected output")

    roles: Dict[int, Tuple[str, Bridge, Tuple[int, int]]] = {}
    for slot in slots:
        bridge = plan.bridges[slot]
        if bridge.trivial:
            roles[bridge.source_gate] = ("shared", bridge, (0, 0))
            continue
        assert bridge.copy_line is not None and bridge.sink_line is not None
        e = legs.out_of[(bridge.sink_gate - 1, bridge.sink_line[1])]
        if not measured_leg(e):
            raise GadgetPreconditionViolated(legs.first_site(e), "bridge qubit needs a post-selected output")
        roles[bridge.source_gate] = ("source", bridge, bridge.copy_line)
        roles[bridge.sink_gate] = ("sink", bridge, bridge.sink_line)
        for g, q_in, q_out in bridge.through:
            roles[g] = ("through", bridge, (q_in, q_out))

    hosts = _hosted_ops(plan, logical)
    paths = {path.wire: path for path in plan.paths}
    gates = []
    for pl in layout.placements:
        gates.append(GateMatrix(_gate_matrix(pl.a, occupancy.get(pl.index, []), roles.get(pl.index), paths, hosts), pl.pair))
    return tuple(gates)


def _gate_matrix(
    a: int,
    occupants: List[Tuple[int, int]],
    role: Optional[Tuple[str, Bridge, Tuple[int, int]]],
    paths: Dict[int, MeasurementFreePath],
    hosts: Dict[Tuple[int, int], Dict[str, np.ndarray]],
) -> np.ndarray:
    if not occupants:
        if role is None:
            return I4
        q_in, q_out = role[2]
        return I4 if q_in == q_out else SWAP
    visits = [(w, i, paths[w].visits[i]) for w, i in occupants]
    if visits[0][2].kind == "cap":
        return CAP
    if visits[0][2].kind == "cup":
        w, i, visit = visits[0]
        post = hosts.get((w, i), {}).get("post", I2)
        return _lift(post, visit.exit_qubit, a) @ CUP

    before, after, interaction = I4, I4, I4
    for w, i, visit in visits:
        ops = hosts.get((w, i), {})
        pre, post = ops.get("pre", I2), ops.get("post", I2)
        q = visit.line[0]
        if visit.kind == "carry":
            before, after = _lift(pre, q, a) @ before, _lift(post, q, a) @ after
        else:
            before, after = _lift(post.T, q, a) @ before, _lift(pre.T, q, a) @ after
    line_in = visits[0][2].line[0]
    if role is not None:
        kind, bridge, (q_in, _q_out) = role
        if kind == "source":
            interaction = _cnot(line_in, q_in, a)
        elif kind == "sink":
            interaction = _lift(H, q_in, a) @ _cnot(q_in, line_in, a)
        elif kind == "shared":
            lines = {w: visit.line[0] for w, _, visit in visits}
            control, target = bridge.slot[1], bridge.slot[1] + 1
            interaction = _cnot(lines[control], lines[target], a)
    route = I4 if visits[0][2].line[0] == visits[0][2].line[1] else SWAP
    return route @ after @ interaction @ before


# ----- Verification and bounds -----
def logical_reference(plan: EmbeddingPlan, logical: LogicalCircuit) -> np.ndarray:
    """Logical output on the mapped output qubits, |0> on every other qubit."""
    psi = logical.simulate().amplitudes
    n = plan.configuration.n
    qubit_of = {wire: q for q, wire in plan.output_map.items()}
    out = np.zeros(2**n, dtype=np.complex128)
    for y, amp in enumerate(psi):
        index = sum(((y >> (w - 1)) & 1) << (qubit_of[w] - 1) for w in range(1, plan.k + 1))
        out[index] = amp
    return out


def embedded_instance(plan: EmbeddingPlan, gates: Sequence[GateMatrix]) -> CircuitInstance:
    return CircuitInstance(plan.layout, tuple(gates), plan.augmented_configuration(), plan.simulation_rate())


def expected_weight(plan: EmbeddingPlan, logical: LogicalCircuit) -> float:
    """p^measured (1-p)^unmeasured, times 1/4 per teleport and 1/2 per used non-shared bridge."""
    p = plan.simulation_rate()
    configuration = plan.augmented_configuration()
    bridges = sum(1 for s in logical.cnot_slots() if not plan.bridges[s].trivial)
    return (
        p ** configuration.measured_count
        * (1.0 - p) ** configuration.unmeasured_count
        * 0.25 ** plan.teleports
        * 0.5 ** bridges
    )


def verify_embedding(plan: EmbeddingPlan, gates: Sequence[GateMatrix], logical: LogicalCircuit) -> Tuple[float, float]:
    """(fidelity against the logical reference, Born weight) of the embedded circuit."""
    state, weight = default_engine().run(embedded_instance(plan, gates))
    if state.is_zero:
        raise ZeroWeight("embedded circuit has zero weight: gadget wiring does not match the plan")
    fid = fidelity(state.normalize(), logical_reference(plan, logical))
    logger.debug("embedding verified: fidelity=%.12f weight=%.3e", fid, weight)
    return fid, float(weight)


def hosting_gates(plan: EmbeddingPlan, logical: LogicalCircuit) -> List[int]:
    """Gates carrying logical single-qubit factors or CNOT gadgets."""
    found: Set[int] = set()
    for wire, index in _hosted_ops(plan, logical):
        found.add(plan.paths[wire - 1].visits[index].gate)
    for slot in logical.cnot_slots():
        bridge = plan.bridges[slot]
        found.update({bridge.source_gate, bridge.sink_gate})
    return sorted(found)


def embedded_dimension_bound(
    M: MeasurementConfiguration, k: int, m: int, stream: StreamKey, *, p: float = 0.5
) -> int:
    """SingleQubit6 rank of a random CNOT brick wall realized inside M, perturbing hosting gates only.

    The augmented configuration only adds projectors, so the rank lower-bounds d_M.
    """
    plan = plan_embedding(M, k, m, p=p)
    logical = random_logical_circuit(k, m, stream.child(Purpose.LOGICAL), cnot_probability=1.0)
    gates = assign_gates(plan, logical)
    report = rank_of_instance(embedded_instance(plan, gates), "single_qubit6", gates=hosting_gates(plan, logical))
    return report.rank


def dump_plan(plan: EmbeddingPlan, path: str | Path, gates: Optional[Sequence[GateMatrix]] = None) -> Path:
    path = Path(path)
    try:
        path.write_text(json.dumps(plan.to_dict(gates), indent=2), encoding="utf-8")
    except OSError as e:
        raise PersistError(str(path), f"could not write embedding plan: {e}") from e
    return path


def teleport_fraction(plan: EmbeddingPlan) -> float:
    steps = sum(len(path.steps) for path in plan.paths)
    return sum(path.anticausal_steps for path in plan.paths) / steps if steps else math.nan
