"""Typed circuit models: brick-wall layouts, measurement configurations, gates.

Conventions:
- qubits and timesteps are 1-based in memory, 0-based when serialized
- a gate matrix on pair (a, a+1) acts on |x_a x_{a+1}> with qubit a as the
  first tensor factor
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, Iterator, List, Literal, NamedTuple, Optional, Tuple

import numpy as np

from ..config import CONFIGURATION_FORMAT_VERSION, DETERMINANT_TOL, UNITARITY_TOL
from ._exceptions import ConfigurationError


SamplingMode = Literal["structural_zero", "outcome_deferred"]

# Status codes stored in MeasurementConfiguration grids.
UNMEASURED = -1
PENDING = 2


class Purpose(IntEnum):
    """First component of a StreamKey derivation path."""

    CONFIGURATION = 1
    GATES = 2
    TRAJECTORY = 3
    LATTICE = 4
    MONTE_CARLO = 5
    RANK = 6
    LOGICAL = 7
    SWEEP = 8


@dataclass(frozen=True)
class StreamKey:
    """Seed plus derivation path; identical keys give identical streams."""

    seed: int
    path: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError(f"master seed must fit in 64 bits, got {self.seed}")
        if any(int(k) < 0 for k in self.path):
            raise ConfigurationError(f"derivation path entries must be non-negative: {self.path}")

    def child(self, *keys: int) -> "StreamKey":
        return StreamKey(self.seed, self.path + tuple(int(k) for k in keys))

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(entropy=int(self.seed), spawn_key=self.path))


class Placement(NamedTuple):
    index: int  # gate index j, 1..R
    layer: int  # tau, 1..t
    a: int  # acts on (a, a+1)

    @property
    def pair(self) -> Tuple[int, int]:
        return (self.a, self.a + 1)


@dataclass(frozen=True)
class BrickwallLayout:
    n: int
    t: int
    placements: Tuple[Placement, ...]
    _by_site: Dict[Tuple[int, int], Placement] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self) -> None:
        for pl in self.placements:
            self._by_site[(pl.a, pl.layer)] = pl
            self._by_site[(pl.a + 1, pl.layer)] = pl

    @property
    def gate_count(self) -> int:
        return len(self.placements)

    def layer(self, tau: int) -> List[Placement]:
        return [pl for pl in self.placements if pl.layer == tau]

    def gate_on(self, q: int, tau: int) -> Optional[Placement]:
        """Gate acting on qubit q in layer tau, if any."""
        return self._by_site.get((q, tau))

    def next_gate(self, q: int, tau: int) -> Optional[Placement]:
        """First gate on qubit q strictly after layer tau."""
        for later in range(tau + 1, self.t + 1):
            pl = self._by_site.get((q, later))
            if pl is not None:
                return pl
        return None

    def previous_gate(self, q: int, tau: int) -> Optional[Placement]:
        """Last gate on qubit q in layers 1..tau."""
        for earlier in range(tau, 0, -1):
            pl = self._by_site.get((q, earlier))
            if pl is not None:
                return pl
        return None


@dataclass(frozen=True)
class MeasurementStatus:
    measured: bool
    outcome: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.measured and self.outcome is not None:
            raise ConfigurationError("an unmeasured site cannot carry an outcome")
        if self.outcome not in (None, 0, 1):
            raise ConfigurationError(f"outcome must be 0 or 1, got {self.outcome}")

    @classmethod
    def unmeasured(cls) -> "MeasurementStatus":
        return cls(False)

    @classmethod
    def with_outcome(cls, b: int) -> "MeasurementStatus":
        return cls(True, b)

    @classmethod
    def pending(cls) -> "MeasurementStatus":
        return cls(True, None)

    @property
    def code(self) -> int:
        if not self.measured:
            return UNMEASURED
        return PENDING if self.outcome is None else self.outcome

    @staticmethod
    def from_code(code: int) -> "MeasurementStatus":
        if code == UNMEASURED:
            return MeasurementStatus(False)
        if code == PENDING:
            return MeasurementStatus(True, None)
        return MeasurementStatus(True, int(code))


@dataclass(frozen=True, eq=False)
class MeasurementConfiguration:
    """Status of every site (q, tau); site (q, tau) follows gate layer tau."""

    n: int
    t: int
    codes: np.ndarray  # int8, shape (n, t), row q-1, column tau-1

    def __post_init__(self) -> None:
        codes = np.array(self.codes, dtype=np.int8)
        if codes.shape != (self.n, self.t):
            raise ConfigurationError(f"status grid must have shape ({self.n}, {self.t}), got {codes.shape}")
        if not np.isin(codes, (UNMEASURED, 0, 1, PENDING)).all():
            raise ConfigurationError("status grid contains unknown codes")
        codes.setflags(write=False)
        object.__setattr__(self, "codes", codes)

    @classmethod
    def unmeasured(cls, n: int, t: int) -> "MeasurementConfiguration":
        return cls(n, t, np.full((n, t), UNMEASURED, dtype=np.int8))

    @classmethod
    def from_sites(
        cls, n: int, t: int, sites: Dict[Tuple[int, int], MeasurementStatus]
    ) -> "MeasurementConfiguration":
        codes = np.full((n, t), UNMEASURED, dtype=np.int8)
        for (q, tau), status in sites.items():
            _check_site(n, t, q, tau)
            codes[q - 1, tau - 1] = status.code
        return cls(n, t, codes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MeasurementConfiguration):
            return NotImplemented
        return self.n == other.n and self.t == other.t and np.array_equal(self.codes, other.codes)

    def __hash__(self) -> int:
        return hash((self.n, self.t, self.codes.tobytes()))

    def status(self, q: int, tau: int) -> MeasurementStatus:
        _check_site(self.n, self.t, q, tau)
        return MeasurementStatus.from_code(int(self.codes[q - 1, tau - 1]))

    def is_measured(self, q: int, tau: int) -> bool:
        _check_site(self.n, self.t, q, tau)
        return int(self.codes[q - 1, tau - 1]) != UNMEASURED

    def sites(self) -> Iterator[Tuple[int, int, MeasurementStatus]]:
        for q in range(1, self.n + 1):
            for tau in range(1, self.t + 1):
                yield q, tau, MeasurementStatus.from_code(int(self.codes[q - 1, tau - 1]))

    @property
    def measured_count(self) -> int:
        return int(np.count_nonzero(self.codes != UNMEASURED))

    @property
    def unmeasured_count(self) -> int:
        return self.n * self.t - self.measured_count

    @property
    def has_pending(self) -> bool:
        return bool(np.any(self.codes == PENDING))

    @property
    def measured_mask(self) -> np.ndarray:
        return self.codes != UNMEASURED

    def with_status(self, q: int, tau: int, status: MeasurementStatus) -> "MeasurementConfiguration":
        _check_site(self.n, self.t, q, tau)
        codes = self.codes.copy()
        codes[q - 1, tau - 1] = status.code
        return MeasurementConfiguration(self.n, self.t, codes)

    def with_measured(self, sites: Iterable[Tuple[int, int]], outcome: int = 0) -> "MeasurementConfiguration":
        codes = self.codes.copy()
        for q, tau in sites:
            _check_site(self.n, self.t, q, tau)
            codes[q - 1, tau - 1] = outcome
        return MeasurementConfiguration(self.n, self.t, codes)

    # ----- Serialization (0-based, versioned) -----
    def to_dict(self) -> dict:
        sites = []
        for q, tau, status in self.sites():
            entry: dict = {"q": q - 1, "tau": tau - 1, "status": "measured" if status.measured else "unmeasured"}
            if status.outcome is not None:
                entry["outcome"] = status.outcome
            sites.append(entry)
        return {"version": CONFIGURATION_FORMAT_VERSION, "n": self.n, "t": self.t, "sites": sites}

    @staticmethod
    def from_dict(d: dict) -> "MeasurementConfiguration":
        version = d.get("version")
        if version != CONFIGURATION_FORMAT_VERSION:
            raise ConfigurationError(f"unsupported configuration version {version!r}")
        n, t = int(d["n"]), int(d["t"])
        sites: Dict[Tuple[int, int], MeasurementStatus] = {}
        for entry in d.get("sites", []):
            measured = entry["status"] == "measured"
            outcome = entry.get("outcome")
            sites[(int(entry["q"]) + 1, int(entry["tau"]) + 1)] = MeasurementStatus(measured, outcome)
        return MeasurementConfiguration.from_sites(n, t, sites)


@dataclass(frozen=True, eq=False)
class GateMatrix:
    matrix: np.ndarray
    pair: Tuple[int, int]

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=np.complex128)
        if m.shape != (4, 4):
            raise ConfigurationError(f"gate matrix must be 4x4, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def unitarity_residual(self) -> float:
        return float(np.max(np.abs(self.matrix.conj().T @ self.matrix - np.eye(4))))

    def determinant(self) -> complex:
        return complex(np.linalg.det(self.matrix))

    def is_special_unitary(self) -> bool:
        return self.unitarity_residual() <= UNITARITY_TOL and abs(self.determinant() - 1) <= DETERMINANT_TOL

    def with_matrix(self, matrix: np.ndarray) -> "GateMatrix":
        return GateMatrix(matrix, self.pair)


@dataclass(frozen=True)
class CircuitInstance:
    """V^M(t): layout, one gate per placement, configuration and rate.

    `frame` is a bitmask of qubits that receive an X after the last
    measurement layer (bit q-1 for qubit q).
    """

    layout: BrickwallLayout
    gates: Tuple[GateMatrix, ...]
    configuration: MeasurementConfiguration
    p: float
    frame: int = 0

    def __post_init__(self) -> None:
        if len(self.gates) != self.layout.gate_count:
            raise ConfigurationError(f"expected {self.layout.gate_count} gates, got {len(self.gates)}")
        if (self.configuration.n, self.configuration.t) != (self.layout.n, self.layout.t):
            raise ConfigurationError("configuration dimensions do not match the layout")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigurationError(f"measurement rate must lie in [0, 1], got {self.p}")
        for pl, gate in zip(self.layout.placements, self.gates):
            if tuple(gate.pair) != pl.pair:
                raise ConfigurationError(f"gate {pl.index} targets {gate.pair}, placement expects {pl.pair}")
        object.__setattr__(self, "gates", tuple(self.gates))

    @property
    def n(self) -> int:
        return self.layout.n

    @property
    def t(self) -> int:
        return self.layout.t

    def with_gates(self, gates: Iterable[GateMatrix]) -> "CircuitInstance":
        return CircuitInstance(self.layout, tuple(gates), self.configuration, self.p, self.frame)

    def with_configuration(self, configuration: MeasurementConfiguration) -> "CircuitInstance":
        return CircuitInstance(self.layout, self.gates, configuration, self.p, self.frame)


def _check_site(n: int, t: int, q: int, tau: int) -> None:
    if not (1 <= q <= n and 1 <= tau <= t):
        raise ConfigurationError(f"site (q={q}, tau={tau}) outside a {n}x{t} grid")
