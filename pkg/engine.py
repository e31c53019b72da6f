"""Dense state-vector engine for monitored circuits.

Simulates V^M(t)|0^n> exactly: gate layers and measurement layers in the
order odd gates, measurements, even gates, measurements, ... Amplitudes are
little-endian (qubit 1 is the least significant bit of the index). The
sqrt(1-p) factors of unmeasured sites, the sqrt(p) factors of measured ones
and the norm removed by each projection live in a separate log accumulator,
so amplitudes stay unit-norm for any depth.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterator, List, Literal, NewType, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg

from .config import ENDIANNESS_NOTE, ENGINE_SETTINGS
from .api._exceptions import ConfigurationError, PersistError, QubitLimitExceeded, ZeroWeight
from .api._models import (
    PENDING,
    UNMEASURED,
    BrickwallLayout,
    CircuitInstance,
    GateMatrix,
    MeasurementConfiguration,
    Placement,
    Purpose,
    StreamKey,
)
from .api.circuit import X, build_layout, sample_gates

logger = logging.getLogger(__name__)

BornWeight = NewType("BornWeight", float)
MatrixLike = Union[GateMatrix, np.ndarray]


@dataclass(frozen=True, eq=False)
class StateVector:
    """Amplitudes times exp(log_scale); possibly sub-normalized."""

    n: int
    amplitudes: np.ndarray
    log_scale: float = 0.0
    normalized: bool = False

    @classmethod
    def basis(cls, n: int, index: int = 0) -> "StateVector":
        amps = np.zeros(2**n, dtype=np.complex128)
        amps[index] = 1.0
        return cls(n, amps, 0.0, True)

    @classmethod
    def from_amplitudes(cls, amplitudes: Sequence[complex]) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=np.complex128)
        n = int(round(math.log2(amps.size)))
        if 2**n != amps.size:
            raise ConfigurationError(f"amplitude count {amps.size} is not a power of two")
        return cls(n, amps)

    @property
    def is_zero(self) -> bool:
        return self.log_scale == -math.inf or not np.any(self.amplitudes)

    def vector(self) -> np.ndarray:
        if self.log_scale == -math.inf:
            return np.zeros_like(self.amplitudes)
        return self.amplitudes * math.exp(self.log_scale)

    def squared_norm(self) -> float:
        if self.log_scale == -math.inf:
            return 0.0
        raw = float(np.vdot(self.amplitudes, self.amplitudes).real)
        return raw * math.exp(2.0 * self.log_scale)

    def log_squared_norm(self) -> float:
        """Natural log of the Born weight; finite even where squared_norm underflows."""
        raw = float(np.vdot(self.amplitudes, self.amplitudes).real)
        if self.log_scale == -math.inf or raw == 0.0:
            return -math.inf
        return math.log(raw) + 2.0 * self.log_scale

    def normalize(self) -> "StateVector":
        raw = float(np.linalg.norm(self.amplitudes))
        if self.is_zero or raw == 0.0:
            raise ZeroWeight("cannot normalize the zero vector: the outcome set is impossible")
        return StateVector(self.n, self.amplitudes / raw, 0.0, True)


# ----- Kernels -----
def _apply_matrix(psi: np.ndarray, n: int, matrix: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    """Apply a 2^k x 2^k matrix to `qubits` (matrix order) of psi, shape (2^n,) or (2^n, B)."""
    k = len(qubits)
    batch = psi.shape[1:]
    tensor = psi.reshape((2,) * n + batch)
    axes = [n - q for q in qubits]
    gate = np.asarray(matrix).reshape((2,) * (2 * k))
    out = np.tensordot(gate, tensor, axes=(list(range(k, 2 * k)), axes))
    out = np.moveaxis(out, list(range(k)), axes)
    return out.reshape(psi.shape)


@lru_cache(maxsize=64)
def _bit_mask(n: int, q: int) -> np.ndarray:
    """Boolean mask of basis indices whose qubit q is 1."""
    mask = ((np.arange(2**n) >> (q - 1)) & 1).astype(bool)
    mask.setflags(write=False)
    return mask


def _project(psi: np.ndarray, n: int, q: int, outcome: int, p: float) -> Tuple[np.ndarray, float]:
    """sqrt(p)|b><b| on qubit q, renormalized.

    Returns the rescaled amplitudes and the log of the factor taken out of
    them (-inf when nothing survives). For a batch (2^n, B) one factor is
    shared by all columns.
    """
    psi = psi.copy()
    psi[_bit_mask(n, q) != bool(outcome)] = 0.0
    nrm = float(np.linalg.norm(psi))
    if nrm == 0.0 or p <= 0.0:
        return psi, -math.inf
    return psi / nrm, math.log(nrm) + 0.5 * math.log(p)


def _check_qubit(n: int, q: int) -> None:
    if not 1 <= q <= n:
        raise ConfigurationError(f"qubit index {q} out of range 1..{n}")


def _as_matrix(U: MatrixLike) -> np.ndarray:
    return U.matrix if isinstance(U, GateMatrix) else np.asarray(U, dtype=np.complex128)


def apply_two_qubit_gate(state: StateVector, U: MatrixLike, a: int, b: int) -> StateVector:
    """Apply U to (a, b), with a the first tensor factor of U."""
    _check_qubit(state.n, a)
    _check_qubit(state.n, b)
    if a == b:
        raise ConfigurationError("a two-qubit gate needs two distinct qubits")
    amps = _apply_matrix(state.amplitudes, state.n, _as_matrix(U), (a, b))
    return StateVector(state.n, amps, state.log_scale)


def apply_single_qubit_gate(state: StateVector, u: np.ndarray, q: int) -> StateVector:
    _check_qubit(state.n, q)
    return StateVector(state.n, _apply_matrix(state.amplitudes, state.n, u, (q,)), state.log_scale)


def apply_measurement_kraus(state: StateVector, qubit: int, outcome: int, p: float) -> StateVector:
    """sqrt(p)|b><b| on one qubit; may return the zero vector."""
    _check_qubit(state.n, qubit)
    if not 0.0 < p <= 1.0:
        raise ConfigurationError(f"measurement Kraus needs 0 < p <= 1, got {p}")
    mask = _bit_mask(state.n, qubit)
    amps = state.amplitudes * math.sqrt(p)
    amps[mask != bool(outcome)] = 0.0
    return StateVector(state.n, amps, state.log_scale)


def apply_unmeasured(state: StateVector, p: float) -> StateVector:
    """sqrt(1-p) I, folded into the log accumulator."""
    if p >= 1.0:
        return StateVector(state.n, state.amplitudes, -math.inf)
    return StateVector(state.n, state.amplitudes, state.log_scale + 0.5 * math.log1p(-p))


def fidelity(a: StateVector | np.ndarray, b: StateVector | np.ndarray) -> float:
    """|<a|b>|^2 / (|a|^2 |b|^2)."""
    va = a.amplitudes if isinstance(a, StateVector) else np.asarray(a)
    vb = b.amplitudes if isinstance(b, StateVector) else np.asarray(b)
    na, nb = np.vdot(va, va).real, np.vdot(vb, vb).real
    if na == 0 or nb == 0:
        return 0.0
    return float(abs(np.vdot(va, vb)) ** 2 / (na * nb))


def circuit_unitary(layout: BrickwallLayout, gates: Sequence[MatrixLike]) -> np.ndarray:
    """Dense 2^n x 2^n product of all gate layers, no measurements."""
    if len(gates) != layout.gate_count:
        raise ConfigurationError(f"expected {layout.gate_count} gates, got {len(gates)}")
    columns = np.eye(2**layout.n, dtype=np.complex128)
    for pl in layout.placements:
        columns = _apply_matrix(columns, layout.n, _as_matrix(gates[pl.index - 1]), pl.pair)
    return columns


def schedule(layout: BrickwallLayout) -> Iterator[Tuple[str, object]]:
    """Engine order: ('gate', Placement) for layer tau, then ('site', (q, tau))."""
    for tau in range(1, layout.t + 1):
        for pl in layout.layer(tau):
            yield "gate", pl
        for q in range(1, layout.n + 1):
            yield "site", (q, tau)


class StateVectorEngine:
    """Exact dense simulator with a configurable qubit cap."""

    def __init__(self, *, max_qubits: Optional[int] = None) -> None:
        self._max_qubits = max_qubits or ENGINE_SETTINGS.max_qubits

    @property
    def max_qubits(self) -> int:
        return self._max_qubits

    def check_size(self, n: int) -> None:
        if n > self._max_qubits:
            raise QubitLimitExceeded(n, self._max_qubits)

    # ----- Monitored evolution -----
    def run(self, instance: CircuitInstance) -> Tuple[StateVector, BornWeight]:
        """Unnormalized V^M(t)|0^n> and its Born weight."""
        layout, configuration = instance.layout, instance.configuration
        self.check_size(layout.n)
        if configuration.has_pending:
            raise ConfigurationError("configuration has pending outcomes; use sample_trajectory")
        n, p = layout.n, instance.p
        psi = StateVector.basis(n).amplitudes
        log_scale = 0.0
        for kind, item in schedule(layout):
            if kind == "gate":
                pl: Placement = item  # type: ignore[assignment]
                psi = _apply_matrix(psi, n, instance.gates[pl.index - 1].matrix, pl.pair)
                continue
            q, tau = item  # type: ignore[misc]
            psi, log_scale = self._apply_site(psi, n, q, int(configuration.codes[q - 1, tau - 1]), p, log_scale)
        psi = self._apply_frame(psi, n, instance.frame)
        state = StateVector(n, psi, log_scale)
        return state, BornWeight(state.squared_norm())

    def normalized_output(self, instance: CircuitInstance) -> StateVector:
        state, _ = self.run(instance)
        return state.normalize()

    def perturbed_columns(
        self,
        instance: CircuitInstance,
        perturbations: Callable[[Placement], Sequence[np.ndarray]],
    ) -> Tuple[np.ndarray, float]:
        """Outputs with each 4x4 perturbation P applied right after its gate (P U_j).

        Returns the (2^n, columns) raw amplitudes, ordered by gate and then by
        perturbation, and the log scale shared by every column. Each gate's
        batch is renormalized on its own and rescaled to the largest batch
        scale at the end; batches far below it underflow to zero columns.
        """
        layout, configuration = instance.layout, instance.configuration
        self.check_size(layout.n)
        n, p = layout.n, instance.p
        ops = list(schedule(layout))
        psi = StateVector.basis(n).amplitudes
        blocks: List[Tuple[np.ndarray, float]] = []
        log_scale = 0.0
        for position, (kind, item) in enumerate(ops):
            if kind == "site":
                q, tau = item  # type: ignore[misc]
                psi, log_scale = self._apply_site(psi, n, q, int(configuration.codes[q - 1, tau - 1]), p, log_scale)
                continue
            pl: Placement = item  # type: ignore[assignment]
            psi = _apply_matrix(psi, n, instance.gates[pl.index - 1].matrix, pl.pair)
            factors = perturbations(pl)
            if not factors:
                continue
            batch = np.stack([_apply_matrix(psi, n, P, pl.pair) for P in factors], axis=1)
            batch_scale = log_scale
            for kind2, item2 in ops[position + 1 :]:
                if kind2 == "gate":
                    pl2: Placement = item2  # type: ignore[assignment]
                    batch = _apply_matrix(batch, n, instance.gates[pl2.index - 1].matrix, pl2.pair)
                else:
                    q2, tau2 = item2  # type: ignore[misc]
                    code = int(configuration.codes[q2 - 1, tau2 - 1])
                    batch, batch_scale = self._apply_site(batch, n, q2, code, p, batch_scale)
            blocks.append((self._apply_frame(batch, n, instance.frame), batch_scale))
        if not blocks:
            return np.zeros((2**n, 0), dtype=np.complex128), log_scale
        finite = [scale for _, scale in blocks if scale != -math.inf]
        if not finite:
            return np.concatenate([np.zeros_like(b) for b, _ in blocks], axis=1), -math.inf
        top = max(finite)
        columns = [b * math.exp(scale - top) if scale != -math.inf else np.zeros_like(b) for b, scale in blocks]
        return np.concatenate(columns, axis=1), top

    @staticmethod
    def _apply_site(
        psi: np.ndarray, n: int, q: int, code: int, p: float, log_scale: float
    ) -> Tuple[np.ndarray, float]:
        if code == UNMEASURED:
            return psi, (-math.inf if p >= 1.0 else log_scale + 0.5 * math.log1p(-p))
        if code == PENDING:
            raise ConfigurationError("configuration has pending outcomes; use sample_trajectory")
        psi, step = _project(psi, n, q, code, p)
        return psi, log_scale + step

    @staticmethod
    def _apply_frame(psi: np.ndarray, n: int, frame: int) -> np.ndarray:
        for q in range(1, n + 1):
            if frame >> (q - 1) & 1:
                psi = _apply_matrix(psi, n, X, (q,))
        return psi

    def sample_trajectory(
        self,
        n: int,
        t: int,
        p: float,
        gates: Optional[Sequence[GateMatrix]],
        stream: StreamKey,
        *,
        pattern: Optional[MeasurementConfiguration] = None,
    ) -> Tuple[MeasurementConfiguration, StateVector]:
        """Born-rule trajectory; `pattern` fixes where measurements happen."""
        self.check_size(n)
        layout = build_layout(n, t)
        gates = tuple(gates) if gates is not None else sample_gates(layout, stream.child(Purpose.GATES))
        rng = stream.child(Purpose.TRAJECTORY).rng()
        codes = np.full((n, t), UNMEASURED, dtype=np.int8)
        psi = StateVector.basis(n).amplitudes
        log_scale = 0.0
        for kind, item in schedule(layout):
            if kind == "gate":
                pl: Placement = item  # type: ignore[assignment]
                psi = _apply_matrix(psi, n, gates[pl.index - 1].matrix, pl.pair)
                continue
            q, tau = item  # type: ignore[misc]
            measured = pattern.is_measured(q, tau) if pattern is not None else rng.random() < p
            if not measured:
                psi, log_scale = self._apply_site(psi, n, q, UNMEASURED, p, log_scale)
                continue
            mask = _bit_mask(n, q)
            weight_one = float(np.vdot(psi[mask], psi[mask]).real)
            total = float(np.vdot(psi, psi).real)
            outcome = int(total > 0.0 and rng.random() < weight_one / total)
            codes[q - 1, tau - 1] = outcome
            psi, log_scale = self._apply_site(psi, n, q, outcome, p, log_scale)
        configuration = MeasurementConfiguration(n, t, codes)
        logger.debug("trajectory n=%d t=%d p=%.3f measured=%d", n, t, p, configuration.measured_count)
        return configuration, StateVector(n, psi, log_scale)

    # ----- Entanglement observables -----
    @staticmethod
    def schmidt_rank(state: StateVector, cut: int, tol: float = 1e-10) -> int:
        """Rank across qubits 1..cut | cut+1..n, relative to the largest singular value."""
        if not 1 <= cut < state.n:
            raise ConfigurationError(f"cut must lie in 1..{state.n - 1}, got {cut}")
        matrix = state.amplitudes.reshape(2 ** (state.n - cut), 2**cut)
        sv = linalg.svdvals(matrix)
        if sv.size == 0 or sv[0] == 0.0:
            return 0
        return int(np.count_nonzero(sv > tol * sv[0]))

    def renyi0_profile(self, state: StateVector, tol: float = 1e-10) -> List[float]:
        """log2 Schmidt rank for every cut 1..n-1."""
        return [math.log2(max(self.schmidt_rank(state, c, tol), 1)) for c in range(1, state.n)]


_DEFAULT_ENGINE: Optional[StateVectorEngine] = None


def default_engine() -> StateVectorEngine:
    global _DEFAULT_ENGINE
    if _DEFAULT_ENGINE is None or _DEFAULT_ENGINE.max_qubits != ENGINE_SETTINGS.max_qubits:
        _DEFAULT_ENGINE = StateVectorEngine()
    return _DEFAULT_ENGINE


def run(instance: CircuitInstance) -> Tuple[StateVector, BornWeight]:
    return default_engine().run(instance)


def normalized_output(instance: CircuitInstance) -> StateVector:
    return default_engine().normalized_output(instance)


def schmidt_rank(state: StateVector, cut: int, tol: float = 1e-10) -> int:
    return StateVectorEngine.schmidt_rank(state, cut, tol)


def dump_state(state: StateVector, path: str | Path, fmt: Literal["json", "csv"] = "json") -> Path:
    """Write (index, re, im) rows; the header names the endianness convention."""
    path = Path(path)
    amps = state.vector()
    try:
        if fmt == "json":
            body = {
                "endianness": ENDIANNESS_NOTE,
                "n": state.n,
                "amplitudes": [[i, float(a.real), float(a.imag)] for i, a in enumerate(amps)],
            }
            path.write_text(json.dumps(body, indent=2), encoding="utf-8")
        elif fmt == "csv":
            with path.open("w", newline="", encoding="utf-8") as f:
                f.write(f"# {ENDIANNESS_NOTE}\n")
                writer = csv.writer(f)
                writer.writerow(["index", "re", "im"])
                for i, a in enumerate(amps):
                    writer.writerow([i, repr(float(a.real)), repr(float(a.imag))])
        else:
            raise ConfigurationError(f"unknown state dump format {fmt!r}")
    except OSError as e:
        raise PersistError(str(path), f"could not write state dump: {e}") from e
    return path
