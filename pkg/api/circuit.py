"""Monitored-circuit model: brick-wall layouts, sampled configurations and gates."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field
from scipy import linalg

from ..config import CONFIGURATION_FORMAT_VERSION
from ._exceptions import ConfigurationError, PersistError
from ._models import (
    PENDING,
    UNMEASURED,
    BrickwallLayout,
    CircuitInstance,
    GateMatrix,
    MeasurementConfiguration,
    Placement,
    Purpose,
    SamplingMode,
    StreamKey,
)

logger = logging.getLogger(__name__)


# Single-qubit and two-qubit constants (pair order: first factor is qubit a)
I2 = np.eye(2, dtype=np.complex128)
X = np.array([[0, 1], [1, 0]], dtype=np.complex128)
Y = np.array([[0, -1j], [1j, 0]], dtype=np.complex128)
Z = np.array([[1, 0], [0, -1]], dtype=np.complex128)
H = np.array([[1, 1], [1, -1]], dtype=np.complex128) / np.sqrt(2)
S = np.array([[1, 0], [0, 1j]], dtype=np.complex128)
PAULIS: Dict[str, np.ndarray] = {"I": I2, "X": X, "Y": Y, "Z": Z}

I4 = np.eye(4, dtype=np.complex128)
CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=np.complex128)
CNOT_REVERSED = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=np.complex128)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=np.complex128)


class SiteModel(BaseModel):
    q: int = Field(ge=0)
    tau: int = Field(ge=0)
    status: str = Field(pattern="^(measured|unmeasured)$")
    outcome: Optional[int] = Field(default=None, ge=0, le=1)


class ConfigurationFile(BaseModel):
    """On-disk MeasurementConfiguration (0-based sites)."""

    version: int = CONFIGURATION_FORMAT_VERSION
    n: int = Field(ge=2)
    t: int = Field(ge=2)
    sites: List[SiteModel] = Field(default_factory=list)


def build_layout(n: int, t: int) -> BrickwallLayout:
    """Brick-wall placements: odd layers pair (2i-1, 2i), even layers (2i, 2i+1)."""
    for name, value in (("n", n), ("t", t)):
        if not isinstance(value, (int, np.integer)) or value < 2 or value % 2:
            raise ConfigurationError(f"{name} must be an even integer >= 2, got {value!r}")
    placements: List[Placement] = []
    for tau in range(1, t + 1):
        starts = range(1, n, 2) if tau % 2 == 1 else range(2, n - 1, 2)
        for a in starts:
            placements.append(Placement(len(placements) + 1, tau, a))
    layout = BrickwallLayout(int(n), int(t), tuple(placements))
    assert layout.gate_count == (t // 2) * (n - 1)
    return layout


def sample_measurement_configuration(
    n: int, t: int, p: float, mode: SamplingMode, stream: StreamKey
) -> MeasurementConfiguration:
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"measurement rate must lie in [0, 1], got {p}")
    if mode not in ("structural_zero", "outcome_deferred"):
        raise ConfigurationError(f"unknown sampling mode {mode!r}")
    measured = stream.rng().random((n, t)) < p
    fill = 0 if mode == "structural_zero" else PENDING
    codes = np.where(measured, fill, UNMEASURED).astype(np.int8)
    return MeasurementConfiguration(n, t, codes)


def haar_su4(rng: np.random.Generator) -> np.ndarray:
    """Haar SU(4) matrix: QR of a complex Ginibre matrix, phases fixed, det set to 1."""
    ginibre = (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))) / np.sqrt(2)
    q, r = linalg.qr(ginibre)
    d = np.diag(r)
    q = q * (d / np.abs(d))
    return q / np.power(np.linalg.det(q), 0.25)


def sample_haar_su4(stream: StreamKey, pair: Tuple[int, int] = (1, 2)) -> GateMatrix:
    return GateMatrix(haar_su4(stream.rng()), pair)


def sample_gates(layout: BrickwallLayout, stream: StreamKey) -> Tuple[GateMatrix, ...]:
    """One Haar gate per placement, each from its own derived stream."""
    return tuple(sample_haar_su4(stream.child(pl.index), pl.pair) for pl in layout.placements)


def identity_gates(layout: BrickwallLayout) -> Tuple[GateMatrix, ...]:
    return tuple(GateMatrix(I4, pl.pair) for pl in layout.placements)


def random_instance(n: int, t: int, p: float, stream: StreamKey) -> CircuitInstance:
    """Haar gates plus a structural-zero configuration, both derived from `stream`."""
    layout = build_layout(n, t)
    configuration = sample_measurement_configuration(n, t, p, "structural_zero", stream.child(Purpose.CONFIGURATION))
    return CircuitInstance(layout, sample_gates(layout, stream.child(Purpose.GATES)), configuration, p)


def embed_single(matrix: np.ndarray, first: bool) -> np.ndarray:
    """Lift a one-qubit matrix to the pair: first factor if `first`, else second."""
    return np.kron(matrix, I2) if first else np.kron(I2, matrix)


def normalize_outcomes_to_zero(instance: CircuitInstance) -> CircuitInstance:
    """Rewrite outcome-1 sites as outcome 0 with X absorbed into neighbouring gates.

    Uses |1><1| = X|0><0|X per wire segment between two gates on the same
    qubit: the segment's first X goes into the gate before it, the second into
    the gate after it (or the output frame). A segment mixing outcomes 0 and 1
    already has weight zero; it is rewritten the same way.
    """
    configuration = instance.configuration
    if configuration.has_pending:
        raise ConfigurationError("configuration has pending outcomes; sample a trajectory first")
    if not np.any(configuration.codes == 1):
        return instance

    layout = instance.layout
    matrices = [g.matrix.copy() for g in instance.gates]
    codes = configuration.codes.copy()
    frame = instance.frame
    for q in range(1, layout.n + 1):
        gate_layers = [tau for tau in range(1, layout.t + 1) if layout.gate_on(q, tau) is not None]
        for k, start in enumerate(gate_layers):
            stop = gate_layers[k + 1] - 1 if k + 1 < len(gate_layers) else layout.t
            segment = codes[q - 1, start - 1 : stop]
            if not np.any(segment == 1):
                continue
            codes[q - 1, start - 1 : stop] = np.where(segment == UNMEASURED, UNMEASURED, 0)
            before = layout.gate_on(q, start)
            matrices[before.index - 1] = embed_single(X, q == before.a) @ matrices[before.index - 1]
            if k + 1 < len(gate_layers):
                after = layout.gate_on(q, gate_layers[k + 1])
                matrices[after.index - 1] = matrices[after.index - 1] @ embed_single(X, q == after.a)
            else:
                frame ^= 1 << (q - 1)
    gates = tuple(g.with_matrix(m) for g, m in zip(instance.gates, matrices))
    logger.debug("normalized %d outcome-1 sites", int(np.count_nonzero(configuration.codes == 1)))
    return CircuitInstance(layout, gates, MeasurementConfiguration(layout.n, layout.t, codes), instance.p, frame)


# ----- Configuration files -----
def save_configuration(configuration: MeasurementConfiguration, path: str | Path) -> Path:
    path = Path(path)
    body = ConfigurationFile.model_validate(configuration.to_dict())
    try:
        path.write_text(json.dumps(body.model_dump(exclude_none=True), indent=2), encoding="utf-8")
    except OSError as e:
        raise PersistError(str(path), f"could not write configuration: {e}") from e
    return path


def load_configuration(path: str | Path) -> MeasurementConfiguration:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise PersistError(str(path), f"could not read configuration: {e}") from e
    body = ConfigurationFile.model_validate(raw)
    return MeasurementConfiguration.from_dict(body.model_dump(exclude_none=True))


def configuration_from_rows(rows: Sequence[str], outcome: int = 0) -> MeasurementConfiguration:
    """One text row per qubit: '.' unmeasured, 'x' measured, '0' or '1' a fixed outcome."""
    n, t = len(rows), len(rows[0]) if rows else 0
    codes = np.full((n, t), UNMEASURED, dtype=np.int8)
    for q, row in enumerate(rows):
        if len(row) != t:
            raise ConfigurationError("rows must have equal length")
        for tau, ch in enumerate(row):
            if ch in "xX":
                codes[q, tau] = outcome
            elif ch in "01":
                codes[q, tau] = int(ch)
            elif ch != ".":
                raise ConfigurationError(f"unknown site marker {ch!r}")
    return MeasurementConfiguration(n, t, codes)
