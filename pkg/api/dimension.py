"""Accessible dimension: Pauli-perturbed outputs, numerical rank and bound formulas."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Collection, List, Literal, Optional, Tuple

import numpy as np
from scipy import linalg

from ..config import RANK_SETTINGS
from ..engine import StateVectorEngine, default_engine
from ._exceptions import ConfigurationError
from ._models import CircuitInstance, MeasurementConfiguration, MeasurementStatus, Purpose, StreamKey
from ._responses import RankReport
from .circuit import PAULIS, build_layout, sample_gates

logger = logging.getLogger(__name__)

Family = Literal["full15", "single_qubit6"]

FULL15: Tuple[Tuple[str, str], ...] = tuple(
    (a, b) for a in "IXYZ" for b in "IXYZ" if (a, b) != ("I", "I")
)
SINGLE_QUBIT6: Tuple[Tuple[str, str], ...] = (
    ("I", "X"), ("I", "Y"), ("I", "Z"), ("X", "I"), ("Y", "I"), ("Z", "I"),
)
_PAIRS = {"full15": FULL15, "single_qubit6": SINGLE_QUBIT6}


@dataclass(frozen=True)
class PerturbationIndex:
    gate: int  # j, 1..R
    alpha: str
    beta: str
    family: Family

    def matrix(self) -> np.ndarray:
        return np.kron(PAULIS[self.alpha], PAULIS[self.beta])


@dataclass(frozen=True, eq=False)
class RealifiedMatrix:
    """Real parts stacked on imaginary parts, one column per perturbation.

    Every column shares the factor exp(log_scale), left out of `matrix`.
    """

    matrix: np.ndarray
    indices: Tuple[PerturbationIndex, ...]
    log_scale: float = 0.0

    @property
    def column_count(self) -> int:
        return int(self.matrix.shape[1])


def pairs_for(family: Family) -> Tuple[Tuple[str, str], ...]:
    try:
        return _PAIRS[family]
    except KeyError:
        raise ConfigurationError(f"unknown perturbation family {family!r}") from None


def realify(columns: np.ndarray) -> np.ndarray:
    return np.vstack([columns.real, columns.imag])


def perturbed_outputs(
    instance: CircuitInstance,
    family: Family = "full15",
    *,
    gates: Optional[Collection[int]] = None,
    engine: Optional[StateVectorEngine] = None,
) -> RealifiedMatrix:
    """Outputs with (alpha x beta) inserted right after each gate j: (alpha x beta) U_j.

    `gates` restricts the perturbed gate indices.
    """
    engine = engine or default_engine()
    pairs = pairs_for(family)
    matrices = [np.kron(PAULIS[a], PAULIS[b]) for a, b in pairs]
    chosen = set(gates) if gates is not None else None
    indices: List[PerturbationIndex] = []

    def factors(pl):
        if chosen is not None and pl.index not in chosen:
            return []
        indices.extend(PerturbationIndex(pl.index, a, b, family) for a, b in pairs)
        return matrices

    columns, log_scale = engine.perturbed_columns(instance, factors)
    return RealifiedMatrix(realify(columns), tuple(indices), log_scale)


def numerical_rank(matrix: RealifiedMatrix | np.ndarray, tol: Optional[float] = None) -> RankReport:
    """Count singular values above tol * sigma_1; warn when no 10^3 gap sits at the threshold."""
    tol = RANK_SETTINGS.tolerance if tol is None else tol
    if not 0.0 < tol < 1.0:
        raise ConfigurationError(f"tolerance must lie in (0, 1), got {tol}")
    data = matrix.matrix if isinstance(matrix, RealifiedMatrix) else np.asarray(matrix, dtype=float)
    sv = linalg.svdvals(data) if data.size else np.zeros(0)
    if sv.size == 0 or sv[0] == 0.0:
        return RankReport(sv, tol, 0)
    rank = int(np.count_nonzero(sv > tol * sv[0]))
    warnings: List[str] = []
    if rank < sv.size:
        below = sv[rank]
        gap = np.inf if below == 0.0 else sv[rank - 1] / below
        if gap < RANK_SETTINGS.gap_factor:
            warnings.append(f"degenerate spectrum: gap {gap:.3g} at rank {rank} below {RANK_SETTINGS.gap_factor:g}")
            logger.warning(warnings[-1])
    return RankReport(sv, tol, rank, warnings=warnings)


def rank_of_instance(
    instance: CircuitInstance,
    family: Family = "full15",
    tol: Optional[float] = None,
    *,
    gates: Optional[Collection[int]] = None,
) -> RankReport:
    report = numerical_rank(perturbed_outputs(instance, family, gates=gates), tol)
    report.n, report.t, report.gate_count, report.family = instance.n, instance.t, instance.layout.gate_count, family
    return report


def estimate_accessible_dimension(
    M: MeasurementConfiguration,
    samples: Optional[int] = None,
    stream: Optional[StreamKey] = None,
    *,
    p: float = 0.5,
    family: Family = "full15",
    tol: Optional[float] = None,
) -> RankReport:
    """Max rank over independent Haar gate tuples; a lower bound on d_M.

    The rank does not depend on p inside (0, 1): p only rescales columns.
    """
    samples = RANK_SETTINGS.gate_samples if samples is None else samples
    if samples < 1:
        raise ConfigurationError("need at least one gate sample")
    stream = stream or StreamKey(0)
    layout = build_layout(M.n, M.t)
    best: Optional[RankReport] = None
    for i in range(samples):
        instance = CircuitInstance(layout, sample_gates(layout, stream.child(Purpose.RANK, i)), M, p)
        report = rank_of_instance(instance, family, tol)
        if best is None or report.rank > best.rank:
            best = report
    assert best is not None
    best.seed = stream.seed
    logger.info("accessible dimension n=%d t=%d measured=%d rank=%d", M.n, M.t, M.measured_count, best.rank)
    return best


@dataclass(frozen=True)
class ComplexityLowerBound:
    """(d - 3n - 2) divided by 13 and by 11, clamped at 0; cite which one is used."""

    divisor_13: float
    divisor_11: float


def cm_lower_bound(d: float, n: int) -> ComplexityLowerBound:
    if d < 0:
        raise ConfigurationError(f"dimension must be non-negative, got {d}")
    numerator = d - 3 * n - 2
    return ComplexityLowerBound(max(0.0, numerator / 13), max(0.0, numerator / 11))


def short_circuit_dim_bound(r_prime: int, m: int, n: int) -> Tuple[int, int]:
    """Dimension reachable by R' gates with m measurements: (9R' + m + 3n, 11R' + 3n)."""
    if r_prime < 0 or not 0 <= m <= 2 * r_prime:
        raise ConfigurationError(f"need 0 <= m <= 2R', got m={m}, R'={r_prime}")
    return 9 * r_prime + m + 3 * n, 11 * r_prime + 3 * n


def projector_monotonicity_test(
    M: MeasurementConfiguration,
    site: Tuple[int, int],
    samples: Optional[int] = None,
    stream: Optional[StreamKey] = None,
    *,
    p: float = 0.5,
    family: Family = "full15",
) -> Tuple[int, int, bool]:
    """Rank with and without an extra outcome-0 projector at `site`, matched seeds."""
    q, tau = site
    if M.is_measured(q, tau):
        raise ConfigurationError(f"site {site} is already measured")
    stream = stream or StreamKey(0)
    M_prime = M.with_status(q, tau, MeasurementStatus.with_outcome(0))
    d = estimate_accessible_dimension(M, samples, stream, p=p, family=family).rank
    d_prime = estimate_accessible_dimension(M_prime, samples, stream, p=p, family=family).rank
    return d, d_prime, d_prime <= d
