"""Pauli propagation through CNOT/H/S circuits and the linear-growth Clifford construction.

Pauli strings are stored as i^kappa * X^x * Z^z with every X factor to the
left of every Z factor; bit q-1 of a mask refers to qubit q.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import reduce
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..engine import circuit_unitary
from ._exceptions import BlockLimitExceeded, ConfigurationError, MCLError, NonCliffordGate
from ._models import CircuitInstance, GateMatrix, MeasurementConfiguration, Placement, StreamKey
from .circuit import CNOT, CNOT_REVERSED, H, I2, I4, PAULIS, S, build_layout, embed_single
from .dimension import rank_of_instance

logger = logging.getLogger(__name__)

# (name, qubit) or ("CNOT", control, target), absolute 1-based qubits
Op = Tuple[str, ...]


@dataclass(frozen=True)
class PauliString:
    n: int
    x: int
    z: int
    kappa: int = 0

    def __post_init__(self) -> None:
        limit = 1 << self.n
        if not (0 <= self.x < limit and 0 <= self.z < limit):
            raise ConfigurationError(f"Pauli masks must fit in {self.n} bits")
        object.__setattr__(self, "kappa", self.kappa % 4)

    @classmethod
    def single(cls, n: int, label: str, q: int) -> "PauliString":
        """One-qubit Pauli `label` on qubit q; Y is stored as i X Z."""
        if not 1 <= q <= n:
            raise ConfigurationError(f"qubit {q} out of range 1..{n}")
        bit = 1 << (q - 1)
        table = {"I": (0, 0, 0), "X": (bit, 0, 0), "Z": (0, bit, 0), "Y": (bit, bit, 1)}
        try:
            x, z, kappa = table[label]
        except KeyError:
            raise ConfigurationError(f"unknown Pauli label {label!r}") from None
        return cls(n, x, z, kappa)

    @classmethod
    def from_label(cls, label: str) -> "PauliString":
        """'ZI' means Z on qubit 1, I on qubit 2."""
        n = len(label)
        out = cls(n, 0, 0)
        for q, ch in enumerate(label, start=1):
            out = out * cls.single(n, ch, q)
        return out

    def __mul__(self, other: "PauliString") -> "PauliString":
        # X^x1 Z^z1 X^x2 Z^z2 = (-1)^{|z1 & x2|} X^(x1^x2) Z^(z1^z2)
        if other.n != self.n:
            raise ConfigurationError("Pauli strings act on different qubit counts")
        sign = 2 * (bin(self.z & other.x).count("1") % 2)
        return PauliString(self.n, self.x ^ other.x, self.z ^ other.z, self.kappa + other.kappa + sign)

    # ----- Conjugation P -> G^dagger P G -----
    def conjugate_h(self, q: int) -> "PauliString":
        bit = 1 << (q - 1)
        xq, zq = bool(self.x & bit), bool(self.z & bit)
        x = (self.x & ~bit) | (bit if zq else 0)
        z = (self.z & ~bit) | (bit if xq else 0)
        return PauliString(self.n, x, z, self.kappa + (2 if xq and zq else 0))

    def conjugate_s(self, q: int) -> "PauliString":
        bit = 1 << (q - 1)
        if not self.x & bit:
            return self
        return PauliString(self.n, self.x, self.z ^ bit, self.kappa + 3)

    def conjugate_cnot(self, control: int, target: int) -> "PauliString":
        c, t = 1 << (control - 1), 1 << (target - 1)
        x = self.x ^ (t if self.x & c else 0)
        z = self.z ^ (c if self.z & t else 0)
        return PauliString(self.n, x, z, self.kappa)

    def conjugate(self, op: Op) -> "PauliString":
        name = op[0]
        if name == "H":
            return self.conjugate_h(int(op[1]))
        if name == "S":
            return self.conjugate_s(int(op[1]))
        if name == "CNOT":
            return self.conjugate_cnot(int(op[1]), int(op[2]))
        raise NonCliffordGate(f"gate {op!r} is not a CNOT/H/S generator")

    # ----- Action on |0^n> -----
    def on_zero(self) -> Tuple[int, int]:
        """P|0^n> = i^kappa |x>; returns (kappa, x)."""
        return self.kappa, self.x

    def zero_image(self) -> np.ndarray:
        vec = np.zeros(2**self.n, dtype=np.complex128)
        vec[self.x] = 1j**self.kappa
        return vec

    def matrix(self) -> np.ndarray:
        """Dense little-endian matrix (qubit n is the leftmost Kronecker factor)."""
        xs = reduce(np.kron, [PAULIS["X"] if self.x >> (q - 1) & 1 else I2 for q in range(self.n, 0, -1)])
        zs = reduce(np.kron, [PAULIS["Z"] if self.z >> (q - 1) & 1 else I2 for q in range(self.n, 0, -1)])
        return (1j**self.kappa) * (xs @ zs)


def pauli_independent(images: Sequence[PauliString | Tuple[int, int]]) -> bool:
    """Exact real-linear independence of i^kappa|x> vectors.

    Two such vectors are dependent iff they share x and their phases differ by
    0 or 2; distinct (x, kappa mod 2) pairs are a subset of a real basis.
    """
    seen = set()
    for item in images:
        kappa, x = item.on_zero() if isinstance(item, PauliString) else item
        key = (int(x), int(kappa) % 2)
        if key in seen:
            return False
        seen.add(key)
    return True


# ----- Circuits -----
_LOCAL: Dict[str, np.ndarray] = {"H": H, "S": S}


@dataclass(frozen=True)
class CliffordGate:
    placement: Placement
    ops: Tuple[Op, ...]  # application order

    def matrix(self) -> np.ndarray:
        a = self.placement.a
        m = I4
        for op in self.ops:
            if op[0] in _LOCAL:
                q = int(op[1])
                if q not in self.placement.pair:
                    raise ConfigurationError(f"{op!r} acts outside pair {self.placement.pair}")
                local = embed_single(_LOCAL[op[0]], q == a)
            elif op[0] == "CNOT":
                local = CNOT if (int(op[1]), int(op[2])) == (a, a + 1) else CNOT_REVERSED
                if {int(op[1]), int(op[2])} != set(self.placement.pair):
                    raise ConfigurationError(f"{op!r} acts outside pair {self.placement.pair}")
            else:
                raise NonCliffordGate(f"gate {op!r} is not a CNOT/H/S generator")
            m = local @ m
        return m


@dataclass(frozen=True)
class CliffordCircuit:
    """Clifford gates on a brick-wall layout; unlisted placements are identity.

    `blocks[j]` holds the gate indices of block j+1 and `designated[j]` the
    gate right after which the block's marked perturbation is inserted.
    """

    n: int
    t: int
    gates: Tuple[CliffordGate, ...]
    blocks: Tuple[Tuple[int, ...], ...] = ()
    designated: Tuple[int, ...] = ()

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def by_index(self) -> Dict[int, CliffordGate]:
        return {g.placement.index: g for g in self.gates}

    def gate_matrices(self) -> Tuple[GateMatrix, ...]:
        layout = build_layout(self.n, self.t)
        table = self.by_index()
        return tuple(
            GateMatrix(table[pl.index].matrix() if pl.index in table else I4, pl.pair) for pl in layout.placements
        )

    def to_instance(self) -> CircuitInstance:
        """Measurement-free instance realizing the circuit."""
        layout = build_layout(self.n, self.t)
        return CircuitInstance(layout, self.gate_matrices(), MeasurementConfiguration.unmeasured(self.n, self.t), 0.0)

    def unitary(self) -> np.ndarray:
        return circuit_unitary(build_layout(self.n, self.t), self.gate_matrices())


def pauli_propagate(
    circuit: CliffordCircuit,
    P: PauliString,
    block: Optional[int] = None,
    *,
    through_gate: Optional[int] = None,
) -> PauliString:
    """W^dagger P W for the prefix W ending at block `block`'s marked gate.

    Without `block` or `through_gate` the whole circuit is used.
    """
    if P.n != circuit.n:
        raise ConfigurationError(f"Pauli string has {P.n} qubits, circuit has {circuit.n}")
    limit = through_gate
    if block is not None:
        if not 1 <= block <= circuit.block_count:
            raise ConfigurationError(f"block {block} out of range 1..{circuit.block_count}")
        limit = circuit.designated[block - 1]
    prefix = [g for g in circuit.gates if limit is None or g.placement.index <= limit]
    out = P
    for gate in sorted(prefix, key=lambda g: g.placement.index, reverse=True):
        for op in reversed(gate.ops):
            out = out.conjugate(op)
    return out


def random_clifford_circuit(n: int, t: int, stream: StreamKey, max_ops: int = 4) -> CliffordCircuit:
    """Every placement gets 1..max_ops random generators on its pair."""
    layout = build_layout(n, t)
    rng = stream.rng()
    gates = []
    for pl in layout.placements:
        a = pl.a
        choices: List[Op] = [("H", a), ("H", a + 1), ("S", a), ("S", a + 1), ("CNOT", a, a + 1), ("CNOT", a + 1, a)]
        count = int(rng.integers(1, max_ops + 1))
        gates.append(CliffordGate(pl, tuple(choices[int(i)] for i in rng.integers(0, len(choices), count))))
    return CliffordCircuit(n, t, tuple(gates))


# ----- Linear-growth construction -----
def _chain_step(x: int, n: int, taps: Sequence[int]) -> int:
    """Basis-state action of one chain block: gate k maps |u, v> -> |v ^ c_k u, u>."""
    bits = [(x >> q) & 1 for q in range(n)]
    for k in range(n - 1):
        u, v = bits[k], bits[k + 1]
        bits[k], bits[k + 1] = v ^ (taps[k] & u), u
    return sum(b << q for q, b in enumerate(bits))


def _full_period_taps(n: int) -> Tuple[int, ...]:
    """First tap vector whose chain block cycles through all 2^n - 1 nonzero states."""
    target = (1 << n) - 1
    for code in range(1 << (n - 1)):
        taps = tuple((code >> k) & 1 for k in range(n - 1))
        x, period = 1, 0
        while True:
            x = _chain_step(x, n, taps)
            period += 1
            if x == 1 or period > target:
                break
        if x == 1 and period == target:
            return taps
    raise MCLError(f"no full-period chain found for n={n}")


def required_depth(n: int, blocks: int) -> int:
    """Even depth holding `blocks` blocks: layer 1 for the first, n layers per further block."""
    last = 1 + (blocks - 1) * n
    return max(2, last + (last % 2))


def build_lower_bound_clifford(n: int, T: int, t: Optional[int] = None) -> CliffordCircuit:
    """T blocks whose marked images Z_1 (and Y_1 from block 2 on) stay independent on |0^n>.

    Block 1 is the identity gate on (1, 2) in layer 1. Block 2 applies H on
    every qubit and then a chain of gates (k, k+1), k = 1..n-1, each a SWAP
    optionally preceded by CNOT(k -> k+1). Later blocks repeat the chain
    without the Hadamards. The taps are picked so that one chain block cycles
    through all nonzero basis states, so the X masks of the Z_1 images never
    repeat. Each block after the first spans n layers, within the 3n/2 layers
    per block of the linear-growth bound.
    """
    if n < 2 or n % 2:
        raise ConfigurationError(f"n must be an even integer >= 2, got {n}")
    if T < 1:
        raise ConfigurationError(f"need at least one block, got T={T}")
    if T > 2**n:
        raise BlockLimitExceeded(
            f"T={T} blocks exceed the {2**n} this construction separates (2T - 1 <= 2^(n+1) - 1 images)"
        )
    depth = required_depth(n, T)
    t = depth if t is None else t
    if t < depth:
        raise ConfigurationError(f"{T} blocks need depth {depth}, got t={t}")
    layout = build_layout(n, t)
    taps = _full_period_taps(n)

    first = layout.gate_on(1, 1)
    assert first is not None
    gates: List[CliffordGate] = [CliffordGate(first, ())]
    blocks: List[Tuple[int, ...]] = [(first.index,)]
    designated: List[int] = [first.index]
    start = 3
    for j in range(2, T + 1):
        indices = []
        for k in range(1, n):
            pl = layout.gate_on(k, start + k - 1)
            assert pl is not None and pl.a == k
            ops: List[Op] = []
            if j == 2:
                ops += [("H", k)] if k == 1 else []
                ops += [("H", k + 1)]
            if taps[k - 1]:
                ops.append(("CNOT", k, k + 1))
            ops += [("CNOT", k, k + 1), ("CNOT", k + 1, k), ("CNOT", k, k + 1)]
            gates.append(CliffordGate(pl, tuple(ops)))
            indices.append(pl.index)
        blocks.append(tuple(indices))
        designated.append(indices[0])
        start += n
    circuit = CliffordCircuit(n, t, tuple(gates), tuple(blocks), tuple(designated))
    images = lower_bound_images(circuit)
    if not pauli_independent(images):
        raise MCLError(f"marked images of the n={n}, T={T} construction are dependent")
    logger.debug("Clifford construction n=%d T=%d t=%d taps=%s", n, T, t, taps)
    return circuit


def lower_bound_images(circuit: CliffordCircuit) -> List[PauliString]:
    """Z_1 marked image of every block, plus the Y_1 image of blocks 2..T."""
    n = circuit.n
    images = [pauli_propagate(circuit, PauliString.single(n, "Z", 1), 1)]
    for j in range(2, circuit.block_count + 1):
        images.append(pauli_propagate(circuit, PauliString.single(n, "Z", 1), j))
        images.append(pauli_propagate(circuit, PauliString.single(n, "Y", 1), j))
    return images


@dataclass(frozen=True)
class GrowthCheck:
    rank: int
    bound: int
    cap: int
    certified: int  # independent marked images found by propagation
    passed: bool
    blocks: int = 0
    block_limit: int = 0


def verify_d0_growth(n: int, t: int, stream: Optional[StreamKey] = None) -> GrowthCheck:
    """SingleQubit6 rank of the construction at depth t against floor(2t / 3n).

    The construction separates at most 2^n blocks; past that the block count
    is capped and the Y_1 images carry the rest of the 2 * 2^n - 1 budget.
    """
    if t < 2 or t % 2:
        raise ConfigurationError(f"t must be an even integer >= 2, got {t}")
    bound = (2 * t) // (3 * n)
    cap = 2 * 2**n - 1
    limit = 2**n
    T = max(1, min(bound, limit))
    if bound > limit:
        logger.info("d0 growth n=%d t=%d: bound %d exceeds the %d-block limit, using %d blocks", n, t, bound, limit, T)
    circuit = build_lower_bound_clifford(n, T, t)
    report = rank_of_instance(circuit.to_instance(), "single_qubit6")
    if stream is not None:
        report.seed = stream.seed
    certified = len(lower_bound_images(circuit))
    floor = min(bound, cap)
    passed = report.rank >= floor and certified >= floor and report.rank <= cap
    logger.info("d0 growth n=%d t=%d rank=%d bound=%d certified=%d", n, t, report.rank, bound, certified)
    return GrowthCheck(report.rank, bound, cap, certified, passed, T, limit)
