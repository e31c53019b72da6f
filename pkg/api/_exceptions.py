"""Custom exceptions for the monitored circuit lab."""

from __future__ import annotations

from typing import Any, Dict, Optional, Tuple


class MCLError(Exception):
    """Base exception type for lab errors."""


class ConfigurationError(MCLError, ValueError):
    """Rejected input: bad dimensions, rates, grids or file contents."""


class QubitLimitExceeded(MCLError):
    """The dense engine refuses state vectors above the configured cap."""

    def __init__(self, n: int, cap: int):
        super().__init__(f"n={n} exceeds the dense-engine cap of {cap} qubits (set MCL_MAX_QUBITS to raise it)")
        self.n = n
        self.cap = cap


class ZeroWeight(MCLError):
    """The outcome set is impossible: the unnormalized output is the zero vector."""


class InsufficientPaths(MCLError):
    def __init__(self, requested: int, available: int):
        super().__init__(f"requested {requested} measurement-free paths, only {available} exist")
        self.requested = requested
        self.available = available


class NoBridgeFound(MCLError):
    def __init__(self, slot: int, wires: Tuple[int, int], details: Optional[Dict[str, Any]] = None):
        super().__init__(f"no vertical open path between wires {wires[0]} and {wires[1]} for CNOT slot {slot}")
        self.slot = slot
        self.wires = wires
        self.details = details or {}


class GadgetPreconditionViolated(MCLError):
    def __init__(self, site: Tuple[int, int], message: str = "gadget requires a measurement at this site"):
        super().__init__(f"{message}: (q={site[0]}, tau={site[1]})")
        self.site = site


class NonCliffordGate(MCLError):
    """Pauli propagation met a gate outside the CNOT/H/S generator set."""


class BlockLimitExceeded(ConfigurationError):
    """More Clifford blocks requested than there are distinct Pauli images."""


class PersistError(MCLError):
    """I/O failure while writing or reading result files."""

    def __init__(self, path: str, message: str):
        super().__init__(message)
        self.path = path

    def __str__(self) -> str:
        return f"{self.path}: {super().__str__()}"
