"""Typed result models returned by the lab's operations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np


@dataclass(frozen=True)
class CrossingPath:
    edges: Tuple[int, ...]
    vertices: Tuple[int, ...]


@dataclass(frozen=True)
class CrossingReport:
    exists: bool
    count: int
    paths: Tuple[CrossingPath, ...] = ()


@dataclass(frozen=True)
class CutReport:
    exists: bool
    edges: Tuple[int, ...] = ()  # primal edge ids crossed by the dual path


@dataclass(frozen=True)
class ClusterReport:
    clusters: Tuple[Tuple[int, ...], ...]  # open interior edge ids per cluster
    gates: Tuple[Tuple[int, ...], ...]  # gate indices j per cluster
    final_legs: Tuple[Tuple[int, ...], ...]  # qubits whose open final leg touches the cluster

    @property
    def sizes(self) -> Tuple[int, ...]:
        return tuple(len(c) for c in self.clusters)

    @property
    def count(self) -> int:
        return len(self.clusters)

    @property
    def max_size(self) -> int:
        return max(self.sizes, default=0)


@dataclass(frozen=True)
class McEstimate:
    """Event probability with a Wilson 95% interval."""

    estimate: float
    ci_lo: float
    ci_hi: float
    trials: int
    successes: int

    @property
    def sigma(self) -> float:
        p = self.estimate
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.trials)

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "trials": self.trials,
            "successes": self.successes,
        }


@dataclass
class RankReport:
    singular_values: np.ndarray
    tolerance: float
    rank: int
    seed: Optional[int] = None
    n: Optional[int] = None
    t: Optional[int] = None
    gate_count: Optional[int] = None
    family: Optional[str] = None
    warnings: List[str] = field(default_factory=list)

    @property
    def degenerate(self) -> bool:
        return bool(self.warnings)

    def to_dict(self, keep: int = 32) -> dict:
        return {
            "n": self.n,
            "t": self.t,
            "R": self.gate_count,
            "family": self.family,
            "tol": self.tolerance,
            "rank": self.rank,
            "singular_values": [float(s) for s in self.singular_values[:keep]],
            "seed": self.seed,
        }

    @staticmethod
    def from_dict(d: dict) -> "RankReport":
        return RankReport(
            singular_values=np.asarray(d.get("singular_values", []) or [], dtype=float),
            tolerance=float(d.get("tol", 0) or 0),
            rank=int(d.get("rank", 0) or 0),
            seed=d.get("seed"),
            n=d.get("n"),
            t=d.get("t"),
            gate_count=d.get("R"),
            family=d.get("family"),
        )


@dataclass(frozen=True)
class Observable:
    value: float
    ci_lo: Optional[float] = None
    ci_hi: Optional[float] = None


@dataclass
class ResultRecord:
    kind: str
    n: Optional[int]
    t: Optional[int]
    p: float
    trials: int
    seed: int
    observables: Dict[str, Observable] = field(default_factory=dict)
    wall_time: float = 0.0
    version: str = ""
    errors: List[str] = field(default_factory=list)

    def rows(self) -> List[dict]:
        """Long-format rows, one per observable."""
        return [
            {
                "n": self.n,
                "t": self.t,
                "p": self.p,
                "trials": self.trials,
                "seed": self.seed,
                "observable": name,
                "value": obs.value,
                "ci_lo": obs.ci_lo,
                "ci_hi": obs.ci_hi,
            }
            for name, obs in sorted(self.observables.items())
        ]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "n": self.n,
            "t": self.t,
            "p": self.p,
            "trials": self.trials,
            "seed": self.seed,
            "observables": {
                k: {"value": v.value, "ci_lo": v.ci_lo, "ci_hi": v.ci_hi} for k, v in sorted(self.observables.items())
            },
            "wall_time": self.wall_time,
            "version": self.version,
            "errors": list(self.errors),
        }

    @staticmethod
    def from_dict(d: dict) -> "ResultRecord":
        return ResultRecord(
            kind=d.get("kind", ""),
            n=d.get("n"),
            t=d.get("t"),
            p=float(d.get("p", 0) or 0),
            trials=int(d.get("trials", 0) or 0),
            seed=int(d.get("seed", 0) or 0),
            observables={
                k: Observable(v.get("value"), v.get("ci_lo"), v.get("ci_hi"))
                for k, v in (d.get("observables") or {}).items()
            },
            wall_time=float(d.get("wall_time", 0) or 0),
            version=d.get("version", ""),
            errors=list(d.get("errors") or []),
        )
