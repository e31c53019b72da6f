"""Monitored random circuit lab.

Public surface:
- StateVectorEngine: dense simulator for monitored brick-wall circuits
- MeasurementConfiguration, CircuitInstance, StreamKey: circuit model types
- percolation, accessible-dimension, Clifford, embedding and sweep operations
"""

from .config import PACKAGE_VERSION as __version__
from .engine import StateVector, StateVectorEngine, fidelity
from .api._exceptions import (
    ConfigurationError,
    GadgetPreconditionViolated,
    InsufficientPaths,
    MCLError,
    NoBridgeFound,
    PersistError,
    QubitLimitExceeded,
    ZeroWeight,
)
from .api._models import CircuitInstance, GateMatrix, MeasurementConfiguration, MeasurementStatus, Purpose, StreamKey
from .api.circuit import build_layout, random_instance, sample_gates, sample_measurement_configuration
from .api.clifford import build_lower_bound_clifford, verify_d0_growth
from .api.dimension import estimate_accessible_dimension, numerical_rank, perturbed_outputs
from .api.embedding import assign_gates, plan_embedding, verify_embedding
from .api.percolation import circuit_to_bond_lattice, final_time_clusters, max_edge_disjoint_crossings
from .api.runner import ExperimentConfig, persist, run_sweep

__all__ = [
    "__version__",
    "StateVector",
    "StateVectorEngine",
    "fidelity",
    "MCLError",
    "ConfigurationError",
    "QubitLimitExceeded",
    "ZeroWeight",
    "InsufficientPaths",
    "NoBridgeFound",
    "GadgetPreconditionViolated",
    "PersistError",
    "CircuitInstance",
    "GateMatrix",
    "MeasurementConfiguration",
    "MeasurementStatus",
    "Purpose",
    "StreamKey",
    "build_layout",
    "random_instance",
    "sample_gates",
    "sample_measurement_configuration",
    "circuit_to_bond_lattice",
    "final_time_clusters",
    "max_edge_disjoint_crossings",
    "perturbed_outputs",
    "numerical_rank",
    "estimate_accessible_dimension",
    "build_lower_bound_clifford",
    "verify_d0_growth",
    "plan_embedding",
    "assign_gates",
    "verify_embedding",
    "ExperimentConfig",
    "run_sweep",
    "persist",
]
