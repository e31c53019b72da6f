"""
Monitored circuit lab configuration.

Defines constants, default settings, and simple env-driven configuration
for the dense engine, the rank estimator, and the experiment runner.
"""

from __future__ import annotations

import os
from dataclasses import dataclass


# Dense engine
DEFAULT_MAX_QUBITS = 14  # 2^14 amplitudes
ENDIANNESS_NOTE = "little-endian: qubit 1 is the least significant bit of the index"

# Rank estimation
DEFAULT_RANK_TOL = 1e-9  # relative to the largest singular value
DEFAULT_GAP_FACTOR = 1e3
DEFAULT_GATE_SAMPLES = 3

# Numerical checks
UNITARITY_TOL = 1e-12
DETERMINANT_TOL = 1e-10

# File formats
CONFIGURATION_FORMAT_VERSION = 1
SWEEP_FORMAT_VERSION = 1
PACKAGE_VERSION = "0.1.0"
RESULT_COLUMNS = ("n", "t", "p", "trials", "seed", "observable", "value", "ci_lo", "ci_hi")


@dataclass(frozen=True)
class EngineSettings:
    """Dense state-vector engine limits.

    Env overrides:
      - MCL_MAX_QUBITS: largest qubit count the engine accepts
    """

    max_qubits: int = int(os.getenv("MCL_MAX_QUBITS", str(DEFAULT_MAX_QUBITS)))


@dataclass(frozen=True)
class RankSettings:
    tolerance: float = float(os.getenv("MCL_RANK_TOL", str(DEFAULT_RANK_TOL)))
    gap_factor: float = DEFAULT_GAP_FACTOR
    gate_samples: int = int(os.getenv("MCL_GATE_SAMPLES", str(DEFAULT_GATE_SAMPLES)))


@dataclass(frozen=True)
class RunnerSettings:
    """Sweep execution and CLI defaults.

    Env overrides:
      - MCL_WORKERS: worker processes for trial fan-out (1 runs in-process)
      - MCL_LOG_LEVEL: level for the CLI log handler
      - MCL_OUTPUT_DIR: default directory for result files
    """

    workers: int = int(os.getenv("MCL_WORKERS", "1"))
    log_level: str = os.getenv("MCL_LOG_LEVEL", "WARNING")
    output_dir: str = os.getenv("MCL_OUTPUT_DIR", ".")


ENGINE_SETTINGS = EngineSettings()
RANK_SETTINGS = RankSettings()
RUNNER_SETTINGS = RunnerSettings()
