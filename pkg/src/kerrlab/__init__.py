"""kerrlab: quantum-trajectory laboratory for the damped, quench-driven Kerr cavity.

Provides Monte-Carlo wave-function propagation of the cavity with photon
emission jumps, quantum and mean-field Lyapunov exponents, photon
waiting-time statistics with power-law/exponential model selection, a dense
Lindblad reference integrator, and a parameter-sweep CLI.
"""

__version__ = "0.1.0"

from .fock import (
    ModelParams,
    BandedOperator,
    fock_state,
    build_annihilation,
    build_number,
    build_hamiltonian,
    build_effective_hamiltonian,
    expectation,
    expectation_raw,
)
from .mcwf import (
    TrajectoryConfig,
    TrajectoryRecord,
    drive_value,
    default_dt,
    propagate_segment,
    locate_jump_time,
    apply_jump,
    run_trajectory,
)

__all__ = [
    "__version__",
    "ModelParams",
    "BandedOperator",
    "fock_state",
    "build_annihilation",
    "build_number",
    "build_hamiltonian",
    "build_effective_hamiltonian",
    "expectation",
    "expectation_raw",
    "TrajectoryConfig",
    "TrajectoryRecord",
    "drive_value",
    "default_dt",
    "propagate_segment",
    "locate_jump_time",
    "apply_jump",
    "run_trajectory",
]
