"""Dense Lindblad master-equation integrator: the engine's correctness oracle.

Integrates the full density-matrix evolution at small truncation (N <= 60,
dense cost grows as N^3 per step), so that trajectory-ensemble averages can
be checked against the exact dissipative dynamics.  Hermiticity, trace and
positivity are monitored along the path; a violation beyond tolerance
restarts the integration with a halved step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fock import ModelParams, build_annihilation, build_hamiltonian
from .mcwf import default_dt

__all__ = [
    "DENSE_N_LIMIT",
    "LindbladPath",
    "lindblad_rhs",
    "integrate_lindblad",
    "ensemble_density",
    "trace_distance",
    "check_density_matrix",
]

DENSE_N_LIMIT = 60
HERMITICITY_TOL = 1e-10
TRACE_TOL = 1e-8
POSITIVITY_TOL = 1e-8


def _dense_ops(params: ModelParams):
    a = build_annihilation(params.N).to_dense()
    h0 = build_hamiltonian(params, 0.0).to_dense()
    ha = build_hamiltonian(params, params.A).to_dense()
    ndiag = np.arange(params.N + 1.0)
    return a, h0, ha, ndiag


def lindblad_rhs(rho: np.ndarray, t: float, params: ModelParams) -> np.ndarray:
    """-i[H(t), rho] + gamma (a rho a^dag - 1/2 {n, rho})."""
    from .mcwf import drive_value

    a, h0, ha, ndiag = _dense_ops(params)
    h = ha if drive_value(t, params) != 0.0 else h0
    return _rhs_fixed(rho, h, a, ndiag, params.gamma)


def _rhs_fixed(rho, h, a, ndiag, gamma):
    comm = h @ rho - rho @ h
    sand = a @ rho @ a.conj().T
    anti = ndiag[:, None] * rho + rho * ndiag[None, :]
    return -1j * comm + gamma * (sand - 0.5 * anti)


def check_density_matrix(rho: np.ndarray) -> list[str]:
    """Invariant violations (empty list when rho is a valid state)."""
    bad = []
    if np.abs(rho - rho.conj().T).max() > HERMITICITY_TOL:
        bad.append("hermiticity")
    if abs(np.trace(rho).real - 1.0) > TRACE_TOL or abs(np.trace(rho).imag) > TRACE_TOL:
        bad.append("trace")
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if w.min() < -POSITIVITY_TOL:
        bad.append("positivity")
    return bad


@dataclass
class LindbladPath:
    """Snapshots rho(t) at the requested probe times."""

    times: np.ndarray
    rhos: np.ndarray          # shape (len(times), dim, dim)
    dt: float
    halvings: int


def integrate_lindblad(rho0: np.ndarray, params: ModelParams, t_end: float,
                       dt: float | None = None, *,
                       probe_times=None, max_halvings: int = 5) -> LindbladPath:
    """Fixed-step RK4 of the master equation with invariant monitoring.

    The step divides T/2 exactly so the quench switching points fall on the
    grid.  probe_times (defaults to [t_end]) must be multiples of T/2.  On
    an invariant violation the whole path is recomputed at half the step.
    """
    if params.N > DENSE_N_LIMIT:
        raise ValueError(
            f"dense oracle capped at N={DENSE_N_LIMIT}; got N={params.N}"
        )
    dim = params.dim
    if rho0.shape != (dim, dim):
        raise ValueError("rho0 has wrong shape")
    if probe_times is None:
        probe_times = [t_end]
    probe_times = sorted(float(t) for t in probe_times)
    if probe_times and probe_times[-1] > t_end + 1e-9:
        raise ValueError("probe times beyond t_end")
    half = params.T / 2.0
    n_halves = round(t_end / half)
    if abs(n_halves * half - t_end) > 1e-9 * params.T:
        raise ValueError("t_end must be a multiple of T/2")
    probes_h = []
    for tp in probe_times:
        k = round(tp / half)
        if abs(k * half - tp) > 1e-9 * params.T:
            raise ValueError("probe times must be multiples of T/2")
        probes_h.append(k)

    a, h0, ha, ndiag = _dense_ops(params)
    if dt is None:
        dt = default_dt(params) / 2.0   # commutator doubles the spectral radius
    for halving in range(max_halvings + 1):
        nsub = max(1, round(half / dt))
        dt_eff = half / nsub
        rho = rho0.astype(np.complex128).copy()
        out = []
        ok = True
        if 0 in probes_h:
            out.append((0.0, rho.copy()))
        for hidx in range(n_halves):
            h = ha if hidx % 2 == 0 else h0
            for _ in range(nsub):
                k1 = _rhs_fixed(rho, h, a, ndiag, params.gamma)
                k2 = _rhs_fixed(rho + 0.5 * dt_eff * k1, h, a, ndiag, params.gamma)
                k3 = _rhs_fixed(rho + 0.5 * dt_eff * k2, h, a, ndiag, params.gamma)
                k4 = _rhs_fixed(rho + dt_eff * k3, h, a, ndiag, params.gamma)
                rho += (dt_eff / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if check_density_matrix(rho):
                ok = False
                break
            if (hidx + 1) in probes_h:
                out.append(((hidx + 1) * half, rho.copy()))
        if ok:
            return LindbladPath(
                times=np.array([t for t, _ in out]),
                rhos=np.array([r for _, r in out]),
                dt=dt_eff,
                halvings=halving,
            )
        dt = dt / 2.0
    raise RuntimeError(
        f"density-matrix invariants still violated after {max_halvings} step halvings"
    )


def ensemble_density(states) -> np.ndarray:
    """Average of |psi><psi| over normalized trajectory snapshots; trace 1."""
    states = list(states)
    if not states:
        raise ValueError("empty trajectory set")
    dim = len(states[0])
    rho = np.zeros((dim, dim), dtype=np.complex128)
    for psi in states:
        n2 = float(np.vdot(psi, psi).real)
        if n2 <= 0.0:
            raise ValueError("zero-norm snapshot")
        rho += np.outer(psi, psi.conj()) / n2
    rho /= len(states)
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def trace_distance(rho1: np.ndarray, rho2: np.ndarray) -> float:
    """Half the sum of absolute eigenvalues of the (Hermitian) difference."""
    if rho1.shape != rho2.shape:
        raise ValueError("dimension mismatch")
    diff = rho1 - rho2
    diff = 0.5 * (diff + diff.conj().T)
    return float(0.5 * np.abs(np.linalg.eigvalsh(diff)).sum())
