"""Classical mean-field limit of the cavity field.

The complex amplitude obeys

    dxi/dt = -gamma/2 xi + F(t) - i chi |xi|^2 xi

with the same two-valued quench drive as the quantum model.  The module
integrates the flow together with its tangent dynamics for Benettin-style
Lyapunov exponents, and produces stroboscopic bifurcation scans.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox

from ._kernels import maybe_njit
from .fock import ModelParams
from .mcwf import TrajectoryConfig, drive_value
from .seeding import derive_seed

__all__ = [
    "mf_rhs",
    "mf_default_dt",
    "MeanFieldPath",
    "mf_trajectory",
    "classical_lyapunov",
    "bifurcation_scan",
    "write_bifurcation",
]


def mf_rhs(xi: complex, t: float, params: ModelParams) -> complex:
    """Right-hand side of the mean-field flow at time t."""
    return (-0.5 * params.gamma * xi + drive_value(t, params)
            - 1j * params.chi * abs(xi) ** 2 * xi)


def mf_default_dt(params: ModelParams) -> float:
    """Fixed RK4 step tiling T/2 exactly; ample for the slow classical flow."""
    dt = min(params.T / 2.0, 5e-3)
    nsub = int(math.ceil(params.T / 2.0 / dt - 1e-12))
    return params.T / 2.0 / nsub


@maybe_njit(cache=True)
def _mf_step(x, y, p, q, gamma, chi, F, h):
    """One RK4 step of the flow (x, y) and its tangent (p, q)."""
    # stage derivatives written out; numba keeps this allocation-free
    def rhs(x, y, p, q):
        r2 = x * x + y * y
        fx = -0.5 * gamma * x + F + chi * r2 * y
        fy = -0.5 * gamma * y - chi * r2 * x
        a = x * x - y * y
        b = 2.0 * x * y
        fp = -0.5 * gamma * p + chi * (2.0 * r2 * q + b * p - a * q)
        fq = -0.5 * gamma * q - chi * (2.0 * r2 * p + a * p + b * q)
        return fx, fy, fp, fq

    k1x, k1y, k1p, k1q = rhs(x, y, p, q)
    k2x, k2y, k2p, k2q = rhs(x + 0.5 * h * k1x, y + 0.5 * h * k1y,
                             p + 0.5 * h * k1p, q + 0.5 * h * k1q)
    k3x, k3y, k3p, k3q = rhs(x + 0.5 * h * k2x, y + 0.5 * h * k2y,
                             p + 0.5 * h * k2p, q + 0.5 * h * k2q)
    k4x, k4y, k4p, k4q = rhs(x + h * k3x, y + h * k3y,
                             p + h * k3p, q + h * k3q)
    c = h / 6.0
    return (x + c * (k1x + 2 * k2x + 2 * k3x + k4x),
            y + c * (k1y + 2 * k2y + 2 * k3y + k4y),
            p + c * (k1p + 2 * k2p + 2 * k3p + k4p),
            q + c * (k1q + 2 * k2q + 2 * k3q + k4q))


@maybe_njit(cache=True)
def _mf_block(x, y, p, q, gamma, chi, F, h, nsteps):
    for _ in range(nsteps):
        x, y, p, q = _mf_step(x, y, p, q, gamma, chi, F, h)
    return x, y, p, q


@dataclass
class MeanFieldPath:
    """Stroboscopic samples xi_k = xi(t0 + kT) and an optional dense path."""

    strobe: np.ndarray
    dense_t: np.ndarray | None = None
    dense_xi: np.ndarray | None = None


def mf_trajectory(xi0: complex, params: ModelParams, n_periods: int,
                  dt: float | None = None, dense_stride: int = 0) -> MeanFieldPath:
    """RK4 path over n_periods; one strobe sample at the end of each period."""
    if dt is None:
        dt = mf_default_dt(params)
    nh = round(params.T / 2.0 / dt)
    if nh < 1 or abs(nh * dt - params.T / 2.0) > 1e-9 * params.T:
        raise ValueError("dt must divide T/2 exactly")
    x, y = float(np.real(xi0)), float(np.imag(xi0))
    strobe = np.empty(n_periods, dtype=np.complex128)
    dense_t: list[float] = []
    dense_xi: list[complex] = []
    for k in range(n_periods):
        for hf, F in ((0, params.A), (1, 0.0)):
            if dense_stride > 0:
                done = 0
                while done < nh:
                    chunk = min(dense_stride, nh - done)
                    x, y, _, _ = _mf_block(x, y, 0.0, 0.0, params.gamma,
                                           params.chi, F, dt, chunk)
                    done += chunk
                    dense_t.append((2 * k + hf) * params.T / 2.0 + done * dt)
                    dense_xi.append(x + 1j * y)
            else:
                x, y, _, _ = _mf_block(x, y, 0.0, 0.0, params.gamma,
                                       params.chi, F, dt, nh)
        strobe[k] = x + 1j * y
    return MeanFieldPath(
        strobe=strobe,
        dense_t=np.asarray(dense_t) if dense_stride > 0 else None,
        dense_xi=np.asarray(dense_xi) if dense_stride > 0 else None,
    )


def classical_lyapunov(params: ModelParams, tconfig: TrajectoryConfig | None = None,
                       *, transient_periods: int = 500,
                       measure_periods: int = 4000, dt: float | None = None,
                       method: str = "tangent", delta_0: float = 1e-8,
                       xi0: complex = 1e-6 + 0j) -> float:
    """Largest mean-field Lyapunov exponent with per-period renormalization.

    method "tangent" integrates the variational equation alongside the flow;
    "two-trajectory" tracks a finite separation delta_0 instead, as a
    cross-check of the linearization.
    """
    if tconfig is not None:
        transient_periods, measure_periods = tconfig.periods(params)
    if dt is None:
        dt = mf_default_dt(params)
    nh = round(params.T / 2.0 / dt)
    if nh < 1 or abs(nh * dt - params.T / 2.0) > 1e-9 * params.T:
        raise ValueError("dt must divide T/2 exactly")
    x, y = float(np.real(xi0)), float(np.imag(xi0))
    for _ in range(transient_periods):
        for F in (params.A, 0.0):
            x, y, _, _ = _mf_block(x, y, 0.0, 0.0, params.gamma, params.chi,
                                   F, dt, nh)
    if method == "tangent":
        p, q = 1.0, 0.0
        log_sum = 0.0
        for _ in range(measure_periods):
            for F in (params.A, 0.0):
                x, y, p, q = _mf_block(x, y, p, q, params.gamma, params.chi,
                                       F, dt, nh)
            g = math.hypot(p, q)
            log_sum += math.log(g)
            p /= g
            q /= g
        return log_sum / (measure_periods * params.T)
    if method == "two-trajectory":
        x2, y2 = x + delta_0, y
        log_sum = 0.0
        for _ in range(measure_periods):
            for F in (params.A, 0.0):
                x, y, _, _ = _mf_block(x, y, 0.0, 0.0, params.gamma,
                                       params.chi, F, dt, nh)
                x2, y2, _, _ = _mf_block(x2, y2, 0.0, 0.0, params.gamma,
                                         params.chi, F, dt, nh)
            d = math.hypot(x2 - x, y2 - y)
            log_sum += math.log(d / delta_0)
            x2 = x + (delta_0 / d) * (x2 - x)
            y2 = y + (delta_0 / d) * (y2 - y)
        return log_sum / (measure_periods * params.T)
    raise ValueError(f"unknown method {method!r}")


def bifurcation_scan(params: ModelParams, A_grid, *, transient_periods: int = 500,
                     samples_per_A: int = 200, n_random_ics: int = 8,
                     seed: int = 0, dt: float | None = None) -> np.ndarray:
    """Stroboscopic attractor samples for each drive amplitude.

    Each amplitude is scanned from xi=0 (plus a 1e-6 symmetry-breaking
    offset) and from n_random_ics random starts, merged, to surface
    multistability.  Returns rows (A, Re xi, Im xi, sample_index).
    """
    rows = []
    for ia, A in enumerate(A_grid):
        p = ModelParams(chi=params.chi, gamma=params.gamma, A=float(A),
                        T=params.T, N=params.N)
        ics = [1e-6 + 0j]
        rng = Generator(Philox(key=derive_seed(seed, ia, 0, "init")))
        radius = max(1.0, (A / p.chi) ** (1.0 / 3.0)) if p.chi > 0 else 1.0
        for _ in range(n_random_ics):
            r = radius * math.sqrt(rng.random())
            phi = 2.0 * math.pi * rng.random()
            ics.append(r * complex(math.cos(phi), math.sin(phi)))
        idx = 0
        per_ic = max(1, samples_per_A // len(ics))
        for xi0 in ics:
            path = mf_trajectory(xi0, p, transient_periods + per_ic, dt=dt)
            for xi in path.strobe[transient_periods:]:
                rows.append((A, xi.real, xi.imag, idx))
                idx += 1
    return np.asarray(rows)


def write_bifurcation(table: np.ndarray, path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as f:
        f.write("A,Re_xi,Im_xi,sample_index\n")
        for a, re, im, k in table:
            f.write(f"{a:.17e},{re:.17e},{im:.17e},{int(k)}\n")
    return out
