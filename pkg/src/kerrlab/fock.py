"""Truncated Fock space: model parameters, tridiagonal operators, observables.

Every operator of the model (annihilation, number, Hamiltonian, effective
non-Hermitian Hamiltonian) is tridiagonal in the photon-number basis, so
operators are stored in banded form and applied in O(N) instead of O(N^2).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ModelParams",
    "BandedOperator",
    "fock_state",
    "build_annihilation",
    "build_number",
    "build_hamiltonian",
    "build_effective_hamiltonian",
    "expectation",
    "expectation_raw",
    "ZeroNormError",
]


class ZeroNormError(ValueError):
    """Raised when an observable is requested on a numerically null state."""


@dataclass(frozen=True)
class ModelParams:
    """Physical parameters of the damped, quench-driven Kerr cavity (hbar = 1).

    chi   : photon-photon interaction strength
    gamma : dissipative coupling rate (inverse time)
    A     : drive amplitude during the active half period
    T     : modulation period
    N     : Fock truncation; the Hilbert space has dimension N + 1
    """

    chi: float = 0.008
    gamma: float = 0.05
    A: float = 0.0
    T: float = 1.0
    N: int = 300

    def __post_init__(self):
        if self.chi < 0:
            raise ValueError(f"chi must be >= 0, got {self.chi}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.A < 0:
            raise ValueError(f"A must be >= 0, got {self.A}")
        if self.T <= 0:
            raise ValueError(f"T must be > 0, got {self.T}")
        if self.N < 1:
            raise ValueError(f"N must be >= 1, got {self.N}")

    @property
    def dim(self) -> int:
        return self.N + 1


@dataclass(frozen=True)
class BandedOperator:
    """Complex tridiagonal operator on the truncated Fock space.

    diag  : N+1 entries, element (n, n)
    upper : N entries, element (n, n+1)
    lower : N entries, element (n+1, n)

    A Hermitian operator satisfies lower == conj(upper) and real diag.
    """

    diag: np.ndarray
    upper: np.ndarray
    lower: np.ndarray

    def __post_init__(self):
        d = len(self.diag)
        if len(self.upper) != d - 1 or len(self.lower) != d - 1:
            raise ValueError("band lengths inconsistent with dimension")

    @property
    def dim(self) -> int:
        return len(self.diag)

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Return op @ psi in O(N)."""
        out = self.diag * psi
        out[:-1] += self.upper * psi[1:]
        out[1:] += self.lower * psi[:-1]
        return out

    def to_dense(self) -> np.ndarray:
        m = np.diag(self.diag)
        m += np.diag(self.upper, k=1)
        m += np.diag(self.lower, k=-1)
        return m

    def is_hermitian(self) -> bool:
        return bool(
            np.array_equal(self.lower, np.conj(self.upper))
            and np.all(self.diag.imag == 0.0)
        )


def fock_state(N: int, n: int) -> np.ndarray:
    """Basis vector |n> in a truncation with N+1 levels."""
    if not 0 <= n <= N:
        raise ValueError(f"n must lie in [0, {N}], got {n}")
    psi = np.zeros(N + 1, dtype=np.complex128)
    psi[n] = 1.0
    return psi


def build_annihilation(N: int) -> BandedOperator:
    """Photon annihilation operator: <n-1|a|n> = sqrt(n)."""
    if N < 1:
        raise ValueError(f"truncation must be >= 1, got {N}")
    sq = np.sqrt(np.arange(1.0, N + 1.0))
    zeros = np.zeros(N + 1)
    return BandedOperator(
        diag=zeros.astype(np.complex128),
        upper=sq.astype(np.complex128),
        lower=np.zeros(N, dtype=np.complex128),
    )


def build_number(N: int) -> BandedOperator:
    """Photon number operator n = a^dag a."""
    if N < 1:
        raise ValueError(f"truncation must be >= 1, got {N}")
    return BandedOperator(
        diag=np.arange(N + 1.0).astype(np.complex128),
        upper=np.zeros(N, dtype=np.complex128),
        lower=np.zeros(N, dtype=np.complex128),
    )


def build_hamiltonian(params: ModelParams, F: float) -> BandedOperator:
    """Cavity Hamiltonian for a fixed drive value F.

    Diagonal is the Kerr term chi/2 * n(n-1); the drive couples neighbouring
    Fock levels with element (n+1, n) = +i F sqrt(n+1).  The lower band is
    constructed as the conjugate of the upper band, so Hermiticity is exact
    at the bit level.
    """
    n = np.arange(params.N + 1.0)
    diag = (0.5 * params.chi * n * (n - 1.0)).astype(np.complex128)
    sq = np.sqrt(np.arange(1.0, params.N + 1.0))
    upper = (-1j * F) * sq
    return BandedOperator(diag=diag, upper=upper, lower=np.conj(upper))


def build_effective_hamiltonian(params: ModelParams, F: float) -> BandedOperator:
    """Non-Hermitian generator of the between-jump evolution.

    Equal to the Hamiltonian with the diagonal shifted by -(i/2) gamma n,
    which drains norm at the instantaneous emission rate.
    """
    h = build_hamiltonian(params, F)
    n = np.arange(params.N + 1.0)
    return BandedOperator(
        diag=h.diag - 0.5j * params.gamma * n,
        upper=h.upper,
        lower=h.lower,
    )


def expectation_raw(psi: np.ndarray, op: BandedOperator) -> complex:
    """Unnormalized matrix element <psi|op|psi> (no division by the norm)."""
    return complex(np.vdot(psi, op.apply(psi)))


def expectation(psi: np.ndarray, op: BandedOperator) -> complex:
    """Normalized expectation <psi|op|psi> / <psi|psi>.

    The wave-function norm decays between jumps; physical observables are
    evaluated on the normalized state.
    """
    n2 = float(np.vdot(psi, psi).real)
    if n2 <= 0.0 or not np.isfinite(n2):
        raise ZeroNormError("expectation of a zero-norm state is undefined")
    return complex(np.vdot(psi, op.apply(psi)) / n2)
