"""Hot numerical kernels: fixed-step RK4 for the non-Hermitian cavity evolution.

The state is kept as split real/imaginary float64 arrays (u, v) so the inner
loops stay in real arithmetic and vectorize.  With

    dr[n] = -gamma n / 2          (norm drain)
    di[n] = -chi n (n-1) / 2      (Kerr phase)
    sq[n] = sqrt(n+1)             (ladder factors)

the between-jump equation of motion is

    du[n]/dt = dr[n] u[n] - di[n] v[n] + F (sq[n-1] u[n-1] - sq[n] u[n+1])
    dv[n]/dt = dr[n] v[n] + di[n] u[n] + F (sq[n-1] v[n-1] - sq[n] v[n+1])

Two interchangeable backends implement the same signatures:

  * numba @njit scalar loops (default), and
  * a pure-numpy vectorized fallback, selected by setting the environment
    variable KERRLAB_NO_NUMBA=1 before import (or automatically when numba
    is unavailable).

Both backends are importable explicitly (`*_numpy`, `*_numba`) for parity
tests and for the benchmark in benchmarks/bench_kernels.py.
"""

from __future__ import annotations

import os

import numpy as np

__all__ = [
    "NUMBA_ENABLED",
    "maybe_njit",
    "model_coefficients",
    "make_work",
    "rk4_block",
    "rk4_step",
    "rk4_block_numpy",
    "rk4_step_numpy",
    "rk4_block_numba",
    "rk4_step_numba",
    "norm_sq",
]


def _numba_disabled_by_env() -> bool:
    return os.environ.get("KERRLAB_NO_NUMBA", "").strip().lower() in {"1", "true", "yes"}


_numba = None
if not _numba_disabled_by_env():
    try:
        import numba as _numba
    except ImportError:
        _numba = None

NUMBA_ENABLED = _numba is not None


def maybe_njit(*args, **kwargs):
    """@njit when the numba backend is active, identity decorator otherwise."""
    if NUMBA_ENABLED:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda f: f


def model_coefficients(chi: float, gamma: float, N: int):
    """Precompute (dr, di, sq) for the kernel loops."""
    n = np.arange(N + 1.0)
    dr = -0.5 * gamma * n
    di = -0.5 * chi * n * (n - 1.0)
    sq = np.sqrt(np.arange(1.0, N + 1.0))
    return dr, di, sq


def make_work(dim: int):
    """Scratch arrays reused across kernel calls: (ku, kv, au, av, tu, tv)."""
    return tuple(np.empty(dim) for _ in range(6))


def norm_sq(u: np.ndarray, v: np.ndarray) -> float:
    return float(np.dot(u, u) + np.dot(v, v))


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _deriv_numpy(u, v, dr, di, sq, F, ku, kv):
    np.multiply(dr, u, out=ku)
    ku -= di * v
    np.multiply(dr, v, out=kv)
    kv += di * u
    if F != 0.0:
        ku[1:] += F * sq * u[:-1]
        ku[:-1] -= F * sq * u[1:]
        kv[1:] += F * sq * v[:-1]
        kv[:-1] -= F * sq * v[1:]


def rk4_step_numpy(u, v, dr, di, sq, F, h, work) -> float:
    """One in-place RK4 step of size h; returns the squared norm after it."""
    ku, kv, au, av, tu, tv = work
    _deriv_numpy(u, v, dr, di, sq, F, ku, kv)
    au[:] = ku
    av[:] = kv
    tu[:] = u + (0.5 * h) * ku
    tv[:] = v + (0.5 * h) * kv
    _deriv_numpy(tu, tv, dr, di, sq, F, ku, kv)
    au += 2.0 * ku
    av += 2.0 * kv
    tu[:] = u + (0.5 * h) * ku
    tv[:] = v + (0.5 * h) * kv
    _deriv_numpy(tu, tv, dr, di, sq, F, ku, kv)
    au += 2.0 * ku
    av += 2.0 * kv
    tu[:] = u + h * ku
    tv[:] = v + h * kv
    _deriv_numpy(tu, tv, dr, di, sq, F, ku, kv)
    au += ku
    av += kv
    u += (h / 6.0) * au
    v += (h / 6.0) * av
    return float(np.dot(u, u) + np.dot(v, v))


def rk4_block_numpy(u, v, u_prev, v_prev, dr, di, sq, F, dt, nsteps, eta, work):
    """Advance up to nsteps fixed RK4 steps, watching the jump threshold.

    After each step the squared norm is compared against eta; on a crossing
    the state just before the crossing step is left in (u_prev, v_prev) and
    (steps_taken, norm_sq, True) is returned.  Otherwise
    (nsteps, norm_sq, False).
    """
    n2 = float(np.dot(u, u) + np.dot(v, v))
    for k in range(nsteps):
        u_prev[:] = u
        v_prev[:] = v
        n2 = rk4_step_numpy(u, v, dr, di, sq, F, dt, work)
        if n2 <= eta:
            return k + 1, n2, True
    return nsteps, n2, False


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

rk4_step_numba = None
rk4_block_numba = None

if NUMBA_ENABLED:

    @_numba.njit(cache=True, fastmath=True, nogil=True)
    def _deriv_jit(u, v, dr, di, sq, F, ku, kv):  # pragma: no cover - jitted
        d = u.shape[0]
        ku[0] = dr[0] * u[0] - di[0] * v[0] - F * sq[0] * u[1]
        kv[0] = dr[0] * v[0] + di[0] * u[0] - F * sq[0] * v[1]
        for i in range(1, d - 1):
            ku[i] = dr[i] * u[i] - di[i] * v[i] + F * (sq[i - 1] * u[i - 1] - sq[i] * u[i + 1])
            kv[i] = dr[i] * v[i] + di[i] * u[i] + F * (sq[i - 1] * v[i - 1] - sq[i] * v[i + 1])
        ku[d - 1] = dr[d - 1] * u[d - 1] - di[d - 1] * v[d - 1] + F * sq[d - 2] * u[d - 2]
        kv[d - 1] = dr[d - 1] * v[d - 1] + di[d - 1] * u[d - 1] + F * sq[d - 2] * v[d - 2]

    @_numba.njit(cache=True, fastmath=True, nogil=True)
    def _rk4_step_jit(u, v, dr, di, sq, F, h, ku, kv, au, av, tu, tv):  # pragma: no cover
        d = u.shape[0]
        _deriv_jit(u, v, dr, di, sq, F, ku, kv)
        for i in range(d):
            au[i] = ku[i]
            av[i] = kv[i]
            tu[i] = u[i] + 0.5 * h * ku[i]
            tv[i] = v[i] + 0.5 * h * kv[i]
        _deriv_jit(tu, tv, dr, di, sq, F, ku, kv)
        for i in range(d):
            au[i] += 2.0 * ku[i]
            av[i] += 2.0 * kv[i]
            tu[i] = u[i] + 0.5 * h * ku[i]
            tv[i] = v[i] + 0.5 * h * kv[i]
        _deriv_jit(tu, tv, dr, di, sq, F, ku, kv)
        for i in range(d):
            au[i] += 2.0 * ku[i]
            av[i] += 2.0 * kv[i]
            tu[i] = u[i] + h * ku[i]
            tv[i] = v[i] + h * kv[i]
        _deriv_jit(tu, tv, dr, di, sq, F, ku, kv)
        c = h / 6.0
        n2 = 0.0
        for i in range(d):
            u[i] += c * (au[i] + ku[i])
            v[i] += c * (av[i] + kv[i])
            n2 += u[i] * u[i] + v[i] * v[i]
        return n2

    def rk4_step_numba(u, v, dr, di, sq, F, h, work) -> float:
        ku, kv, au, av, tu, tv = work
        return float(_rk4_step_jit(u, v, dr, di, sq, F, h, ku, kv, au, av, tu, tv))

    @_numba.njit(cache=True, fastmath=True, nogil=True)
    def _rk4_block_jit(u, v, u_prev, v_prev, dr, di, sq, F, dt, nsteps, eta,
                       ku, kv, au, av, tu, tv):  # pragma: no cover - jitted
        d = u.shape[0]
        n2 = 0.0
        for i in range(d):
            n2 += u[i] * u[i] + v[i] * v[i]
        for k in range(nsteps):
            for i in range(d):
                u_prev[i] = u[i]
                v_prev[i] = v[i]
            n2 = _rk4_step_jit(u, v, dr, di, sq, F, dt, ku, kv, au, av, tu, tv)
            if n2 <= eta:
                return k + 1, n2, True
        return nsteps, n2, False

    def rk4_block_numba(u, v, u_prev, v_prev, dr, di, sq, F, dt, nsteps, eta, work):
        ku, kv, au, av, tu, tv = work
        steps, n2, crossed = _rk4_block_jit(
            u, v, u_prev, v_prev, dr, di, sq, F, dt, nsteps, eta,
            ku, kv, au, av, tu, tv,
        )
        return int(steps), float(n2), bool(crossed)


if NUMBA_ENABLED:
    rk4_step = rk4_step_numba
    rk4_block = rk4_block_numba
else:
    rk4_step = rk4_step_numpy
    rk4_block = rk4_block_numpy
