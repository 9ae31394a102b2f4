"""Monte-Carlo wave-function engine for the quench-driven Kerr cavity.

A trajectory alternates deterministic non-Hermitian RK4 evolution with
stochastic photon-emission jumps.  The squared norm of the state decays at
the instantaneous rate gamma*n(t); when it reaches the pending threshold
eta (i.i.d. uniform on (0,1]) the jump time is localized by bisection, the
annihilation operator is applied, the norm is reset to one and a fresh
threshold is drawn.

Time stepping is grid based: dt divides T/2 exactly, so no RK4 step ever
straddles a switching point of the two-valued quench drive.  All times are
bookkept as (half-period index, step index, sub-step fraction), which keeps
trajectories bitwise reproducible for a given seed and backend.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox

from . import _kernels as kern
from .fock import ModelParams, ZeroNormError

__all__ = [
    "TrajectoryConfig",
    "TrajectoryRecord",
    "VacuumJumpError",
    "drive_value",
    "default_dt",
    "propagate_segment",
    "locate_jump_time",
    "apply_jump",
    "run_trajectory",
    "write_record",
]

TAIL_FRACTION = 0.9          # Fock levels above this fraction of N are "tail"
TAIL_MASS_LIMIT = 1e-6       # tail population that triggers a truncation flag


class VacuumJumpError(ValueError):
    """A jump was requested on (numerically) the vacuum, whose norm never decays."""


def default_dt(params: ModelParams) -> float:
    """Default integrator step for the given parameters.

    Spectral-radius heuristic clamped to 0.01, then rounded down so that an
    integer number of steps tiles the half period exactly.
    """
    radius = 10.0 * (params.chi * params.N**2 + params.gamma * params.N + params.A)
    dt = min(params.T / 2.0, 2.0 * math.pi / radius, 0.01)
    nsub = int(math.ceil(params.T / 2.0 / dt - 1e-12))
    return params.T / 2.0 / nsub


def drive_value(t: float, params: ModelParams) -> float:
    """Two-valued quench drive: A on the first half period, 0 on the second."""
    phase = t % params.T
    return params.A if 0.0 < phase <= params.T / 2.0 else 0.0


@dataclass(frozen=True)
class TrajectoryConfig:
    """Run-length, integration and reproducibility settings for one trajectory.

    t_transient and t_measure must be integer multiples of the period; only
    events later than t_transient are recorded.
    """

    t_transient: float
    t_measure: float
    dt: float
    jump_time_tol: float
    seed: int
    strobe_offset: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 < self.jump_time_tol < self.dt:
            raise ValueError("jump_time_tol must lie in (0, dt)")
        if self.t_transient < 0 or self.t_measure <= 0:
            raise ValueError("t_transient must be >= 0 and t_measure > 0")
        if self.strobe_offset < 0:
            raise ValueError("strobe_offset must be >= 0")

    @classmethod
    def for_params(
        cls,
        params: ModelParams,
        *,
        transient_periods: int = 2000,
        measure_periods: int = 1000,
        dt: float | None = None,
        jump_time_tol: float | None = None,
        seed: int = 0,
        strobe_offset: float = 0.0,
    ) -> "TrajectoryConfig":
        if dt is None:
            dt = default_dt(params)
        else:
            nsub = max(1, round(params.T / 2.0 / dt))
            dt = params.T / 2.0 / nsub
        if jump_time_tol is None:
            jump_time_tol = dt * 1e-3
        return cls(
            t_transient=transient_periods * params.T,
            t_measure=measure_periods * params.T,
            dt=dt,
            jump_time_tol=jump_time_tol,
            seed=seed,
            strobe_offset=strobe_offset,
        )

    def steps_per_half(self, params: ModelParams) -> int:
        n = round(params.T / 2.0 / self.dt)
        if n < 1 or abs(n * self.dt - params.T / 2.0) > 1e-9 * params.T:
            raise ValueError(
                f"dt={self.dt} does not divide T/2={params.T / 2.0} exactly"
            )
        return n

    def periods(self, params: ModelParams) -> tuple[int, int]:
        tp = round(self.t_transient / params.T)
        mp = round(self.t_measure / params.T)
        if abs(tp * params.T - self.t_transient) > 1e-9 * params.T or \
           abs(mp * params.T - self.t_measure) > 1e-9 * params.T:
            raise ValueError("t_transient and t_measure must be multiples of T")
        return tp, mp


@dataclass
class TrajectoryRecord:
    """Everything one trajectory leaves behind after the transient.

    jump_times / jump_thresholds are aligned: jump_thresholds[k] is the eta
    consumed by the jump at jump_times[k].  strobe_xi holds one complex
    sample of <a> per period; n_series is an optional dense (t, n, |psi|^2)
    sampling used for diagnostics.
    """

    jump_times: np.ndarray
    jump_thresholds: np.ndarray
    strobe_periods: np.ndarray
    strobe_xi: np.ndarray
    strobe_n: np.ndarray
    n_series: np.ndarray | None = None
    flags: list[str] = field(default_factory=list)
    seed: int = 0

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)


class EtaStream:
    """Lazily extended i.i.d. uniform (0,1] thresholds, indexed by jump ordinal.

    Backed by a counter-based Philox generator keyed on the seed, so the
    stream is a pure function of (seed, index) regardless of consumption
    order across fiducial/auxiliary trajectories.
    """

    BLOCK = 4096

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = Generator(Philox(key=self.seed))
        self._buf = np.empty(0)

    def __getitem__(self, k: int) -> float:
        while k >= len(self._buf):
            self._buf = np.concatenate([self._buf, 1.0 - self._gen.random(self.BLOCK)])
        return float(self._buf[k])


class Evolver:
    """Mutable single-trajectory propagation state.

    Confined to one worker; operators and coefficient arrays are read-only
    and shareable.  Used directly by the Lyapunov pair engine, which needs
    two evolvers advancing in lockstep.
    """

    def __init__(self, params: ModelParams, config: TrajectoryConfig,
                 psi_init: np.ndarray | None = None, *, auto_jumps: bool = True):
        self.params = params
        self.config = config
        self.dt = config.dt
        self.n_half = config.steps_per_half(params)
        self.dr, self.di, self.sq = kern.model_coefficients(
            params.chi, params.gamma, params.N
        )
        dim = params.dim
        if psi_init is None:
            psi_init = np.zeros(dim, dtype=np.complex128)
            psi_init[0] = 1.0
        if len(psi_init) != dim:
            raise ValueError("psi_init has wrong dimension")
        self.u = np.ascontiguousarray(psi_init.real, dtype=np.float64)
        self.v = np.ascontiguousarray(psi_init.imag, dtype=np.float64)
        self.u_prev = np.empty(dim)
        self.v_prev = np.empty(dim)
        self.u_scr = np.empty(dim)
        self.v_scr = np.empty(dim)
        self.work = kern.make_work(dim)
        self.auto_jumps = auto_jumps
        self.eta_stream = EtaStream(config.seed)
        self.jump_count = 0
        self.pending_eta = self.eta_stream[0] if auto_jumps else -1.0
        self.half_index = 0
        self._cursor = 0          # completed grid steps within the current half
        self.jump_times: list[float] = []
        self.jump_etas: list[float] = []
        self.half_jumps: list[tuple[int, float]] = []  # (grid step, sub-step) this half
        self.tail_start = int(math.floor(TAIL_FRACTION * params.N)) + 1
        self.tail_flagged = False

    # -- state access -------------------------------------------------------

    @property
    def psi(self) -> np.ndarray:
        return self.u + 1j * self.v

    def set_psi(self, psi: np.ndarray):
        self.u[:] = psi.real
        self.v[:] = psi.imag

    def norm_sq(self) -> float:
        return kern.norm_sq(self.u, self.v)

    def scale_to_norm_sq(self, n2: float):
        s = math.sqrt(n2 / self.norm_sq())
        self.u *= s
        self.v *= s

    def t_abs(self) -> float:
        return self.half_index * (self.params.T / 2.0) + self._cursor * self.dt

    def observable(self, kind: str) -> complex:
        """Normalized <a> ("xi") or <n> ("n") of the current state."""
        psi = self.psi
        n2 = float(np.vdot(psi, psi).real)
        if n2 <= 0.0:
            raise ZeroNormError("state norm vanished")
        if kind == "xi":
            return complex(np.vdot(psi[:-1], self.sq * psi[1:]) / n2)
        if kind == "n":
            mag = np.abs(psi) ** 2
            return complex(np.dot(np.arange(len(psi)), mag) / n2)
        raise ValueError(f"unknown observable {kind!r}")

    def tail_mass(self) -> float:
        mag = self.u**2 + self.v**2
        return float(mag[self.tail_start:].sum() / mag.sum())

    # -- propagation --------------------------------------------------------

    def _apply_annihilation_scratch(self):
        """a |psi_scr>, renormalized to unit norm, in place."""
        self.u_scr[:-1] = self.sq * self.u_scr[1:]
        self.v_scr[:-1] = self.sq * self.v_scr[1:]
        self.u_scr[-1] = 0.0
        self.v_scr[-1] = 0.0
        n2 = kern.norm_sq(self.u_scr, self.v_scr)
        if n2 <= 0.0:
            raise VacuumJumpError("jump on a vacuum state")
        s = 1.0 / math.sqrt(n2)
        self.u_scr *= s
        self.v_scr *= s

    def _bisect_jump(self, F: float, width: float, step: int, frac: float,
                     record: bool) -> float:
        """Localize and apply the pending jump inside (0, width] after u_prev.

        The pre-crossing state sits at local time step*dt + frac within the
        current half.  Returns the sub-step offset h* at which the jump was
        applied; bracket endpoints are re-integrated single RK4 steps from
        the saved state, and |psi(h*)|^2 <= eta by construction.
        """
        eta = self.pending_eta
        lo, hi = 0.0, width
        iters = max(1, int(math.ceil(math.log2(width / self.config.jump_time_tol))))
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            self.u_scr[:] = self.u_prev
            self.v_scr[:] = self.v_prev
            n2 = kern.rk4_step(self.u_scr, self.v_scr, self.dr, self.di, self.sq,
                               F, mid, self.work)
            if n2 <= eta:
                hi = mid
            else:
                lo = mid
        self.u_scr[:] = self.u_prev
        self.v_scr[:] = self.v_prev
        kern.rk4_step(self.u_scr, self.v_scr, self.dr, self.di, self.sq, F, hi, self.work)
        self._apply_annihilation_scratch()
        self.u[:] = self.u_scr
        self.v[:] = self.v_scr
        base_local = step * self.dt + frac
        t_star = self.half_index * (self.params.T / 2.0) + base_local + hi
        if record:
            self.jump_times.append(t_star)
            self.jump_etas.append(eta)
        self.half_jumps.append((step, frac + hi))
        self.jump_count += 1
        self.pending_eta = self.eta_stream[self.jump_count]
        return hi

    def advance_steps(self, F: float, nsteps: int, record: bool = False):
        """Advance exactly nsteps*dt from the current grid-aligned cursor."""
        dt = self.dt
        done = 0
        frac = 0.0
        check = self.auto_jumps
        while done < nsteps or frac > 0.0:
            if frac > 0.0:
                w = dt - frac
                self.u_prev[:] = self.u
                self.v_prev[:] = self.v
                n2 = kern.rk4_step(self.u, self.v, self.dr, self.di, self.sq,
                                   F, w, self.work)
                if check and n2 <= self.pending_eta:
                    h = self._bisect_jump(F, w, self._cursor + done, frac, record)
                    frac += h
                    if frac >= dt * (1.0 - 1e-12):
                        done += 1
                        frac = 0.0
                else:
                    done += 1
                    frac = 0.0
            else:
                eta = self.pending_eta if check else -1.0
                steps, n2, crossed = kern.rk4_block(
                    self.u, self.v, self.u_prev, self.v_prev,
                    self.dr, self.di, self.sq, F, dt, nsteps - done, eta, self.work,
                )
                if crossed:
                    h = self._bisect_jump(F, dt, self._cursor + done + steps - 1,
                                          0.0, record)
                    done += steps - 1
                    frac = h
                    if frac >= dt * (1.0 - 1e-12):
                        done += 1
                        frac = 0.0
                else:
                    done += steps
        self._cursor += nsteps

    def advance_to_forced(self, F: float, nsteps: int, jumps: list[tuple[int, float]]):
        """Advance nsteps*dt applying jumps at externally prescribed times.

        Used for the auxiliary trajectory when jumps are slaved to the
        fiducial one; no thresholds are consumed.
        """
        dt = self.dt
        done = 0
        frac = 0.0
        for m, h in jumps:
            # move to local time m*dt + h, never checking thresholds
            if frac > 0.0 and (m > done or h > frac):
                if m > done:
                    kern.rk4_step(self.u, self.v, self.dr, self.di, self.sq,
                                  F, dt - frac, self.work)
                    done += 1
                    frac = 0.0
                else:
                    kern.rk4_step(self.u, self.v, self.dr, self.di, self.sq,
                                  F, h - frac, self.work)
                    frac = h
            if m > done:
                kern.rk4_block(self.u, self.v, self.u_prev, self.v_prev,
                               self.dr, self.di, self.sq, F, dt, m - done, -1.0,
                               self.work)
                done = m
            if frac < h:
                kern.rk4_step(self.u, self.v, self.dr, self.di, self.sq,
                              F, h - frac, self.work)
                frac = h
            self.u_scr[:] = self.u
            self.v_scr[:] = self.v
            self._apply_annihilation_scratch()
            self.u[:] = self.u_scr
            self.v[:] = self.v_scr
            if frac >= dt * (1.0 - 1e-12):
                done += 1
                frac = 0.0
        if frac > 0.0:
            kern.rk4_step(self.u, self.v, self.dr, self.di, self.sq,
                          F, dt - frac, self.work)
            done += 1
        if done < nsteps:
            kern.rk4_block(self.u, self.v, self.u_prev, self.v_prev,
                           self.dr, self.di, self.sq, F, dt, nsteps - done, -1.0,
                           self.work)
        self._cursor += nsteps

    def begin_half(self):
        self.half_jumps = []
        self._cursor = 0

    def end_half(self):
        self.half_index += 1
        self._cursor = 0

    def advance_half(self, F: float, *, record: bool = False,
                     forced: list[tuple[int, float]] | None = None,
                     sample_steps: tuple[int, ...] = (),
                     sample_cb=None) -> list[tuple[int, float]]:
        """Advance one half period; returns the jumps performed in it."""
        self.begin_half()
        cursor = 0
        for s in sample_steps:
            if forced is None:
                self.advance_steps(F, s - cursor, record)
            else:
                self.advance_to_forced(F, s - cursor,
                                       [(m - cursor, h) for m, h in forced
                                        if cursor <= m < s])
            cursor = s
            if sample_cb is not None:
                sample_cb(self)
        if cursor < self.n_half:
            if forced is None:
                self.advance_steps(F, self.n_half - cursor, record)
            else:
                self.advance_to_forced(F, self.n_half - cursor,
                                       [(m - cursor, h) for m, h in forced
                                        if m >= cursor])
        jumps = self.half_jumps
        self.end_half()
        return jumps


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def _segment_drive(params: ModelParams, t: float, dt: float) -> float:
    """Drive value for the segment (t, t+dt], which must not straddle T/2."""
    half = params.T / 2.0
    j_mid = math.floor((t + 0.5 * dt) / half)
    boundary = (math.floor(t / half + 1e-9) + 1.0) * half
    if t + dt > boundary * (1.0 + 1e-12) + 1e-12 * params.T:
        raise ValueError(
            f"segment [{t}, {t + dt}] straddles a drive switching point"
        )
    return params.A if j_mid % 2 == 0 else 0.0


def propagate_segment(params: ModelParams, psi: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One explicit 4th-order step of the non-Hermitian evolution.

    The segment must lie inside one half period, where the drive is
    constant; the norm is non-increasing up to integrator error.
    """
    F = _segment_drive(params, t, dt)
    dr, di, sq = kern.model_coefficients(params.chi, params.gamma, params.N)
    u = np.ascontiguousarray(psi.real, dtype=np.float64)
    v = np.ascontiguousarray(psi.imag, dtype=np.float64)
    kern.rk4_step(u, v, dr, di, sq, F, dt, kern.make_work(params.dim))
    return u + 1j * v


def locate_jump_time(params: ModelParams, psi_before: np.ndarray, t: float,
                     dt: float, eta: float, tol: float | None = None) -> float:
    """Bisection for the jump time t* in [t, t+dt].

    Requires a bracket: squared norm > eta at t and <= eta at t+dt.  Each
    probe re-integrates a single RK4 step from psi_before; the returned
    endpoint satisfies |psi(t*)|^2 <= eta and is within tol of the crossing.
    """
    if tol is None:
        tol = dt * 1e-3
    F = _segment_drive(params, t, dt)
    dr, di, sq = kern.model_coefficients(params.chi, params.gamma, params.N)
    work = kern.make_work(params.dim)
    u0 = np.ascontiguousarray(psi_before.real, dtype=np.float64)
    v0 = np.ascontiguousarray(psi_before.imag, dtype=np.float64)
    n2_start = kern.norm_sq(u0, v0)
    if n2_start <= eta:
        return t
    u = u0.copy()
    v = v0.copy()
    n2_end = kern.rk4_step(u, v, dr, di, sq, F, dt, work)
    if n2_end > eta:
        raise ValueError("no bracket: squared norm at t+dt still above eta")
    lo, hi = 0.0, dt
    iters = max(1, int(math.ceil(math.log2(dt / tol))))
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        u[:] = u0
        v[:] = v0
        n2 = kern.rk4_step(u, v, dr, di, sq, F, mid, work)
        if n2 <= eta:
            hi = mid
        else:
            lo = mid
    return t + hi


def apply_jump(psi: np.ndarray) -> np.ndarray:
    """Photon emission: a|psi>, renormalized to unit norm."""
    out = np.zeros_like(psi, dtype=np.complex128)
    sq = np.sqrt(np.arange(1.0, len(psi)))
    out[:-1] = sq * psi[1:]
    n2 = float(np.vdot(out, out).real)
    if n2 <= 0.0:
        raise VacuumJumpError("the vacuum cannot emit: a|0> = 0")
    return out / math.sqrt(n2)


def run_trajectory(params: ModelParams, config: TrajectoryConfig,
                   psi_init: np.ndarray | None = None, *,
                   collect_n_series: bool = False,
                   n_series_stride: int = 1) -> TrajectoryRecord:
    """Full MCWF loop over [0, t_transient + t_measure].

    Jumps and stroboscopic observables are recorded only after the
    transient.  The eta thresholds come from a counter-based stream keyed
    on config.seed, so identical seeds give identical records.
    """
    tp, mp = config.periods(params)
    ev = Evolver(params, config, psi_init)
    n_half = ev.n_half

    off_steps = round(config.strobe_offset / config.dt)
    if abs(off_steps * config.dt - config.strobe_offset) > 1e-9 * params.T or \
       not 0 <= off_steps < 2 * n_half:
        raise ValueError("strobe_offset must be a grid multiple inside one period")

    strobe_p: list[int] = []
    strobe_xi: list[complex] = []
    strobe_n: list[float] = []
    series: list[tuple[float, float, float]] = []

    def dense_cb(e: Evolver):
        n2 = e.norm_sq()
        nval = (e.observable("n")).real
        series.append((e.t_abs(), nval, n2))

    def strobe_sample(e: Evolver, period: int):
        strobe_p.append(period)
        strobe_xi.append(e.observable("xi"))
        strobe_n.append(e.observable("n").real)

    stride_set = set()
    if collect_n_series:
        stride_set = set(range(n_series_stride, n_half + 1, n_series_stride))

    flags: list[str] = []
    for p in range(tp + mp):
        measuring = p >= tp
        for hf, F in ((0, params.A), (1, 0.0)):
            local_off = off_steps - hf * n_half
            strobe_here = measuring and off_steps != 0 and 0 < local_off <= n_half
            samples = set(stride_set)
            if strobe_here:
                samples.add(local_off)
            if samples:
                def cb(e, _p=p, _strobe=strobe_here, _off=local_off):
                    if collect_n_series and e._cursor in stride_set:
                        dense_cb(e)
                    if _strobe and e._cursor == _off:
                        strobe_sample(e, _p)
                ev.advance_half(F, record=measuring,
                                sample_steps=tuple(sorted(samples)), sample_cb=cb)
            else:
                ev.advance_half(F, record=measuring)
        if measuring and off_steps == 0:
            strobe_sample(ev, p)
        if not ev.tail_flagged and ev.tail_mass() > TAIL_MASS_LIMIT:
            ev.tail_flagged = True
            warnings.warn(
                f"Fock truncation tail mass exceeded {TAIL_MASS_LIMIT:g} "
                f"(N={params.N}, A={params.A}, T={params.T})",
                RuntimeWarning,
                stacklevel=2,
            )
            flags.append(
                f"truncation: tail mass above {TAIL_MASS_LIMIT:g} at t={ev.t_abs():.6g}"
            )

    return TrajectoryRecord(
        jump_times=np.asarray(ev.jump_times),
        jump_thresholds=np.asarray(ev.jump_etas),
        strobe_periods=np.asarray(strobe_p, dtype=np.int64),
        strobe_xi=np.asarray(strobe_xi, dtype=np.complex128),
        strobe_n=np.asarray(strobe_n),
        n_series=np.asarray(series) if collect_n_series else None,
        flags=flags,
        seed=config.seed,
    )


def trajectory_states(params: ModelParams, config: TrajectoryConfig,
                      probe_times, psi_init: np.ndarray | None = None) -> list[np.ndarray]:
    """State snapshots psi(t_p) along one trajectory, for ensemble averaging.

    Probe times must be multiples of T/2 so they land on half-period
    boundaries.  Snapshots are raw (possibly sub-normalized) states.
    """
    half = params.T / 2.0
    probes = []
    for tp in probe_times:
        k = round(tp / half)
        if abs(k * half - tp) > 1e-9 * params.T:
            raise ValueError("probe times must be multiples of T/2")
        probes.append(k)
    ev = Evolver(params, config, psi_init)
    out: dict[int, np.ndarray] = {}
    if 0 in probes:
        out[0] = ev.psi
    for h in range(1, max(probes) + 1):
        ev.advance_half(params.A if h % 2 == 1 else 0.0)
        if h in probes:
            out[h] = ev.psi
    return [out[k] for k in probes]


def write_record(record: TrajectoryRecord, params: ModelParams,
                 config: TrajectoryConfig, out_dir, basename: str = "trajectory"):
    """Serialize a record to documented CSV tables plus a JSON header."""
    from . import __version__

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jumps = out / f"{basename}_jumps.csv"
    with jumps.open("w") as f:
        f.write("t_k,eta_k\n")
        for t, e in zip(record.jump_times, record.jump_thresholds):
            f.write(f"{t:.17e},{e:.17e}\n")
    strobe = out / f"{basename}_strobe.csv"
    with strobe.open("w") as f:
        f.write("period_index,Re_xi,Im_xi\n")
        for p, xi in zip(record.strobe_periods, record.strobe_xi):
            f.write(f"{p},{xi.real:.17e},{xi.imag:.17e}\n")
    meta = {
        "params": {"chi": params.chi, "gamma": params.gamma, "A": params.A,
                   "T": params.T, "N": params.N},
        "config": {"t_transient": config.t_transient, "t_measure": config.t_measure,
                   "dt": config.dt, "jump_time_tol": config.jump_time_tol,
                   "seed": config.seed, "strobe_offset": config.strobe_offset},
        "seed": record.seed,
        "n_jumps": record.n_jumps,
        "flags": record.flags,
        "code_version": __version__,
    }
    (out / f"{basename}_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return jumps, strobe
