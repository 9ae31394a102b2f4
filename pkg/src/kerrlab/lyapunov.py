"""Largest quantum Lyapunov exponent from fiducial/auxiliary trajectory pairs.

Both trajectories evolve under the same non-Hermitian flow and consume the
same threshold sequence eta_k, so they experience one realization of the
emission noise.  The observable mismatch Delta = |obs_f - obs_a| is checked
stroboscopically; when it leaves the window [delta_min, delta_max] the
auxiliary state is pulled back along the mismatch direction so the
observable distance returns to delta_0, and the growth factor
d_k = Delta/delta_0 is logged.  The exponent is the time average
lambda(t) = (1/t) sum_k ln d_k.

Two noise-sharing contracts are implemented:

  * "shared-thresholds" (default): the auxiliary jumps when its own norm
    reaches the shared eta_k, so jump-time mismatches can amplify.  This is
    what makes positive exponents possible at all: with jumps slaved to the
    fiducial times the whole inter-reset map is a single linear cocycle
    acting on both states and observable mismatches cannot grow
    exponentially.
  * "shared-times": jumps are applied to both states at the fiducial jump
    times (kept for comparison).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.random import Generator, Philox

from .fock import ModelParams
from .mcwf import Evolver, TrajectoryConfig
from .parallel import pmap
from .seeding import derive_seed

__all__ = [
    "LyapunovConfig",
    "LyapunovTrace",
    "LyapunovRun",
    "DegeneratePairError",
    "init_auxiliary",
    "observable_distance",
    "renormalize_pair",
    "quantum_lyapunov",
    "write_lyapunov",
]

NOISE_MODES = ("shared-thresholds", "shared-times")


class DegeneratePairError(ValueError):
    """Fiducial and auxiliary observables coincide exactly; no direction to rescale."""


@dataclass(frozen=True)
class LyapunovConfig:
    """Perturbation size, renormalization window and averaging settings.

    delta_0/delta_min/delta_max default to None, meaning they are resolved
    per run from the observable spread over the transient:
    delta_0 = 1e-3 sigma, delta_max = 10 delta_0, delta_min = 1e-6 delta_0.
    delta_min sits far below delta_0 on purpose: in contracting regimes the
    mismatch settles on the jump-localization noise floor before reaching
    it, so no shrink events are logged and the exponent reads 0 rather than
    the contraction rate, which is how the finite-time exponent behaves in
    the regular regime.
    """

    epsilon: float = 1e-4
    delta_0: float | None = None
    delta_min: float | None = None
    delta_max: float | None = None
    observable: str = "xi"
    averaging: int = 100
    noise_mode: str = "shared-thresholds"
    swap_pair: bool = False

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.observable not in ("xi", "n"):
            raise ValueError("observable must be 'xi' or 'n'")
        if self.averaging < 1:
            raise ValueError("averaging must be >= 1")
        if self.noise_mode not in NOISE_MODES:
            raise ValueError(f"noise_mode must be one of {NOISE_MODES}")
        got = [self.delta_0, self.delta_min, self.delta_max]
        if all(x is not None for x in got):
            if not 0 < self.delta_min < self.delta_0 < self.delta_max:
                raise ValueError("need 0 < delta_min < delta_0 < delta_max")
        elif any(x is not None for x in got):
            raise ValueError("set all of delta_0/delta_min/delta_max or none")

    def resolve(self, sigma: float) -> "LyapunovConfig":
        """Fill the window thresholds from the observable spread sigma."""
        if self.delta_0 is not None:
            return self
        d0 = 1e-3 * max(sigma, 1e-12)
        return replace(self, delta_0=d0, delta_min=1e-6 * d0, delta_max=10.0 * d0)


@dataclass
class LyapunovTrace:
    """One fiducial/auxiliary run: growth events and the running exponent."""

    reset_times: np.ndarray
    growth_factors: np.ndarray
    lambda_series: np.ndarray
    lambda_final: float
    sigma_obs: float
    reset_residual_max: float
    flags: list[str] = field(default_factory=list)
    jump_times: np.ndarray | None = None
    jump_thresholds: np.ndarray | None = None


@dataclass
class LyapunovRun:
    """Ensemble of independent pair runs at one parameter point."""

    traces: list[LyapunovTrace]
    lambda_final: float
    lambda_stderr: float
    config: LyapunovConfig
    params: ModelParams
    seed: int

    @property
    def run_lambdas(self) -> np.ndarray:
        return np.array([tr.lambda_final for tr in self.traces])


def init_auxiliary(psi_f: np.ndarray, epsilon: float, rng: Generator) -> np.ndarray:
    """Unit-normalized psi_f + epsilon * psi_r with complex-Gaussian psi_r."""
    if epsilon == 0.0:
        return psi_f.copy()
    dim = len(psi_f)
    psi_r = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    psi = psi_f + epsilon * psi_r
    return psi / np.linalg.norm(psi)


def _observable(psi: np.ndarray, kind: str) -> complex:
    n2 = float(np.vdot(psi, psi).real)
    if n2 <= 0.0:
        raise ValueError("zero-norm state")
    if kind == "xi":
        sq = np.sqrt(np.arange(1.0, len(psi)))
        return complex(np.vdot(psi[:-1], sq * psi[1:]) / n2)
    if kind == "n":
        mag = np.abs(psi) ** 2
        return complex(np.dot(np.arange(len(psi)), mag) / n2)
    raise ValueError(f"unknown observable {kind!r}")


def observable_distance(psi_f: np.ndarray, psi_a: np.ndarray,
                        observable: str = "xi") -> float:
    """Modulus of the difference of normalized expectations."""
    return abs(_observable(psi_f, observable) - _observable(psi_a, observable))


def renormalize_pair(psi_f: np.ndarray, psi_a: np.ndarray, delta_0: float,
                     observable: str = "xi") -> tuple[np.ndarray, float]:
    """Pull psi_a back along the mismatch direction so Delta returns to delta_0.

    Returns (new unit-normalized psi_a, growth factor d = Delta/delta_0).
    The rescaling fixes the observable distance to delta_0 only to first
    order; callers can measure the residual with observable_distance.
    """
    delta = observable_distance(psi_f, psi_a, observable)
    if delta == 0.0:
        raise DegeneratePairError("observable mismatch is exactly zero")
    d_k = delta / delta_0
    nf = psi_f / np.linalg.norm(psi_f)
    na = psi_a / np.linalg.norm(psi_a)
    mixed = nf + (delta_0 / delta) * (na - nf)
    return mixed / np.linalg.norm(mixed), d_k


def _run_pair(args) -> LyapunovTrace:
    """One transient + fiducial/auxiliary measurement run (worker function)."""
    params, tconfig, lconfig, run_index, collect_jumps = args
    tp, mp = tconfig.periods(params)
    eta_seed = derive_seed(tconfig.seed, 0, run_index, "eta")
    psir_seed = derive_seed(tconfig.seed, 0, run_index, "psi_r")

    fid = Evolver(params, replace(tconfig, seed=eta_seed))
    kind = lconfig.observable

    # transient: land on the asymptotic regime, calibrate the window
    obs_samples = np.empty(tp, dtype=np.complex128)
    for p in range(tp):
        fid.advance_half(params.A)
        fid.advance_half(0.0)
        obs_samples[p] = fid.observable(kind)
    sigma = float(np.sqrt(np.mean(np.abs(obs_samples - obs_samples.mean()) ** 2))) \
        if tp > 0 else 0.0
    lc = lconfig.resolve(sigma)

    rng = Generator(Philox(key=psir_seed))
    norm2_f = fid.norm_sq()
    psi_f_unit = fid.psi / math.sqrt(norm2_f)
    psi_a_unit = init_auxiliary(psi_f_unit, lc.epsilon, rng)
    if lc.swap_pair:
        psi_f_unit, psi_a_unit = psi_a_unit, psi_f_unit
        fid.set_psi(psi_f_unit * math.sqrt(norm2_f))

    shared_times = lc.noise_mode == "shared-times"
    aux = Evolver(params, replace(tconfig, seed=eta_seed),
                  psi_init=psi_a_unit, auto_jumps=not shared_times)
    aux.u *= math.sqrt(norm2_f)
    aux.v *= math.sqrt(norm2_f)
    aux.half_index = fid.half_index
    if not shared_times:
        aux.jump_count = fid.jump_count
        aux.pending_eta = fid.pending_eta

    log_sum = 0.0
    lam = np.empty(mp)
    reset_t: list[float] = []
    growth: list[float] = []
    residual_max = 0.0
    flags: list[str] = []
    t0 = tp * params.T

    for k in range(mp):
        for F in (params.A, 0.0):
            half_jumps = fid.advance_half(F, record=collect_jumps)
            if shared_times:
                aux.advance_half(F, forced=half_jumps)
            else:
                aux.advance_half(F)
        delta = abs(fid.observable(kind) - aux.observable(kind))
        if delta < lc.delta_min or delta > lc.delta_max:
            t_now = t0 + (k + 1) * params.T
            psi_f_unit = fid.psi
            psi_f_unit = psi_f_unit / np.linalg.norm(psi_f_unit)
            try:
                if delta == 0.0:
                    raise DegeneratePairError("exactly coincident observables")
                psi_a_new, d_k = renormalize_pair(psi_f_unit, aux.psi,
                                                  lc.delta_0, kind)
                log_sum += math.log(d_k)
                reset_t.append(t_now)
                growth.append(d_k)
                residual = abs(
                    observable_distance(psi_f_unit, psi_a_new, kind) - lc.delta_0
                )
                residual_max = max(residual_max, residual)
            except DegeneratePairError:
                psi_a_new = init_auxiliary(psi_f_unit, lc.delta_0, rng)
                flags.append(f"degenerate pair re-perturbed at t={t_now:.6g}")
            aux.set_psi(psi_a_new * math.sqrt(fid.norm_sq()))
            if not shared_times:
                aux.jump_count = fid.jump_count
                aux.pending_eta = fid.pending_eta
        lam[k] = log_sum / ((k + 1) * params.T)

    if fid.tail_flagged or fid.tail_mass() > 1e-6:
        flags.append("truncation guard tripped on fiducial trajectory")

    tail = max(1, mp // 10)
    return LyapunovTrace(
        reset_times=np.asarray(reset_t),
        growth_factors=np.asarray(growth),
        lambda_series=lam,
        lambda_final=float(lam[-tail:].mean()),
        sigma_obs=sigma,
        reset_residual_max=residual_max,
        flags=flags,
        jump_times=np.asarray(fid.jump_times) if collect_jumps else None,
        jump_thresholds=np.asarray(fid.jump_etas) if collect_jumps else None,
    )


def quantum_lyapunov(params: ModelParams, tconfig: TrajectoryConfig,
                     lconfig: LyapunovConfig, *, collect_jumps: bool = False,
                     threads: int = 1) -> LyapunovRun:
    """Ensemble quantum Lyapunov exponent at one parameter point.

    Runs lconfig.averaging independent pairs (seeded from tconfig.seed) and
    averages the tail of the running exponent; the standard error is over
    runs.
    """
    jobs = [(params, tconfig, lconfig, r, collect_jumps)
            for r in range(lconfig.averaging)]
    traces = pmap(_run_pair, jobs, threads=threads)
    lams = np.array([tr.lambda_final for tr in traces])
    stderr = float(lams.std(ddof=1) / math.sqrt(len(lams))) if len(lams) > 1 else 0.0
    return LyapunovRun(
        traces=traces,
        lambda_final=float(lams.mean()),
        lambda_stderr=stderr,
        config=lconfig,
        params=params,
        seed=tconfig.seed,
    )


def write_lyapunov(run: LyapunovRun, out_dir, basename: str = "lyapunov"):
    """CSV with reset events and running exponent, plus a JSON header."""
    import json

    from . import __version__

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resets = out / f"{basename}_resets.csv"
    with resets.open("w") as f:
        f.write("run,t_k,d_k\n")
        for r, tr in enumerate(run.traces):
            for t, d in zip(tr.reset_times, tr.growth_factors):
                f.write(f"{r},{t:.17e},{d:.17e}\n")
    series = out / f"{basename}_lambda.csv"
    with series.open("w") as f:
        f.write("run,period,lambda\n")
        for r, tr in enumerate(run.traces):
            for k, lam in enumerate(tr.lambda_series):
                f.write(f"{r},{k + 1},{lam:.17e}\n")
    p, c = run.params, run.config
    meta = {
        "lambda_final": run.lambda_final,
        "lambda_stderr": run.lambda_stderr,
        "run_lambdas": [tr.lambda_final for tr in run.traces],
        "sigma_obs": [tr.sigma_obs for tr in run.traces],
        "reset_residual_max": max((tr.reset_residual_max for tr in run.traces),
                                  default=0.0),
        "params": {"chi": p.chi, "gamma": p.gamma, "A": p.A, "T": p.T, "N": p.N},
        "config": {
            "epsilon": c.epsilon, "delta_0": c.delta_0, "delta_min": c.delta_min,
            "delta_max": c.delta_max, "observable": c.observable,
            "averaging": c.averaging, "noise_mode": c.noise_mode,
        },
        "seed": run.seed,
        "flags": sorted({fl for tr in run.traces for fl in tr.flags}),
        "code_version": __version__,
    }
    (out / f"{basename}_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return resets, series
