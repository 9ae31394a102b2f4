"""Parameter-plane sweeps: config parsing, seeding, checkpoint/resume, outputs.

A sweep walks the (A, T) grid, runs the requested analyses per point with
deterministic per-trajectory seeds, and persists one result.json per point
(written atomically).  Finished points are skipped on restart; aggregate
CSV maps are regenerated from the per-point files, never from in-memory
state, so they are a pure function of what is on disk.
"""

from __future__ import annotations

import hashlib
import json
import traceback
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .fock import ModelParams
from .lyapunov import LyapunovConfig, quantum_lyapunov
from .mcwf import TrajectoryConfig, TrajectoryRecord, run_trajectory
from .meanfield import bifurcation_scan, classical_lyapunov, write_bifurcation
from .parallel import pmap
from .seeding import derive_seed
from .stats import classify_waiting_times, decay_rate_pdf, log_binned_pdf, \
    pool_waiting_times, write_pdf_csv

__all__ = [
    "TASKS",
    "ConfigError",
    "SweepSpec",
    "PointResult",
    "parse_config",
    "canonical_config",
    "config_hash",
    "run_sweep",
    "write_aggregates",
]

TASKS = ("lyapunov", "wtd", "meanfield-le", "bifurcation")

_SCALAR_KEYS = {
    "chi": float,
    "gamma": float,
    "N": int,
    "master_seed": int,
    "M_r": int,
    "t_transient_periods": int,
    "t_measure_periods": int,
    "dt_override": float,
}
_LIST_KEYS = {"A_grid", "T_grid", "tasks"}
_OVERRIDE_KEYS = {"N": int, "M_r": int, "t_transient_periods": int,
                  "t_measure_periods": int, "dt_override": float}


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class SweepSpec:
    """Validated sweep description; see parse_config for the text schema."""

    A_grid: tuple[float, ...]
    T_grid: tuple[float, ...]
    tasks: tuple[str, ...] = ("lyapunov", "wtd")
    chi: float = 0.008
    gamma: float = 0.05
    N: int = 300
    master_seed: int = 0
    M_r: int = 100
    t_transient_periods: int = 2000
    t_measure_periods: int = 1000
    dt_override: float | None = None
    out_dir: str | None = None
    overrides: tuple = ()   # ((i, j, key, value), ...) applied per grid point

    def __post_init__(self):
        for name, grid in (("A_grid", self.A_grid), ("T_grid", self.T_grid)):
            if len(grid) == 0:
                raise ConfigError(f"{name} must be non-empty")
            if any(b <= a for a, b in zip(grid, grid[1:])):
                raise ConfigError(f"{name} must be strictly increasing")
        if any(a < 0 for a in self.A_grid):
            raise ConfigError("A_grid entries must be >= 0")
        if any(t <= 0 for t in self.T_grid):
            raise ConfigError("T_grid entries must be > 0")
        if not self.tasks:
            raise ConfigError("tasks must be non-empty")
        for t in self.tasks:
            if t not in TASKS:
                raise ConfigError(f"unknown task {t!r}; known: {TASKS}")
        if self.chi < 0:
            raise ConfigError("chi must be >= 0")
        if self.gamma <= 0:
            raise ConfigError("gamma must be > 0")
        if self.N < 1:
            raise ConfigError("N must be >= 1")
        if self.M_r < 1:
            raise ConfigError("M_r must be >= 1")
        if self.t_transient_periods < 0 or self.t_measure_periods < 1:
            raise ConfigError("transient must be >= 0 and measure >= 1 periods")
        if self.dt_override is not None and self.dt_override <= 0:
            raise ConfigError("dt_override must be > 0")
        for ov in self.overrides:
            i, j, key, _ = ov
            if not (0 <= i < len(self.A_grid) and 0 <= j < len(self.T_grid)):
                raise ConfigError(f"override indices ({i},{j}) outside the grid")
            if key not in _OVERRIDE_KEYS:
                raise ConfigError(f"override key {key!r} not one of "
                                  f"{sorted(_OVERRIDE_KEYS)}")

    def point_index(self, i: int, j: int) -> int:
        return i * len(self.T_grid) + j

    def point_settings(self, i: int, j: int) -> dict:
        eff = {
            "N": self.N,
            "M_r": self.M_r,
            "t_transient_periods": self.t_transient_periods,
            "t_measure_periods": self.t_measure_periods,
            "dt_override": self.dt_override,
        }
        for oi, oj, key, value in self.overrides:
            if (oi, oj) == (i, j):
                eff[key] = value
        return eff


def parse_config(text: str) -> SweepSpec:
    """Parse the key = value sweep schema with line-numbered diagnostics.

    Keys: chi, gamma, N, A_grid, T_grid, tasks, master_seed, M_r,
    t_transient_periods, t_measure_periods, dt_override, and repeatable
    override entries "override = i, j, key, value".  Lists are
    comma-separated; '#' starts a comment.
    """
    values: dict = {}
    overrides: list = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {line!r}", lineno)
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key == "override":
            parts = [p.strip() for p in val.split(",")]
            if len(parts) != 4:
                raise ConfigError("override needs 'i, j, key, value'", lineno)
            okey = parts[2]
            if okey not in _OVERRIDE_KEYS:
                raise ConfigError(f"override key {okey!r} not one of "
                                  f"{sorted(_OVERRIDE_KEYS)}", lineno)
            try:
                overrides.append((int(parts[0]), int(parts[1]), okey,
                                  _OVERRIDE_KEYS[okey](parts[3])))
            except ValueError:
                raise ConfigError(f"bad override value {val!r}", lineno) from None
            continue
        if key in seen:
            raise ConfigError(f"duplicate key {key!r} (first at line {seen[key]})",
                              lineno)
        seen[key] = lineno
        if key in _SCALAR_KEYS:
            try:
                values[key] = _SCALAR_KEYS[key](val)
            except ValueError:
                raise ConfigError(f"bad value for {key!r}: {val!r}", lineno) from None
        elif key in _LIST_KEYS:
            items = [p.strip() for p in val.split(",") if p.strip()]
            if key == "tasks":
                values[key] = tuple(items)
            else:
                try:
                    values[key] = tuple(float(p) for p in items)
                except ValueError:
                    raise ConfigError(f"bad value for {key!r}: {val!r}", lineno) from None
        else:
            raise ConfigError(f"unknown key {key!r}", lineno)
    for required in ("A_grid", "T_grid"):
        if required not in values:
            raise ConfigError(f"missing required key {required!r}")
    try:
        return SweepSpec(overrides=tuple(overrides), **values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def canonical_config(spec: SweepSpec) -> str:
    """Canonical text form; parse_config(canonical_config(s)) == s."""
    lines = [
        f"chi = {spec.chi!r}",
        f"gamma = {spec.gamma!r}",
        f"N = {spec.N}",
        "A_grid = " + ", ".join(repr(a) for a in spec.A_grid),
        "T_grid = " + ", ".join(repr(t) for t in spec.T_grid),
        "tasks = " + ", ".join(spec.tasks),
        f"master_seed = {spec.master_seed}",
        f"M_r = {spec.M_r}",
        f"t_transient_periods = {spec.t_transient_periods}",
        f"t_measure_periods = {spec.t_measure_periods}",
    ]
    if spec.dt_override is not None:
        lines.append(f"dt_override = {spec.dt_override!r}")
    for i, j, key, value in spec.overrides:
        lines.append(f"override = {i}, {j}, {key}, {value!r}")
    return "\n".join(lines) + "\n"


def config_hash(spec: SweepSpec) -> str:
    return hashlib.sha256(canonical_config(spec).encode()).hexdigest()[:16]


@dataclass
class PointResult:
    """Per-grid-point outcome with full provenance for reproducibility."""

    A: float
    T: float
    point_index: int
    status: str = "ok"
    error: str | None = None
    lambda_q: float | None = None
    lambda_q_stderr: float | None = None
    lambda_cl: float | None = None
    fit: dict | None = None
    flags: list[str] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PointResult":
        return cls(**json.loads(text))


def _records_from_arrays(pairs) -> list[TrajectoryRecord]:
    empty_c = np.empty(0, dtype=np.complex128)
    empty_i = np.empty(0, dtype=np.int64)
    return [
        TrajectoryRecord(jump_times=np.asarray(t), jump_thresholds=np.asarray(e),
                         strobe_periods=empty_i, strobe_xi=empty_c,
                         strobe_n=np.empty(0))
        for t, e in pairs
    ]


def _wtd_trajectory(args) -> tuple[np.ndarray, np.ndarray, list[str]]:
    params, config = args
    rec = run_trajectory(params, config)
    return rec.jump_times, rec.jump_thresholds, rec.flags


def run_point(spec: SweepSpec, i: int, j: int, threads: int = 1,
              out_dir: Path | None = None) -> PointResult:
    """Execute the requested tasks at grid point (i, j)."""
    eff = spec.point_settings(i, j)
    pidx = spec.point_index(i, j)
    params = ModelParams(chi=spec.chi, gamma=spec.gamma, A=spec.A_grid[i],
                         T=spec.T_grid[j], N=eff["N"])
    point_seed = derive_seed(spec.master_seed, pidx, 0, "point")
    tconfig = TrajectoryConfig.for_params(
        params,
        transient_periods=eff["t_transient_periods"],
        measure_periods=eff["t_measure_periods"],
        dt=eff["dt_override"],
        seed=point_seed,
    )
    res = PointResult(
        A=params.A, T=params.T, point_index=pidx,
        provenance={
            "master_seed": spec.master_seed,
            "point_seed": point_seed,
            "config_hash": config_hash(spec),
            "code_version": __version__,
            "M_r": eff["M_r"],
            "N": eff["N"],
            "dt": tconfig.dt,
            "t_transient_periods": eff["t_transient_periods"],
            "t_measure_periods": eff["t_measure_periods"],
        },
    )
    flags: set[str] = set()
    jump_arrays = None

    if "lyapunov" in spec.tasks:
        lrun = quantum_lyapunov(params, tconfig,
                                LyapunovConfig(averaging=eff["M_r"]),
                                collect_jumps="wtd" in spec.tasks,
                                threads=threads)
        res.lambda_q = lrun.lambda_final
        res.lambda_q_stderr = lrun.lambda_stderr
        for tr in lrun.traces:
            flags.update(tr.flags)
        if "wtd" in spec.tasks:
            jump_arrays = [(tr.jump_times, tr.jump_thresholds)
                           for tr in lrun.traces]

    if "wtd" in spec.tasks:
        if jump_arrays is None:
            jobs = []
            for r in range(eff["M_r"]):
                seed = derive_seed(point_seed, 0, r, "eta")
                jobs.append((params, replace(tconfig, seed=seed)))
            outs = pmap(_wtd_trajectory, jobs, threads=threads)
            jump_arrays = [(t, e) for t, e, _ in outs]
            for _, _, fl in outs:
                flags.update(fl)
        records = _records_from_arrays(jump_arrays)
        try:
            sample = pool_waiting_times(records)
            fit = classify_waiting_times(sample)
            res.fit = fit.to_dict()
            if out_dir is not None:
                write_pdf_csv(log_binned_pdf(sample.tau, fit.bins_per_decade),
                              out_dir / "wtd_pdf.csv")
                ws = decay_rate_pdf(sample)
                write_pdf_csv(ws.pdf, out_dir / "ws_pdf.csv")
                res.provenance["ws_broadening"] = ws.broadening
        except ValueError as exc:
            flags.add(f"wtd: {exc}")

    if "meanfield-le" in spec.tasks:
        res.lambda_cl = classical_lyapunov(params)

    res.flags = sorted(flags)
    return res


def _atomic_write(path: Path, text: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _load_valid_result(path: Path, chash: str) -> PointResult | None:
    try:
        res = PointResult.from_json(path.read_text())
    except (OSError, ValueError, TypeError):
        return None
    if res.status != "ok" or res.provenance.get("config_hash") != chash:
        return None
    return res


def run_sweep(spec: SweepSpec, threads: int | None = None,
              progress=None) -> list[PointResult]:
    """Run (or resume) all grid points, then regenerate the aggregate maps.

    Worker failures are isolated per point: the sweep records a failed
    PointResult and continues.
    """
    if spec.out_dir is None:
        raise ValueError("spec.out_dir must be set to run a sweep")
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(spec)
    (out / "config.cfg").write_text(canonical_config(spec))

    if "bifurcation" in spec.tasks:
        base = ModelParams(chi=spec.chi, gamma=spec.gamma, A=0.0,
                           T=spec.T_grid[0], N=spec.N)
        for j, T in enumerate(spec.T_grid):
            bpath = out / f"bifurcation_T{j:03d}.csv"
            if bpath.exists():
                continue
            pb = ModelParams(chi=spec.chi, gamma=spec.gamma, A=0.0, T=T, N=spec.N)
            table = bifurcation_scan(pb, spec.A_grid, seed=spec.master_seed)
            write_bifurcation(table, bpath)

    results = []
    for i in range(len(spec.A_grid)):
        for j in range(len(spec.T_grid)):
            pdir = out / f"{i:03d}x{j:03d}"
            pdir.mkdir(exist_ok=True)
            rf = pdir / "result.json"
            if rf.exists():
                cached = _load_valid_result(rf, chash)
                if cached is not None:
                    results.append(cached)
                    if progress:
                        progress(f"[{i},{j}] cached")
                    continue
            try:
                res = run_point(spec, i, j, threads=threads or 1, out_dir=pdir)
            except Exception as exc:          # worker isolation per point
                res = PointResult(
                    A=spec.A_grid[i], T=spec.T_grid[j],
                    point_index=spec.point_index(i, j),
                    status="failed",
                    error=f"{type(exc).__name__}: {exc}",
                    provenance={"config_hash": chash,
                                "code_version": __version__,
                                "traceback": traceback.format_exc(limit=5)},
                )
            _atomic_write(rf, res.to_json())
            results.append(res)
            if progress:
                progress(f"[{i},{j}] {res.status}"
                         + (f" lambda_q={res.lambda_q:+.4f}" if res.lambda_q is not None else ""))
    write_aggregates(out, spec)
    return results


def write_aggregates(out_dir, spec: SweepSpec):
    """Rebuild lambda_map.csv / alpha_map.csv from the per-point files."""
    out = Path(out_dir)
    lam_rows = []
    alpha_rows = []
    for i in range(len(spec.A_grid)):
        for j in range(len(spec.T_grid)):
            rf = out / f"{i:03d}x{j:03d}" / "result.json"
            if not rf.exists():
                continue
            try:
                res = PointResult.from_json(rf.read_text())
            except (ValueError, TypeError):
                continue
            if res.status != "ok":
                continue
            if res.lambda_q is not None:
                lam_rows.append((res.A, res.T, res.lambda_q, res.lambda_q_stderr))
            if res.fit is not None:
                alpha_rows.append((res.A, res.T, res.fit["alpha"],
                                   res.fit["r_squared"],
                                   1 if res.fit["accepted"] else 0))
    with (out / "lambda_map.csv").open("w") as f:
        f.write("A,T,lambda_q,stderr\n")
        for a, t, lam, se in lam_rows:
            f.write(f"{a:.17e},{t:.17e},{lam:.17e},{se:.17e}\n")
    with (out / "alpha_map.csv").open("w") as f:
        f.write("A,T,alpha,r2,accepted\n")
        for a, t, al, r2, acc in alpha_rows:
            f.write(f"{a:.17e},{t:.17e},{al:.17e},{r2:.17e},{acc}\n")
