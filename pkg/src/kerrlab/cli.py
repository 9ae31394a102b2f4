"""Command-line front end.

Subcommands: trajectory, lyapunov, meanfield, wtd, sweep, oracle-check.
Each prints a machine-readable JSON summary on stdout (suppressed by
--quiet) and exits 0 on success, 1 on configuration/usage errors, 2 on
runtime failures.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .fock import ModelParams, fock_state
from .lindblad import ensemble_density, integrate_lindblad, trace_distance
from .lyapunov import LyapunovConfig, quantum_lyapunov, write_lyapunov
from .mcwf import TrajectoryConfig, run_trajectory, trajectory_states, write_record
from .meanfield import bifurcation_scan, classical_lyapunov, write_bifurcation
from .seeding import derive_seed
from .stats import classify_waiting_times, decay_rate_pdf, log_binned_pdf, \
    pool_waiting_times, write_fit_json, write_pdf_csv
from .sweep import ConfigError, SweepSpec, config_hash, parse_config, run_sweep
from .parallel import default_threads, pmap


class _Parser(argparse.ArgumentParser):
    """argparse that exits 1 (not 2) on usage errors, per the CLI contract."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="kerrlab", description=__doc__)
    p.add_argument("--version", action="version", version=f"kerrlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config_required=True):
        sp.add_argument("--config", type=Path, required=config_required,
                        help="sweep config file (key = value schema)")
        sp.add_argument("--out", type=Path, default=None, help="output directory")
        sp.add_argument("--seed", type=int, default=None,
                        help="override master_seed from the config")
        sp.add_argument("--threads", type=int, default=default_threads())
        sp.add_argument("--quiet", action="store_true")

    sp = sub.add_parser("trajectory", help="run one quantum trajectory")
    common(sp)
    sp.add_argument("--A", type=float, default=None)
    sp.add_argument("--T", type=float, default=None)
    sp.add_argument("--traj", type=int, default=0, help="trajectory index")

    sp = sub.add_parser("lyapunov", help="quantum Lyapunov exponent at one point")
    common(sp)
    sp.add_argument("--A", type=float, default=None)
    sp.add_argument("--T", type=float, default=None)
    sp.add_argument("--observable", choices=("xi", "n"), default="xi")

    sp = sub.add_parser("meanfield", help="classical LE and bifurcation scan")
    common(sp)
    sp.add_argument("--A", type=float, default=None)
    sp.add_argument("--T", type=float, default=None)
    sp.add_argument("--bifurcation", action="store_true",
                    help="also scan A_grid stroboscopically")

    sp = sub.add_parser("wtd", help="waiting-time statistics at one point")
    common(sp)
    sp.add_argument("--A", type=float, default=None)
    sp.add_argument("--T", type=float, default=None)

    sp = sub.add_parser("sweep", help="full parameter-plane sweep")
    common(sp)

    sp = sub.add_parser("oracle-check",
                        help="small-N trajectory-ensemble vs dense Lindblad suite")
    common(sp, config_required=False)
    sp.add_argument("--N", type=int, default=30)
    sp.add_argument("--A", type=float, default=0.5)
    sp.add_argument("--T", type=float, default=2.0)
    sp.add_argument("--ensembles", type=int, nargs="+", default=[100, 1000])
    return p


def _load_spec(args) -> SweepSpec:
    try:
        text = args.config.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}")
    spec = parse_config(text)
    if args.seed is not None:
        spec = replace(spec, master_seed=args.seed)
    if args.out is not None:
        spec = replace(spec, out_dir=str(args.out))
    return spec


def _point(spec: SweepSpec, args) -> tuple[ModelParams, TrajectoryConfig, int]:
    A = args.A if args.A is not None else spec.A_grid[0]
    T = args.T if args.T is not None else spec.T_grid[0]
    params = ModelParams(chi=spec.chi, gamma=spec.gamma, A=A, T=T, N=spec.N)
    pidx = 0
    seed = derive_seed(spec.master_seed, pidx, 0, "point")
    tconfig = TrajectoryConfig.for_params(
        params,
        transient_periods=spec.t_transient_periods,
        measure_periods=spec.t_measure_periods,
        dt=spec.dt_override,
        seed=seed,
    )
    return params, tconfig, pidx


def _emit(args, payload: dict) -> int:
    if not args.quiet:
        print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def _cmd_trajectory(args) -> int:
    spec = _load_spec(args)
    params, tconfig, _ = _point(spec, args)
    tconfig = replace(tconfig, seed=derive_seed(tconfig.seed, 0, args.traj, "eta"))
    rec = run_trajectory(params, tconfig)
    out = args.out or Path("trajectory-out")
    write_record(rec, params, tconfig, out)
    return _emit(args, {
        "command": "trajectory",
        "A": params.A, "T": params.T, "N": params.N,
        "seed": tconfig.seed,
        "n_jumps": rec.n_jumps,
        "mean_n": float(rec.strobe_n.mean()) if len(rec.strobe_n) else None,
        "flags": rec.flags,
        "out": str(out),
    })


def _cmd_lyapunov(args) -> int:
    spec = _load_spec(args)
    params, tconfig, _ = _point(spec, args)
    lconfig = LyapunovConfig(averaging=spec.M_r, observable=args.observable)
    run = quantum_lyapunov(params, tconfig, lconfig, threads=args.threads)
    payload = {
        "command": "lyapunov",
        "A": params.A, "T": params.T, "N": params.N,
        "observable": args.observable,
        "M_r": spec.M_r,
        "lambda_q": run.lambda_final,
        "lambda_q_stderr": run.lambda_stderr,
        "flags": sorted({fl for tr in run.traces for fl in tr.flags}),
    }
    if args.out is not None:
        write_lyapunov(run, args.out)
        payload["out"] = str(args.out)
    return _emit(args, payload)


def _cmd_meanfield(args) -> int:
    spec = _load_spec(args)
    params, _, _ = _point(spec, args)
    lam = classical_lyapunov(params)
    payload = {
        "command": "meanfield",
        "A": params.A, "T": params.T,
        "lambda_cl": lam,
    }
    if args.bifurcation:
        table = bifurcation_scan(params, spec.A_grid, seed=spec.master_seed)
        out = args.out or Path("meanfield-out")
        path = write_bifurcation(table, Path(out) / "bifurcation.csv")
        payload["bifurcation_csv"] = str(path)
    return _emit(args, payload)


def _wtd_job(job):
    params, config = job
    rec = run_trajectory(params, config)
    return rec


def _cmd_wtd(args) -> int:
    spec = _load_spec(args)
    params, tconfig, _ = _point(spec, args)
    jobs = [(params, replace(tconfig, seed=derive_seed(tconfig.seed, 0, r, "eta")))
            for r in range(spec.M_r)]
    records = pmap(_wtd_job, jobs, threads=args.threads)
    sample = pool_waiting_times(records)
    fit = classify_waiting_times(sample)
    payload = {
        "command": "wtd",
        "A": params.A, "T": params.T, "N": params.N,
        "n_waiting_times": sample.n,
        "fit": fit.to_dict(),
    }
    if args.out is not None:
        out = Path(args.out)
        write_pdf_csv(log_binned_pdf(sample.tau), out / "wtd_pdf.csv")
        ws = decay_rate_pdf(sample)
        write_pdf_csv(ws.pdf, out / "ws_pdf.csv")
        write_fit_json(fit, out / "fit.json")
        payload["out"] = str(out)
        payload["ws_broadening"] = ws.broadening
    return _emit(args, payload)


def _cmd_sweep(args) -> int:
    spec = _load_spec(args)
    if spec.out_dir is None:
        raise ConfigError("sweep needs --out (or an out_dir)")
    progress = None if args.quiet else lambda msg: print(msg, file=sys.stderr)
    t0 = time.time()
    results = run_sweep(spec, threads=args.threads, progress=progress)
    ok = sum(1 for r in results if r.status == "ok")
    return _emit(args, {
        "command": "sweep",
        "points": len(results),
        "ok": ok,
        "failed": len(results) - ok,
        "config_hash": config_hash(spec),
        "out": spec.out_dir,
        "elapsed_s": round(time.time() - t0, 3),
    })


def _oracle_traj(job):
    params, config, probes = job
    return trajectory_states(params, config, probes)


def _cmd_oracle_check(args) -> int:
    """Trajectory-ensemble density matrix vs dense Lindblad at small N."""
    master = args.seed if args.seed is not None else 0
    params = ModelParams(A=args.A, T=args.T, N=args.N)
    n_periods = 20
    t_end = n_periods * params.T
    probes = [t_end * f for f in (0.2, 0.4, 0.6, 0.8, 1.0)]
    rho0 = np.outer(fock_state(params.N, 0), fock_state(params.N, 0).conj())
    path = integrate_lindblad(rho0, params, t_end, probe_times=probes)

    m_max = max(args.ensembles)
    jobs = []
    for r in range(m_max):
        cfg = TrajectoryConfig.for_params(
            params, transient_periods=0, measure_periods=n_periods,
            seed=derive_seed(master, 0, r, "eta"))
        jobs.append((params, cfg, probes))
    all_states = pmap(_oracle_traj, jobs, threads=args.threads)

    report = {"command": "oracle-check", "A": params.A, "T": params.T,
              "N": params.N, "probe_times": probes, "ensembles": {}}
    passed = True
    means = []
    for m in sorted(args.ensembles):
        tds = []
        for ip in range(len(probes)):
            rho_ens = ensemble_density([all_states[r][ip] for r in range(m)])
            tds.append(trace_distance(rho_ens, path.rhos[ip]))
        bound = 5.0 / np.sqrt(m)
        ok = all(td <= bound for td in tds)
        passed &= ok
        means.append(float(np.mean(tds)))
        report["ensembles"][str(m)] = {
            "trace_distances": tds, "bound": bound, "within_bound": ok,
        }
    if len(args.ensembles) >= 2:
        x = np.log(sorted(args.ensembles))
        y = np.log(means)
        slope = float(np.polyfit(x, y, 1)[0])
        report["scaling_slope"] = slope
        slope_ok = -0.65 <= slope <= -0.35
        report["scaling_ok"] = slope_ok
        passed &= slope_ok
    report["passed"] = passed
    _emit(args, report)
    return 0 if passed else 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {
        "trajectory": _cmd_trajectory,
        "lyapunov": _cmd_lyapunov,
        "meanfield": _cmd_meanfield,
        "wtd": _cmd_wtd,
        "sweep": _cmd_sweep,
        "oracle-check": _cmd_oracle_check,
    }
    try:
        return handlers[args.command](args)
    except (ConfigError, ValueError) as exc:
        print(f"kerrlab: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"kerrlab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
