import numpy as np
import pytest
from scipy import stats as sps

from kerrlab.fock import ModelParams, fock_state
from kerrlab.mcwf import (
    EtaStream,
    TrajectoryConfig,
    VacuumJumpError,
    apply_jump,
    default_dt,
    drive_value,
    locate_jump_time,
    propagate_segment,
    run_trajectory,
    trajectory_states,
    write_record,
)


def decay_params(N=8, gamma=0.05):
    return ModelParams(chi=0.008, gamma=gamma, A=0.0, T=1.0, N=N)


def decay_config(p, periods=600, seed=0, dt=0.25):
    return TrajectoryConfig.for_params(p, transient_periods=0,
                                       measure_periods=periods, dt=dt, seed=seed)


# -- drive ------------------------------------------------------------------

def test_drive_value_paper_examples():
    p = ModelParams(A=2.5, T=4.0)
    assert drive_value(0.25 * p.T, p) == p.A
    assert drive_value(0.75 * p.T, p) == 0.0
    assert drive_value(3.25 * p.T, p) == p.A
    assert drive_value(0.5 * p.T, p) == p.A       # inclusive right edge
    assert drive_value(0.0, p) == 0.0


def test_default_dt_divides_half_period():
    for p in (ModelParams(A=4.0, T=20.0, N=300), ModelParams(A=0.1, T=0.7, N=50)):
        dt = default_dt(p)
        n = p.T / 2.0 / dt
        assert abs(n - round(n)) < 1e-9
        assert dt <= 0.01 + 1e-15


# -- propagate_segment ------------------------------------------------------

def test_propagate_segment_eigenstate_phase():
    p = ModelParams(chi=0.01, gamma=1e-12, A=1.0, T=2.0, N=6)
    psi = fock_state(6, 3)
    out = propagate_segment(p, psi, t=1.2, dt=0.05)  # second half: F=0
    want = np.exp(-1j * 0.5 * 0.01 * 3 * 2 * 0.05)
    assert out[3] == pytest.approx(want * psi[3], abs=1e-10)


def test_propagate_segment_straddle_error():
    p = ModelParams(A=1.0, T=2.0, N=6)
    with pytest.raises(ValueError, match="straddle"):
        propagate_segment(p, fock_state(6, 0), t=0.95, dt=0.1)
    # exactly landing on the boundary is allowed
    propagate_segment(p, fock_state(6, 0), t=0.9, dt=0.1)


def test_propagate_segment_norm_decay():
    p = ModelParams(chi=0.0, gamma=0.05, A=0.0, T=1.0, N=8)
    psi = fock_state(8, 4)
    out = propagate_segment(p, psi, t=0.6, dt=0.01)
    n2 = float(np.vdot(out, out).real)
    assert n2 == pytest.approx(np.exp(-0.05 * 4 * 0.01), rel=1e-10)


# -- locate_jump_time -------------------------------------------------------

def test_locate_jump_time_analytic():
    p = decay_params(gamma=0.4)
    n = 3
    psi = fock_state(p.N, n)
    dt = 0.5
    eta = np.exp(-0.4 * n * 0.31)  # true crossing at t* = 0.31 within [0, 0.5]
    t_star = locate_jump_time(p, psi, 0.0, dt, eta)
    assert t_star == pytest.approx(0.31, abs=2.5 * dt * 1e-3)


def test_locate_jump_time_boundary_and_no_bracket():
    p = decay_params(gamma=0.4)
    psi = fock_state(p.N, 2)
    t_star = locate_jump_time(p, psi, 0.2, 0.25, eta=1.0)  # already at threshold
    assert t_star == 0.2
    with pytest.raises(ValueError, match="bracket"):
        locate_jump_time(p, psi, 0.0, 0.01, eta=1e-6)


# -- apply_jump --------------------------------------------------------------

def test_apply_jump_single_photon():
    out = apply_jump(fock_state(5, 1))
    assert np.allclose(out, fock_state(5, 0))


def test_apply_jump_superposition():
    c = np.array([0.2, 0.5 - 0.1j, 0.6 + 0.3j])
    psi = np.zeros(6, complex)
    psi[:3] = c
    psi /= np.linalg.norm(psi)
    out = apply_jump(psi)
    want = np.zeros(6, complex)
    want[0] = c[1]
    want[1] = np.sqrt(2.0) * c[2]
    want /= np.linalg.norm(want)
    assert np.allclose(out, want)
    assert np.linalg.norm(out) == pytest.approx(1.0)


def test_apply_jump_vacuum_error():
    with pytest.raises(VacuumJumpError):
        apply_jump(fock_state(4, 0))


# -- run_trajectory ----------------------------------------------------------

def test_dark_vacuum():
    p = decay_params()
    rec = run_trajectory(p, decay_config(p, periods=50))
    assert rec.n_jumps == 0
    assert np.allclose(rec.strobe_xi, 0.0)
    assert np.allclose(rec.strobe_n, 0.0)


def test_pure_decay_exactly_two_jumps_and_rates():
    """From |2>: two jumps; waiting times exponential with rates 2*gamma, gamma."""
    p = decay_params()
    first, second = [], []
    for seed in range(400):
        rec = run_trajectory(p, decay_config(p, seed=seed), fock_state(p.N, 2))
        assert rec.n_jumps == 2
        first.append(rec.jump_times[0])
        second.append(rec.jump_times[1] - rec.jump_times[0])
    ks1 = sps.kstest(first, "expon", args=(0, 1.0 / (2 * p.gamma)))
    ks2 = sps.kstest(second, "expon", args=(0, 1.0 / p.gamma))
    assert ks1.pvalue > 1e-3
    assert ks2.pvalue > 1e-3


def test_reproducibility_same_seed():
    p = ModelParams(chi=0.008, gamma=0.05, A=0.6, T=2.0, N=24)
    cfg = TrajectoryConfig.for_params(p, transient_periods=5, measure_periods=40,
                                      seed=123)
    a = run_trajectory(p, cfg)
    b = run_trajectory(p, cfg)
    assert np.array_equal(a.jump_times, b.jump_times)
    assert np.array_equal(a.jump_thresholds, b.jump_thresholds)
    assert np.array_equal(a.strobe_xi, b.strobe_xi)


def test_thresholds_match_eta_stream():
    p = ModelParams(chi=0.008, gamma=0.05, A=0.6, T=2.0, N=24)
    cfg = TrajectoryConfig.for_params(p, transient_periods=0, measure_periods=40,
                                      seed=314)
    rec = run_trajectory(p, cfg)
    stream = EtaStream(314)
    want = [stream[k] for k in range(rec.n_jumps)]
    assert np.allclose(rec.jump_thresholds, want, rtol=0, atol=0)


def test_norm_derivative_matches_emission_rate():
    """d|psi|^2/dt = -gamma n(t) |psi|^2 along jump-free stretches."""
    p = ModelParams(chi=0.008, gamma=0.05, A=0.8, T=2.0, N=30)
    cfg = TrajectoryConfig.for_params(p, transient_periods=0, measure_periods=2,
                                      seed=5, dt=0.002)
    rec = run_trajectory(p, cfg, collect_n_series=True, n_series_stride=1)
    t, n, n2 = rec.n_series.T
    # central differences away from jumps and from the quench switching
    # points (where the derivative of n has a kink); rel/abs cover the
    # O(dt^2) finite-difference curvature error, far above integrator error
    half = p.T / 2.0
    checked = 0
    for k in range(1, len(t) - 1):
        if rec.n_jumps and np.min(np.abs(rec.jump_times - t[k])) < 2.5 * cfg.dt:
            continue
        if abs(t[k] - half * round(t[k] / half)) < 1.5 * cfg.dt:
            continue
        deriv = (n2[k + 1] - n2[k - 1]) / (t[k + 1] - t[k - 1])
        want = -p.gamma * n[k] * n2[k]
        assert deriv == pytest.approx(want, rel=1e-3, abs=2e-6)
        checked += 1
    assert checked > 1000


def test_zeta_distribution_exponential():
    """Consumed thresholds: zeta = -ln(eta) must be Exp(1) distributed."""
    p = ModelParams(chi=0.008, gamma=0.05, A=1.2, T=2.0, N=40)
    zetas = []
    for seed in range(30):
        cfg = TrajectoryConfig.for_params(p, transient_periods=0,
                                          measure_periods=120, seed=seed)
        rec = run_trajectory(p, cfg)
        zetas.append(-np.log(rec.jump_thresholds))
    zeta = np.concatenate(zetas)
    assert len(zeta) > 1000
    ks = sps.kstest(zeta, "expon")
    assert ks.pvalue > 1e-3


def test_truncation_guard_flags():
    p = ModelParams(chi=0.008, gamma=0.05, A=2.0, T=2.0, N=12)  # far too small
    cfg = TrajectoryConfig.for_params(p, transient_periods=0, measure_periods=10,
                                      seed=2)
    with pytest.warns(RuntimeWarning, match="truncation"):
        rec = run_trajectory(p, cfg)
    assert any("truncation" in f for f in rec.flags)


def test_config_validation():
    p = ModelParams(A=1.0, T=2.0, N=8)
    with pytest.raises(ValueError):
        TrajectoryConfig(t_transient=0.0, t_measure=2.0, dt=0.0,
                         jump_time_tol=1e-5, seed=0)
    with pytest.raises(ValueError):
        TrajectoryConfig(t_transient=0.0, t_measure=2.0, dt=0.01,
                         jump_time_tol=0.02, seed=0)
    cfg = TrajectoryConfig(t_transient=2.0, t_measure=2.0, dt=0.3,
                           jump_time_tol=1e-4, seed=0)
    with pytest.raises(ValueError, match="divide"):
        cfg.steps_per_half(p)
    cfg2 = TrajectoryConfig(t_transient=1.0, t_measure=2.0, dt=0.25,
                            jump_time_tol=1e-4, seed=0)
    with pytest.raises(ValueError, match="multiple"):
        cfg2.periods(p)


def test_strobe_offset_sampling():
    p = ModelParams(chi=0.008, gamma=0.05, A=0.7, T=2.0, N=24)
    base = TrajectoryConfig.for_params(p, transient_periods=2, measure_periods=12,
                                       seed=9)
    half = TrajectoryConfig.for_params(p, transient_periods=2, measure_periods=12,
                                       seed=9, strobe_offset=p.T / 2.0)
    a = run_trajectory(p, base)
    b = run_trajectory(p, half)
    assert len(a.strobe_xi) == len(b.strobe_xi) == 12
    # same realization, different sampling phase
    assert np.array_equal(a.jump_times, b.jump_times)
    assert not np.allclose(a.strobe_xi, b.strobe_xi)


def test_trajectory_states_probes():
    p = ModelParams(chi=0.008, gamma=0.05, A=0.5, T=2.0, N=16)
    cfg = TrajectoryConfig.for_params(p, transient_periods=0, measure_periods=4,
                                      seed=21)
    states = trajectory_states(p, cfg, [0.0, 1.0, 4.0])
    assert len(states) == 3
    assert np.allclose(states[0], fock_state(16, 0))
    assert 0 < np.vdot(states[1], states[1]).real <= 1.0 + 1e-12


def test_write_record_roundtrip(tmp_path):
    p = ModelParams(chi=0.008, gamma=0.05, A=0.6, T=2.0, N=20)
    cfg = TrajectoryConfig.for_params(p, transient_periods=0, measure_periods=30,
                                      seed=77)
    rec = run_trajectory(p, cfg)
    jumps_csv, strobe_csv = write_record(rec, p, cfg, tmp_path)
    jumps = np.loadtxt(jumps_csv, delimiter=",", skiprows=1)
    assert jumps.shape[0] == rec.n_jumps
    np.testing.assert_allclose(jumps[:, 0], rec.jump_times, rtol=0)
    strobe = np.loadtxt(strobe_csv, delimiter=",", skiprows=1)
    np.testing.assert_allclose(strobe[:, 1], rec.strobe_xi.real, rtol=0)
    meta = (tmp_path / "trajectory_meta.json").read_text()
    assert '"seed": 77' in meta
