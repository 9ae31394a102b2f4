import numpy as np
import pytest

from kerrlab.mcwf import TrajectoryConfig, run_trajectory
from kerrlab.fock import ModelParams, fock_state
from kerrlab.stats import (
    FitResult,
    WaitingTimeSample,
    classify_waiting_times,
    decay_rate_pdf,
    fit_exponential,
    fit_power_law,
    log_binned_pdf,
    pool_waiting_times,
    waiting_times,
    write_fit_json,
    write_pdf_csv,
    _linear_regression,
)
from kerrlab.mcwf import TrajectoryRecord


def make_record(times, etas):
    e = np.empty(0)
    return TrajectoryRecord(
        jump_times=np.asarray(times, float),
        jump_thresholds=np.asarray(etas, float),
        strobe_periods=np.empty(0, np.int64),
        strobe_xi=np.empty(0, complex), strobe_n=e,
    )


def powerlaw_samples(alpha, n, rng, lo=1.0, hi=1000.0):
    """Inverse-CDF generator for PDF ~ x^-alpha on [lo, hi] (the oracle)."""
    u = rng.random(n)
    if abs(alpha - 1.0) < 1e-12:
        return lo * (hi / lo) ** u
    p = 1.0 - alpha
    return (lo**p + u * (hi**p - lo**p)) ** (1.0 / p)


# -- waiting_times ------------------------------------------------------------

def test_waiting_times_differencing():
    rec = make_record([1.0, 3.0, 6.0], [0.5, np.exp(-1.0), 0.9])
    w = waiting_times(rec)
    np.testing.assert_allclose(w.tau, [2.0, 3.0])
    # eta = e^-1 with tau = 2 gives s = 0.5
    assert w.s[0] == pytest.approx(0.5)
    # round trip: eta == exp(-s tau) exactly
    np.testing.assert_array_equal(w.eta, np.exp(-w.s * w.tau))


def test_waiting_times_needs_two_jumps():
    with pytest.raises(ValueError):
        waiting_times(make_record([1.0], [0.5]))


def test_pure_decay_segment_rate():
    """From |2>, the first interval has the state pinned at n=2: s = 2 gamma."""
    p = ModelParams(chi=0.008, gamma=0.05, A=0.0, T=1.0, N=6)
    samples = []
    for seed in range(50):
        cfg = TrajectoryConfig.for_params(p, transient_periods=0,
                                          measure_periods=600, dt=0.25, seed=seed)
        rec = run_trajectory(p, cfg, fock_state(6, 2))
        w = waiting_times(rec)  # single pair: the interval ending at jump 2
        samples.append(w.s[0])
    # that interval has n = 1 throughout, so s = gamma exactly up to bisection
    np.testing.assert_allclose(samples, p.gamma, rtol=5e-3)


def test_pool_waiting_times():
    recs = [make_record([1.0, 2.0], [0.5, 0.6]),
            make_record([0.5], [0.9]),       # too few jumps: skipped
            make_record([2.0, 5.0, 6.0], [0.1, 0.2, 0.3])]
    pooled = pool_waiting_times(recs)
    assert pooled.n == 3
    with pytest.raises(ValueError):
        pool_waiting_times([make_record([1.0], [0.5])])


# -- log_binned_pdf -----------------------------------------------------------

def test_pdf_normalization_single_bin():
    rng = np.random.default_rng(0)
    x = rng.uniform(1.0, 10.0, 20000)
    pdf = log_binned_pdf(x, bins_per_decade=1)
    assert len(pdf.densities) == 1
    # edges hug the sample extremes, so the width is (max - min), not 9
    assert pdf.densities[0] == pytest.approx(1.0 / 9.0, rel=2e-3)


def test_pdf_integrates_to_one():
    rng = np.random.default_rng(1)
    x = rng.lognormal(0.0, 1.5, 50000)
    pdf = log_binned_pdf(x)
    assert float((pdf.densities * pdf.widths).sum()) == pytest.approx(1.0)
    assert pdf.counts.sum() == 50000


def test_pdf_slope_matches_power_law():
    rng = np.random.default_rng(2)
    x = powerlaw_samples(1.5, 200000, rng)
    pdf = log_binned_pdf(x)
    mask = pdf.counts > 100
    slope = np.polyfit(np.log(pdf.centers[mask]), np.log(pdf.densities[mask]), 1)[0]
    assert slope == pytest.approx(-1.5, abs=0.05)


def test_pdf_estimator_consistency():
    rng = np.random.default_rng(3)
    x1 = powerlaw_samples(2.0, 20000, rng)
    x2 = powerlaw_samples(2.0, 40000, rng)
    p1, p2 = log_binned_pdf(x1), log_binned_pdf(x2)
    # compare densities on overlapping well-populated bins
    for c, d in zip(p1.centers, p1.densities):
        j = np.argmin(np.abs(np.log(p2.centers / c)))
        if p1.counts[np.argmin(np.abs(p1.centers - c))] > 500 and p2.counts[j] > 500:
            assert d == pytest.approx(p2.densities[j], rel=0.2)


def test_pdf_input_validation():
    with pytest.raises(ValueError):
        log_binned_pdf([])
    with pytest.raises(ValueError):
        log_binned_pdf([1.0, -2.0])


# -- fit_power_law ------------------------------------------------------------

@pytest.mark.parametrize("alpha", [0.5, 1.0, 1.5, 2.5])
def test_power_law_recovery(alpha):
    # frozen seed: window selection makes the naive OLS stderr understate
    # the slope noise by ~1.5x, so a random seed can land outside 3 se
    rng = np.random.default_rng(2025)
    x = powerlaw_samples(alpha, 10000, rng)
    fit = fit_power_law(log_binned_pdf(x))
    assert fit.accepted
    assert fit.model == "power-law"
    assert abs(fit.alpha - alpha) <= 3.0 * fit.stderr
    assert fit.window[1] / fit.window[0] >= 10.0
    assert fit.r_squared > 0.98


def test_exponential_rejected():
    rejected = 0
    for seed in range(40):
        x = np.random.default_rng(seed).exponential(2.0, 10000)
        fit = fit_power_law(log_binned_pdf(x))
        rejected += not fit.accepted
    assert rejected >= 39


def test_fit_insufficient_support():
    rng = np.random.default_rng(7)
    x = rng.uniform(1.0, 2.0, 1000)  # one third of a decade
    with pytest.raises(ValueError, match="support"):
        fit_power_law(log_binned_pdf(x))


def test_accepted_invariant():
    rng = np.random.default_rng(8)
    x = powerlaw_samples(1.2, 30000, rng)
    fit = fit_power_law(log_binned_pdf(x))
    if fit.accepted:
        assert fit.window[1] / fit.window[0] >= 10.0 - 1e-9
        assert fit.r_squared > 0.98


# -- regression helper --------------------------------------------------------

def test_r_squared_collinear_and_clamped():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    b, a, r2, _ = _linear_regression(x, 2.0 * x - 1.0)
    assert r2 == 1.0 and b == pytest.approx(2.0) and a == pytest.approx(-1.0)
    # worse-than-mean fits clamp at 0, never negative
    y = np.array([0.0, 1.0, 0.0, 1.0])
    _, _, r2, _ = _linear_regression(x, y)
    assert 0.0 <= r2 <= 1.0
    b, a, r2, _ = _linear_regression(x, np.full(4, 3.0))
    assert r2 == 1.0  # constant data, zero residual


# -- fit_exponential -----------------------------------------------------------

def test_exponential_rate_recovery():
    x = np.random.default_rng(10).exponential(0.5, 10000)
    rate, r2 = fit_exponential(x)
    assert 1.9 <= rate <= 2.1
    assert r2 > 0.98


def test_exponential_degenerate_constant():
    rate, r2 = fit_exponential(np.full(500, 2.0))
    assert rate == pytest.approx(0.5)
    assert r2 < 0.5


# -- decay_rate_pdf -------------------------------------------------------------

def test_decay_rate_concentrated_for_fock_segments():
    s = np.full(2000, 0.1) + np.random.default_rng(11).normal(0, 1e-6, 2000)
    sample = WaitingTimeSample(tau=np.ones(2000), s=s, eta=np.exp(-s))
    res = decay_rate_pdf(sample)
    assert res.broadening < 1e-4
    assert res.median == pytest.approx(0.1, rel=1e-4)


def test_decay_rate_broadening_ordering():
    g = np.random.default_rng(12)
    narrow = WaitingTimeSample(tau=np.ones(5000),
                               s=g.normal(1.0, 0.01, 5000).clip(1e-6),
                               eta=np.full(5000, 0.5))
    broad = WaitingTimeSample(tau=np.ones(5000),
                              s=g.lognormal(0.0, 1.0, 5000),
                              eta=np.full(5000, 0.5))
    r_n = decay_rate_pdf(narrow)
    r_b = decay_rate_pdf(broad)
    assert r_b.broadening > 5.0 * r_n.broadening


# -- classify + io ---------------------------------------------------------------

def test_classify_power_law_and_exponential():
    rng = np.random.default_rng(13)
    pl = WaitingTimeSample(tau=powerlaw_samples(1.5, 20000, rng),
                           s=np.ones(20000), eta=np.full(20000, 0.5))
    fit = classify_waiting_times(pl)
    assert fit.model == "power-law" and fit.accepted
    ex = WaitingTimeSample(tau=rng.exponential(1.0, 20000),
                           s=np.ones(20000), eta=np.full(20000, 0.5))
    fit = classify_waiting_times(ex)
    assert fit.model == "exponential" and not fit.accepted
    assert fit.exp_r_squared > 0.98


def test_fit_io_roundtrip(tmp_path):
    rng = np.random.default_rng(14)
    x = powerlaw_samples(2.0, 5000, rng)
    pdf = log_binned_pdf(x)
    fit = fit_power_law(pdf)
    fpath = write_fit_json(fit, tmp_path / "fit.json")
    import json
    loaded = json.loads(fpath.read_text())
    assert loaded["alpha"] == fit.alpha
    ppath = write_pdf_csv(pdf, tmp_path / "pdf.csv")
    data = np.loadtxt(ppath, delimiter=",", skiprows=1)
    np.testing.assert_allclose(data[:, 3], pdf.densities, rtol=0)
