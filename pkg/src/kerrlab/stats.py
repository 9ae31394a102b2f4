"""Waiting-time and norm-decay-rate statistics with model fitting.

Waiting times tau_k between photon emissions and the effective decay rates
s_k = -ln(eta_k)/tau_k come straight from trajectory records.  PDFs are
estimated on logarithmic (tau) or linear (s) bins; power-law candidates are
fit by least squares on the log-log binned PDF over an exhaustively searched
window, accepted only when the window spans at least one decade with
R^2 > 0.98.  Exponential fits use the maximum-likelihood rate with R^2
measured on the log-linear binned PDF.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mcwf import TrajectoryRecord

__all__ = [
    "WaitingTimeSample",
    "PdfEstimate",
    "FitResult",
    "DecayRateResult",
    "waiting_times",
    "pool_waiting_times",
    "log_binned_pdf",
    "fit_power_law",
    "fit_exponential",
    "decay_rate_pdf",
    "classify_waiting_times",
    "write_pdf_csv",
    "write_fit_json",
]

R2_THRESHOLD = 0.98
MIN_DECADES = 1.0


@dataclass
class WaitingTimeSample:
    """Aligned (tau_k, s_k, eta_k) triples; s_k = -ln(eta_k)/tau_k exactly."""

    tau: np.ndarray
    s: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        if not (len(self.tau) == len(self.s) == len(self.eta)):
            raise ValueError("tau, s, eta must be aligned")

    @property
    def n(self) -> int:
        return len(self.tau)


@dataclass
class PdfEstimate:
    """Histogram density: sum(density * width) = 1 over occupied bins."""

    edges: np.ndarray
    centers: np.ndarray
    densities: np.ndarray
    counts: np.ndarray
    n_total: int

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)


@dataclass
class FitResult:
    """Power-law fit verdict plus regression detail for audit.

    accepted refers to the power-law hypothesis: a window of at least one
    decade with R^2 above the gate.  model is "power-law" when accepted,
    otherwise "exponential" if the exponential fit clears the same R^2 bar,
    else "rejected".
    """

    alpha: float
    window: tuple[float, float]
    r_squared: float
    accepted: bool
    model: str
    slope: float = 0.0
    intercept: float = 0.0
    stderr: float = float("nan")
    n_points: int = 0
    n_samples: int = 0
    exp_rate: float = float("nan")
    exp_r_squared: float = float("nan")
    bins_per_decade: int = 10

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "window": list(self.window),
            "r_squared": self.r_squared,
            "accepted": self.accepted,
            "model": self.model,
            "slope": self.slope,
            "intercept": self.intercept,
            "stderr": self.stderr,
            "n_points": self.n_points,
            "n_samples": self.n_samples,
            "exp_rate": self.exp_rate,
            "exp_r_squared": self.exp_r_squared,
            "bins_per_decade": self.bins_per_decade,
        }


@dataclass
class DecayRateResult:
    """Linear-binned PDF of the decay rates and its broadening diagnostic."""

    pdf: PdfEstimate
    broadening: float
    median: float
    iqr: float


def waiting_times(record: TrajectoryRecord) -> WaitingTimeSample:
    """Consecutive jump-time differences with their consumed thresholds.

    The threshold stored with jump k governed the decay interval ending at
    jump k, so (tau_k, eta_k) pairs are exact and s_k = -ln(eta_k)/tau_k.
    The first recorded jump has no recorded predecessor and is dropped.
    """
    if record.n_jumps < 2:
        raise ValueError("need at least 2 jumps for waiting times")
    tau = np.diff(record.jump_times)
    eta = record.jump_thresholds[1:]
    if np.any(tau <= 0):
        raise ValueError("jump times must be strictly increasing")
    return WaitingTimeSample(tau=tau, s=-np.log(eta) / tau, eta=eta.copy())


def pool_waiting_times(records) -> WaitingTimeSample:
    """Pool per-trajectory waiting times of statistically equivalent runs."""
    taus, ss, etas = [], [], []
    for rec in records:
        if rec.n_jumps >= 2:
            w = waiting_times(rec)
            taus.append(w.tau)
            ss.append(w.s)
            etas.append(w.eta)
    if not taus:
        raise ValueError("no trajectory contributed 2 or more jumps")
    return WaitingTimeSample(
        tau=np.concatenate(taus), s=np.concatenate(ss), eta=np.concatenate(etas)
    )


def log_binned_pdf(samples, bins_per_decade: int = 10) -> PdfEstimate:
    """Histogram on logarithmically spaced bins, normalized as a density."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise ValueError("empty sample")
    if np.any(x <= 0):
        raise ValueError("samples must be positive")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        hi = lo * (1.0 + 1e-9)
    n_bins = max(1, int(math.ceil(math.log10(hi / lo) * bins_per_decade - 1e-9)))
    edges = lo * 10.0 ** (np.arange(n_bins + 1) / bins_per_decade)
    edges[-1] = max(edges[-1], hi * (1.0 + 1e-12))
    counts, _ = np.histogram(x, bins=edges)
    widths = np.diff(edges)
    densities = counts / (x.size * widths)
    centers = np.sqrt(edges[:-1] * edges[1:])
    return PdfEstimate(edges=edges, centers=centers, densities=densities,
                       counts=counts, n_total=x.size)


def _linear_regression(x: np.ndarray, y: np.ndarray):
    """OLS fit y = a + b x; returns (b, a, r_squared, stderr_b).

    R^2 is clamped to [0, 1]: collinear data gives exactly 1, fits worse
    than the mean give 0.
    """
    n = len(x)
    xm, ym = x.mean(), y.mean()
    sxx = float(((x - xm) ** 2).sum())
    if sxx == 0.0:
        raise ValueError("degenerate abscissa")
    b = float(((x - xm) * (y - ym)).sum() / sxx)
    a = ym - b * xm
    resid = y - (a + b * x)
    ss_res = float((resid**2).sum())
    ss_tot = float(((y - ym) ** 2).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    stderr = math.sqrt(ss_res / (n - 2) / sxx) if n > 2 else float("nan")
    return b, a, r2, stderr


def fit_power_law(pdf: PdfEstimate, *, r2_threshold: float = R2_THRESHOLD,
                  min_decades: float = MIN_DECADES) -> FitResult:
    """Exhaustive window search for a power-law segment of the binned PDF.

    Windows are contiguous runs of occupied bins whose edge span is at least
    min_decades; within each, ordinary least squares on (log tau, log
    density).  The accepted window maximizes R^2 (ties broken by width).
    When nothing passes, the best-R^2 qualifying window is still reported
    with accepted=False and model="rejected".
    """
    occupied = pdf.counts > 0
    n = len(pdf.centers)
    best = None           # (r2, width, result tuple)
    best_any = None
    i = 0
    while i < n:
        if not occupied[i]:
            i += 1
            continue
        j = i
        while j < n and occupied[j]:
            j += 1
        # contiguous occupied run [i, j)
        for a in range(i, j):
            for b in range(a + 1, j):
                span = math.log10(pdf.edges[b + 1] / pdf.edges[a])
                if span < min_decades - 1e-12:
                    continue
                xs = np.log(pdf.centers[a:b + 1])
                ys = np.log(pdf.densities[a:b + 1])
                slope, intercept, r2, stderr = _linear_regression(xs, ys)
                width = b - a
                cand = (r2, width, a, b, slope, intercept, stderr)
                if best_any is None or (r2, width) > best_any[:2]:
                    best_any = cand
                if r2 > r2_threshold and (best is None or (r2, width) > best[:2]):
                    best = cand
        i = j
    if best is None and best_any is None:
        raise ValueError("insufficient support: no window spans the minimum decades")
    chosen = best if best is not None else best_any
    r2, _, a, b, slope, intercept, stderr = chosen
    return FitResult(
        alpha=-slope,
        window=(float(pdf.edges[a]), float(pdf.edges[b + 1])),
        r_squared=r2,
        accepted=best is not None,
        model="power-law" if best is not None else "rejected",
        slope=slope,
        intercept=intercept,
        stderr=stderr,
        n_points=b - a + 1,
        n_samples=pdf.n_total,
        bins_per_decade=round(1.0 / math.log10(pdf.edges[1] / pdf.edges[0])),
    )


def fit_exponential(samples, *, bins_per_decade: int = 10,
                    min_count: int = 5) -> tuple[float, float]:
    """Maximum-likelihood exponential rate and its log-linear goodness.

    rate = 1/mean; R^2 comes from a linear regression of log density on tau
    over the log-binned PDF, restricted to bins with at least min_count
    entries so the sparse far tail does not drown the diagnostic.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    rate = 1.0 / float(x.mean())
    try:
        pdf = log_binned_pdf(x, bins_per_decade)
    except ValueError:
        return rate, 0.0
    mask = pdf.counts >= min_count
    if mask.sum() < 3:
        return rate, 0.0
    try:
        _, _, r2, _ = _linear_regression(pdf.centers[mask],
                                         np.log(pdf.densities[mask]))
    except ValueError:
        return rate, 0.0
    return rate, r2


def decay_rate_pdf(sample: WaitingTimeSample, bins: int = 50) -> DecayRateResult:
    """Linear-binned PDF of the per-interval decay rates s_k.

    The broadening diagnostic is the interquartile range over the median;
    it grows by an order of magnitude when the dynamics turns chaotic.
    """
    s = np.asarray(sample.s, dtype=float)
    if s.size == 0:
        raise ValueError("empty sample")
    lo, hi = float(s.min()), float(np.quantile(s, 0.999))
    if hi <= lo:
        hi = lo * (1.0 + 1e-9) + 1e-30
    counts, edges = np.histogram(s, bins=bins, range=(lo, hi))
    widths = np.diff(edges)
    inside = int(counts.sum())
    densities = counts / (inside * widths) if inside else counts.astype(float)
    q1, q2, q3 = np.quantile(s, [0.25, 0.5, 0.75])
    iqr = float(q3 - q1)
    pdf = PdfEstimate(edges=edges, centers=0.5 * (edges[:-1] + edges[1:]),
                      densities=densities, counts=counts, n_total=s.size)
    return DecayRateResult(pdf=pdf, broadening=iqr / q2 if q2 > 0 else float("inf"),
                           median=float(q2), iqr=iqr)


def classify_waiting_times(sample: WaitingTimeSample, *,
                           bins_per_decade: int = 10) -> FitResult:
    """Full per-point verdict: power-law window search, exponential fallback."""
    pdf = log_binned_pdf(sample.tau, bins_per_decade)
    try:
        fit = fit_power_law(pdf)
    except ValueError:
        fit = FitResult(alpha=float("nan"), window=(float("nan"), float("nan")),
                        r_squared=0.0, accepted=False, model="rejected",
                        n_samples=sample.n, bins_per_decade=bins_per_decade)
    rate, exp_r2 = fit_exponential(sample.tau, bins_per_decade=bins_per_decade)
    fit.exp_rate = rate
    fit.exp_r_squared = exp_r2
    if not fit.accepted:
        fit.model = "exponential" if exp_r2 > R2_THRESHOLD else "rejected"
    return fit


def write_pdf_csv(pdf: PdfEstimate, path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w") as f:
        f.write("lo,hi,center,density,count\n")
        for lo, hi, c, d, k in zip(pdf.edges[:-1], pdf.edges[1:], pdf.centers,
                                   pdf.densities, pdf.counts):
            f.write(f"{lo:.17e},{hi:.17e},{c:.17e},{d:.17e},{int(k)}\n")
    return out


def write_fit_json(fit: FitResult, path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(fit.to_dict(), indent=2, sort_keys=True))
    return out
