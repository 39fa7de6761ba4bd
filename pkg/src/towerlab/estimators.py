"""Statistical machinery shared by the experiments: tail-exponent fits,
moment trackers, autocovariance and long-run variance, KS tests, and the
maximal/Rosenthal inequality checks, plus the exact finite-state mixing
coefficient used in the coupling-inequality test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .tower import TowerSpec, transition_matrix, stationary_nu


class DegenerateRange(ValueError):
    pass


class TooFewSamples(ValueError):
    pass


class StateSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    standard_error: float
    fit_range: tuple
    r_squared: float
    n_points: int = 0


@dataclass(frozen=True)
class VarianceEstimate:
    c2_series: float
    c2_growth: float
    se_series: float
    se_growth: float
    agreement_gap: float
    lag: int


def _loglog_fit(x, y, fit_range, min_points=8) -> ExponentFit:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    keep = (y > 0) & (x > 0)
    if fit_range is not None:
        keep &= (x >= fit_range[0]) & (x <= fit_range[1])
    if keep.sum() < min_points:
        raise DegenerateRange(f"only {int(keep.sum())} usable points")
    lx, ly = np.log(x[keep]), np.log(y[keep])
    res = stats.linregress(lx, ly)
    rng = (float(x[keep].min()), float(x[keep].max()))
    return ExponentFit(float(res.slope), float(res.intercept),
                       float(res.stderr), rng, float(res.rvalue**2),
                       int(keep.sum()))


def tail_exponent(ns, tails=None, fit_range=None, samples=None,
                  censored=None) -> ExponentFit:
    """Log-log regression of a tail function against n.

    Either pass exact tail values (tails aligned with ns) or raw samples;
    in the latter case the empirical tail P(X >= n) is formed, with
    censored observations (value recorded at the censoring horizon)
    contributing as lower bounds at every n below the horizon.
    """
    ns = np.asarray(ns, dtype=np.float64)
    if tails is None:
        if samples is None:
            raise ValueError("need tails or samples")
        samples = np.asarray(samples, dtype=np.float64)
        if censored is None:
            censored = np.zeros(samples.shape, dtype=bool)
        total = samples.size
        tails = np.array([
            (np.sum(samples[~censored] >= n) + np.sum(censored)) / total
            for n in ns
        ])
    return _loglog_fit(ns, tails, fit_range)


def moment_tracker(samples, phi):
    """Running mean of phi(sample) with a stability verdict.

    Verdict is "Stable" when the running estimate varies by less than 5%
    (relative to its final value) over the last half of the samples.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 1000:
        raise TooFewSamples("moment tracker needs >= 1000 samples")
    vals = phi(samples)
    running = np.cumsum(vals) / np.arange(1, vals.size + 1)
    tail = running[vals.size // 2:]
    final = running[-1]
    spread = (tail.max() - tail.min()) / abs(final) if final != 0 else 0.0
    return {
        "estimate": float(final),
        "spread": float(spread),
        "verdict": "Stable" if spread < 0.05 else "Diverging",
        "running": running,
    }


def _acf_rows(x, lags):
    """Per-row autocovariances of a centered 2-D array via FFT."""
    n = x.shape[1]
    kmax = int(lags.max())
    m = 1 << int(np.ceil(np.log2(n + kmax + 1)))
    fx = np.fft.rfft(x, m, axis=1)
    acf = np.fft.irfft(fx * np.conj(fx), m, axis=1)[:, : kmax + 1]
    acf /= (n - np.arange(kmax + 1))[None, :]
    return acf[:, lags]


def autocovariance(series, lags):
    """Stationary autocovariances from an (R, n) array of replica series.

    Uses FFT per replica; returns (cov, stderr) arrays aligned with lags,
    with the standard error taken across replicas (or across 16 segments
    when only one replica is given).
    """
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    r, n = series.shape
    if n < 2:
        raise ValueError("series too short")
    lags = np.asarray(lags, dtype=np.int64)
    x = series - series.mean()
    per_rep = _acf_rows(x, lags)
    cov = per_rep.mean(axis=0)
    if r > 1:
        se = per_rep.std(axis=0, ddof=1) / math.sqrt(r)
    else:
        kmax = int(lags.max())
        nb = min(16, n // max(2 * (kmax + 1), 2))
        if nb >= 2:
            seg = n // nb
            segs = _acf_rows(x[0, : nb * seg].reshape(nb, seg), lags)
            se = segs.std(axis=0, ddof=1) / math.sqrt(nb)
        else:
            se = np.full(cov.shape, np.nan)
    return cov, se


def default_truncation_lag(cov, se, min_lag=16):
    """First lag after which |cov| < 2 se for 5 consecutive lags."""
    small = np.abs(cov) < 2.0 * se
    run = 0
    for k in range(len(cov)):
        run = run + 1 if small[k] else 0
        if run >= 5 and k >= min_lag:
            return k - 4
    return len(cov) - 1


def variance_c2(series, L=None, max_lag=2048) -> VarianceEstimate:
    """Long-run variance two ways: truncated covariance series vs Var(S_n)/n.

    series is an (R, n) array of centered stationary values; L is the series
    truncation lag (defaults to the first lag where the covariances are
    statistically indistinguishable from zero for 5 consecutive lags).
    """
    series = np.atleast_2d(np.asarray(series, dtype=np.float64))
    r, n = series.shape
    kmax = min(max_lag, n // 4)
    lags = np.arange(kmax + 1)
    cov, se = autocovariance(series, lags)
    if L is None:
        L = default_truncation_lag(cov, se)
    L = int(min(L, kmax))
    c2_series = float(cov[0] + 2.0 * cov[1: L + 1].sum())
    se_series = float(math.sqrt(se[0] ** 2 + 4.0 * np.sum(se[1: L + 1] ** 2)))
    if r == 1:
        # Single long series: use non-overlapping segments as replicas.
        nseg = 32
        seg = n // nseg
        chunks = series[0, : nseg * seg].reshape(nseg, seg)
        sums = chunks.sum(axis=1) / math.sqrt(seg)
        r_eff = nseg
    else:
        sums = series.sum(axis=1) / math.sqrt(n)
        r_eff = r
    sums = sums - sums.mean()
    sq = sums**2
    c2_growth = float(sq.mean())
    se_growth = float(sq.std(ddof=1) / math.sqrt(r_eff)) if r_eff > 1 else float("nan")
    return VarianceEstimate(c2_series, c2_growth, se_series, se_growth,
                            abs(c2_series - c2_growth), L)


def ks_test(samples, cdf, args=()):
    """Two-sided KS statistic and asymptotic p-value."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 50:
        raise TooFewSamples("KS test needs >= 50 samples")
    res = stats.kstest(samples, cdf, args=args)
    return float(res.statistic), float(res.pvalue)


def maximal_inequality_check(max_abs_s, n, x_grid, r, tail_fn):
    """Empirical P(max_k |S_k| >= 5x) against the shape of the bound
    (n/x)(x^{-r} + P(T >= C x)) + (1 + kappa x^2/n)^{-r/2}.

    The bound's constants are nonconstructive; the scale A and kappa are
    fitted at the smallest grid point and frozen (C = 1), then the bound is
    tested at every larger x.  Returns one verdict entry per x.
    """
    max_abs_s = np.asarray(max_abs_s, dtype=np.float64)
    x_grid = np.asarray(x_grid, dtype=np.float64)
    reps = max_abs_s.size

    def shape(x, kappa):
        return (n / x) * (x ** (-r) + tail_fn(x)) \
            + (1.0 + kappa * x * x / n) ** (-r / 2.0)

    x0 = float(x_grid[0])
    kappa = n / (x0 * x0)  # makes the Gaussian-regime term O(1) at x0
    lhs0 = float(np.mean(max_abs_s >= 5.0 * x0))
    a = lhs0 / shape(x0, kappa) if shape(x0, kappa) > 0 else 1.0
    a = max(a, 1e-12)
    entries = []
    for x in x_grid:
        lhs = float(np.mean(max_abs_s >= 5.0 * x))
        se = math.sqrt(max(lhs * (1 - lhs), 1.0 / reps) / reps)
        rhs = float(a * shape(float(x), kappa))
        entries.append({
            "x": float(x),
            "empirical": lhs,
            "stderr": se,
            "bound": rhs,
            "ok": bool(lhs <= rhs + 4.0 * se),
        })
    return {"entries": entries, "scale": float(a), "kappa": float(kappa),
            "all_ok": all(e["ok"] for e in entries)}


def rosenthal_check(moments_by_n, p):
    """E max_{k<=n}|S_k|^p across an n grid, compared to the n^{p/2} scale.

    moments_by_n maps n to an array of per-replica max_{k<=n}|S_k| values.
    Verdict "Bounded" when the ratio to n^{p/2} at the largest n does not
    exceed the next-largest by more than 20%.
    """
    if p < 2:
        raise ValueError("p must be >= 2")
    ns = sorted(moments_by_n)
    rows = []
    for n in ns:
        m = np.asarray(moments_by_n[n], dtype=np.float64) ** p
        rows.append({
            "n": int(n),
            "moment": float(m.mean()),
            "stderr": float(m.std(ddof=1) / math.sqrt(m.size)),
            "ratio": float(m.mean() / n ** (p / 2.0)),
        })
    verdict = "Undetermined"
    if len(rows) >= 2:
        verdict = ("Bounded"
                   if rows[-1]["ratio"] <= 1.2 * rows[-2]["ratio"]
                   else "Growing")
    return {"rows": rows, "verdict": verdict}


def tv_mixing_finite(spec: TowerSpec, n_max: int, max_states: int = 64):
    """Exact absolute-regularity coefficients beta(n) of the chain.

    For a stationary Markov chain the coefficient reduces to
    beta(n) = (1/2) sum_x nu(x) || P^n(x, .) - nu ||_v,
    which is the quantity bounded by P(T >= n) for the shared-innovation
    meeting time T.  Computed by exact dense matrix powers, hence the
    state-count cap.
    """
    s = spec.n_states
    if s > max_states:
        raise StateSpaceTooLarge(f"{s} states exceeds the cap {max_states}")
    nu = stationary_nu(spec)
    mat = transition_matrix(spec)
    betas = np.empty(n_max + 1)
    a = np.eye(s)
    for n in range(n_max + 1):
        betas[n] = float(nu @ (0.5 * np.abs(a - nu[None, :]).sum(axis=1)))
        if n < n_max:
            a = a @ mat
    return betas


def coupling_inequality_report(spec: TowerSpec, t_samples, n_max: int = 20):
    """Exact beta(n) vs the empirical meeting-time tail with error budget.

    t_samples are meeting times with -1 marking censored runs (these count
    in every tail, making the empirical tail an over-estimate, which is the
    conservative direction for the inequality).
    """
    t = np.asarray(t_samples, dtype=np.int64)
    reps = t.size
    betas = tv_mixing_finite(spec, n_max)
    entries = []
    for n in range(n_max + 1):
        tail = float(np.mean((t >= n) | (t < 0)))
        se = math.sqrt(max(tail * (1 - tail), 1.0 / reps) / reps)
        entries.append({
            "n": n,
            "beta": float(betas[n]),
            "tail": tail,
            "stderr": se,
            "ok": bool(betas[n] <= tail + 4.0 * se),
        })
    return {"entries": entries, "all_ok": all(e["ok"] for e in entries)}
