"""Acceptance suite: one test and one printed pass/fail line per criterion.

Each criterion exercises the public API end to end at the stated budgets and
tolerances.  Expensive Monte Carlo artifacts are shared through the session
fixtures in conftest.py.
"""

import math

import numpy as np

import _acceptance_log
from towerlab import asip, cli, estimators, maps, symbolic, tower
from towerlab.asip import BlockScheme, level_indicator_observable


def _report(num, name, ok, detail):
    line = f"[criterion {num:02d}] {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    _acceptance_log.LINES.append(line)
    print(line)
    assert ok, line


# ---------------------------------------------------------------------------

def test_criterion_01_return_tail_exponent(lsv03, lsv04):
    details = []
    ok = True
    for model in (lsv03, lsv04):
        part = maps.partition(model, 4096)
        ns = np.arange(1, 4097)
        tails = np.array([part.tail(int(n)) for n in ns])
        fit = estimators.tail_exponent(ns, tails, fit_range=(32, 4096))
        target = -1.0 / model.gamma
        ok &= abs(fit.slope - target) <= 0.1 * abs(target)
        details.append(f"gamma={model.gamma}: slope {fit.slope:.3f} "
                       f"target {target:.3f}")
    _report(1, "return-time tail exponent", ok, "; ".join(details))


def test_criterion_02_correlation_decay(lsv04):
    obs = maps.make_observable("hoelder_power", lsv04, seed=11, exponent=0.5)
    series = maps.observable_series(lsv04, obs, master_seed=12, n_reps=32,
                                    n_steps=1_000_000)
    lags = np.unique(np.round(np.geomspace(4, 512, 48)).astype(np.int64))
    cov, _se = estimators.autocovariance(series, lags)
    fit = estimators.tail_exponent(lags, np.where(cov > 0, cov, np.nan),
                                   fit_range=(8, 512))
    ok = fit.slope <= -1.2
    _report(2, "correlation decay", ok,
            f"slope {fit.slope:.3f} <= -1.2 over lags [8, 512]")


def test_criterion_03_clt(lsv03):
    obs = maps.make_observable("hoelder_power", lsv03, seed=21, exponent=0.5)
    sums = maps.birkhoff_sums(lsv03, obs, 22, n_reps=10_000, n=10_000)
    z = (sums - sums.mean()) / sums.std(ddof=1)
    ks, _p = estimators.ks_test(z, "norm")
    ok = ks < 0.05
    _report(3, "central limit theorem", ok,
            f"KS {ks:.4f} < 0.05 at n=1e4, 1e4 replicas, gamma=0.3")


def test_criterion_04_variance_consistency(lsv03, iid_spec):
    details = []
    ok = True
    obs = maps.make_observable("hoelder_power", lsv03, seed=31, exponent=0.5)
    series = maps.observable_series(lsv03, obs, 32, n_reps=64,
                                    n_steps=100_000)
    est = estimators.variance_c2(series)
    gap_ok = est.agreement_gap <= 3.0 * math.hypot(est.se_series,
                                                   est.se_growth)
    ok &= gap_ok
    details.append(f"lsv gamma=0.3 gap {est.agreement_gap:.4f}")
    # i.i.d. tower fixture
    w_obs = asip.word_indicator_observable(iid_spec, 0)
    offs = iid_spec.offsets
    rows = []
    for r in range(64):
        states, _ = tower.run_chain(iid_spec, "nu", seed=33_000 + r, n=8192)
        rows.append(w_obs.u[offs[states[1:, 0]] + states[1:, 1]])
    est2 = estimators.variance_c2(np.array(rows))
    gap_ok2 = est2.agreement_gap <= 3.0 * math.hypot(est2.se_series,
                                                     est2.se_growth)
    ok &= gap_ok2
    details.append(f"iid fixture gap {est2.agreement_gap:.4f}")
    _report(4, "limit-variance consistency", ok, "; ".join(details))


def test_criterion_05_meeting_time_moments(meeting_samples_deep):
    t, _ts = meeting_samples_deep
    censored = float(np.mean(t < 0))
    kept = t[t >= 0].astype(float)
    ns = np.unique(np.round(np.geomspace(8, 128, 24)).astype(np.int64))
    fit = estimators.tail_exponent(ns, samples=kept)
    slope_ok = abs(fit.slope - (-2.0)) <= 0.15 * 2.0
    low = estimators.moment_tracker(kept, lambda x: x ** 1.9)
    high = estimators.moment_tracker(kept, lambda x: x ** 2.5)
    ok = slope_ok and low["verdict"] == "Stable" \
        and high["verdict"] == "Diverging" and censored < 1e-3
    _report(5, "meeting-time tail and moments", ok,
            f"slope {fit.slope:.3f}, E[T^1.9] {low['verdict']}, "
            f"E[T^2.5] {high['verdict']}, censored {censored:.2e}")


def test_criterion_06_coupling_inequality(small_spec):
    two_word = tower.validate_spec([{"id": 0, "h": 1, "weight": 0.6},
                                    {"id": 1, "h": 2, "weight": 0.4}])
    ok = True
    details = []
    for label, spec in (("three-word", small_spec), ("two-word", two_word)):
        t, _ = tower.meeting_times(spec, master_seed=41, n_runs=200_000,
                                   n_max=1000)
        out = estimators.coupling_inequality_report(spec, t, n_max=20)
        ok &= out["all_ok"]
        details.append(f"{label} all_ok={out['all_ok']}")
    _report(6, "coupling inequality beta(n) <= P(T >= n)", ok,
            "; ".join(details))


def test_criterion_07_projection_lipschitz(doubling, doubling_decomposition):
    spec, letters = doubling_decomposition.to_tower_spec()
    violations = 0
    for i in range(10_000):
        a, _ = tower.run_chain(spec, "nu", seed=50_000 + 2 * i, n=60)
        b, _ = tower.run_chain(spec, "nu", seed=50_001 + 2 * i, n=60)
        s, d = tower.separation(a, b, lam=2)
        lo_a, hi_a, _ = symbolic.project(doubling, a, letters, tol=1e-9)
        lo_b, hi_b, _ = symbolic.project(doubling, b, letters, tol=1e-9)
        gap = abs(0.5 * (lo_a + hi_a) - 0.5 * (lo_b + hi_b))
        if gap > d + (hi_a - lo_a) + (hi_b - lo_b):
            violations += 1
    overlap_failures = 0
    for i in range(1000):
        states, _ = tower.run_chain(spec, "nu", seed=90_000 + i, n=80)
        lo0, hi0, _ = symbolic.project(doubling, states, letters, tol=1e-9)
        lo1, hi1, _ = symbolic.project(doubling, states[1:], letters,
                                       tol=1e-9)
        x = maps.step(doubling, 0.5 * (lo0 + hi0))
        if not (lo1 - 1e-6 <= x <= hi1 + 1e-6):
            overlap_failures += 1
    ok = violations == 0 and overlap_failures == 0
    _report(7, "projection Lipschitz bound and semiconjugacy", ok,
            f"{violations}/10000 metric violations, "
            f"{overlap_failures}/1000 overlap failures")


def test_criterion_08_disintegration(doubling, lsv04, doubling_decomposition,
                                     lsv04_decomposition):
    res_d = symbolic.pushforward_test(doubling, doubling_decomposition,
                                      seed=61, n_paths=100_000)
    ok_d = res_d["ks_stat"] < 0.01 \
        and doubling_decomposition.residual_mass <= 1e-12
    res_l = symbolic.pushforward_test(lsv04, lsv04_decomposition, seed=62,
                                      n_paths=100_000)
    se = math.sqrt(0.25 / 100_000)
    ok_l = res_l["ks_stat"] <= res_l["residual_mass"] + 4 * se
    ok_p = max(res_d["product_identity_max_err"],
               res_l["product_identity_max_err"]) <= 1e-12
    ok = ok_d and ok_l and ok_p
    _report(8, "disintegration pushforward", ok,
            f"doubling KS {res_d['ks_stat']:.4f} (residual 0), "
            f"lsv KS {res_l['ks_stat']:.4f} <= "
            f"{res_l['residual_mass'] + 4 * se:.4f}, "
            f"product identity err {max(res_d['product_identity_max_err'], res_l['product_identity_max_err']):.1e}")


def test_criterion_09_windowed_approximation(beta3_deep_spec,
                                             meeting_samples_deep):
    sch = BlockScheme(beta=3.0)
    obs = level_indicator_observable(beta3_deep_spec)
    t, _ = meeting_samples_deep
    ok = True
    details = []
    for ell in (5, 6, 7):
        m = sch.m(ell)
        tail_hat = float(np.mean((t >= m) | (t < 0)))
        out = asip.delta1_check(beta3_deep_spec, obs, m, n_reps=20_000,
                                master_seed=71, t_tail_hat=tail_hat)
        ok &= out["ok"]
        details.append(f"l={ell}: l1 {out['l1']:.4f} <= "
                       f"bound {out['bound']:.4f}+4se")
    _report(9, "windowed-approximation bound", ok, "; ".join(details))


def test_criterion_10_block_variance(beta3_spec, iid_spec):
    sch = BlockScheme(beta=3.0)
    obs = level_indicator_observable(beta3_spec)
    states, _ = tower.run_chain(beta3_spec, "nu", seed=81, n=2_000_000)
    series = obs.u[beta3_spec.offsets[states[1:, 0]] + states[1:, 1]]
    c2 = estimators.variance_c2(series[None, :]).c2_series
    gaps = []
    for ell in range(4, 9):
        est, _se = asip.nu_ell(sch, beta3_spec, obs, ell, master_seed=82,
                               n_reps=30_000)
        gaps.append(abs(est - c2))
    mono = all(gaps[i + 1] <= gaps[i] for i in range(len(gaps) - 1))
    w_obs = asip.word_indicator_observable(iid_spec, 0)
    est_i, se_i = asip.nu_ell(sch, iid_spec, w_obs, 5, master_seed=83,
                              n_reps=4000)
    iid_ok = abs(est_i - 0.25) <= 4 * se_i
    ok = mono and iid_ok
    _report(10, "block variance convergence", ok,
            f"|nu_l - c2| = {['%.4f' % g for g in gaps]} decreasing={mono}, "
            f"iid nu {est_i:.4f} ~ 0.25 within 4se={iid_ok}")


def test_criterion_11_asip_rate_probe(beta3_spec):
    sch = BlockScheme(beta=3.0)
    obs = level_indicator_observable(beta3_spec)
    states, _ = tower.run_chain(beta3_spec, "nu", seed=91, n=200_000)
    series = obs.u[beta3_spec.offsets[states[1:, 0]] + states[1:, 1]]
    c2 = estimators.variance_c2(series[None, :]).c2_series
    coupled = asip.gaussian_couple(sch, beta3_spec, obs, l_max=12,
                                   n_reps=200, master_seed=92, c2_hat=c2)
    fit = estimators._loglog_fit(coupled.checkpoints.astype(float),
                                 coupled.sup_error, (3**6, 3**12),
                                 min_points=5)
    ok = fit.slope <= 1.0 / 3.0 + 0.1
    _report(11, "strong-approximation rate probe (indicative)", ok,
            f"sup-error slope {fit.slope:.3f} <= {1/3 + 0.1:.3f} "
            f"on checkpoints 3^6..3^12")


def test_criterion_12_periodic_reduction(periodic_spec):
    obs = level_indicator_observable(periodic_spec)
    out = asip.periodic_transfer(periodic_spec, obs, master_seed=95,
                                 n_steps=20_000, n_reps=64)
    ok = out["pathwise_ok"] and out["variance_ok"]
    _report(12, "periodic reduction", ok,
            f"max defect {out['max_defect']:.3f} <= {out['bound']:.3f}, "
            f"v2 {out['v2']:.4f} ~ p*c2 {out['p'] * out['c2']:.4f}")


def test_criterion_13_optimality_probe(lsv05):
    out = asip.optimality_counter(lsv05, beta=2.0, n_events=1_000_000,
                                  seed=13)
    ok = out["count"] >= 1 and 1.0 / 3.0 <= out["ratio"] <= 3.0
    _report(13, "rate optimality probe", ok,
            f"count {out['count']} vs exact partial sum "
            f"{out['exact_partial_sum']:.2f} (ratio {out['ratio']:.2f})")


def test_criterion_14_determinism(tmp_path, beta3_spec, lsv04):
    cfg = cli.parse_config("command = tails\ngamma = 0.3\nmax_n = 512\n")
    cfg["out_dir"] = str(tmp_path)
    bytes_ok = cli.run(cfg).canonical_bytes() == cli.run(cfg).canonical_bytes()
    full_t, _ = tower.meeting_times(beta3_spec, 7, n_runs=2000, n_max=10_000)
    parts = [tower.meeting_times(beta3_spec, 7, n_runs=250, n_max=10_000,
                                 rep0=r0)[0] for r0 in range(0, 2000, 250)]
    shard_ok = np.array_equal(full_t, np.concatenate(parts))
    obs = maps.make_observable("hoelder_power", lsv04, seed=1, exponent=0.5)
    full_s = maps.observable_series(lsv04, obs, 7, n_reps=8, n_steps=200,
                                    burn_in=100)
    parts_s = [maps.observable_series(lsv04, obs, 7, n_reps=1, n_steps=200,
                                      burn_in=100, rep0=r) for r in range(8)]
    shard_ok &= np.array_equal(full_s, np.vstack(parts_s))
    ok = bytes_ok and shard_ok
    _report(14, "determinism and shard invariance", ok,
            f"byte-identical reports={bytes_ok}, shard agreement={shard_ok}")
