"""Block geometry, windowed conditional expectations, Gaussian coupling,
periodic transfer, and the interval-map probes."""

import math

import numpy as np
import pytest

from towerlab import asip, tower
from towerlab.asip import (BlockScheme, CoupledPath, InsufficientReplicas,
                           TowerObservable, block_sums, cobas_check,
                           delta1_check, doubly_windowed_X, gaussian_couple,
                           induced_observable, level_indicator_observable,
                           nu_ell, optimality_counter, periodic_transfer,
                           rate_fit, windowed_X, word_indicator_observable,
                           xtilde_exact)
from towerlab.estimators import DegenerateRange
from towerlab.tower import NotPeriodic


# ---------------------------------------------------------------------------
# BlockScheme geometry

def test_block_scheme_window_sizes():
    sch = BlockScheme(beta=3.0)
    assert sch.m(3) == 3
    assert sch.m(6) == 9


def test_block_scheme_block_count():
    sch = BlockScheme(beta=3.0)
    assert sch.q(6) == 7


def test_block_scheme_k0():
    assert BlockScheme(beta=3.0).k0 == 5


def test_block_scheme_weak_mode_kappa():
    sch = BlockScheme(beta=3.0, eta=1, kappa=0.5)
    assert sch.m(6) >= BlockScheme(beta=3.0).m(6)
    with pytest.raises(ValueError):
        BlockScheme(beta=3.0, eta=1, kappa=0.2)
    with pytest.raises(ValueError):
        BlockScheme(beta=3.0, eta=2)


def test_block_scheme_b():
    assert BlockScheme.b(1) == 0
    assert BlockScheme.b(3) == 1
    assert BlockScheme.b(10) == 3
    assert BlockScheme.b(81) == 4
    assert BlockScheme.b(82) == 5


# ---------------------------------------------------------------------------
# observables

def test_level_indicator_exactly_centered(beta3_spec):
    obs = level_indicator_observable(beta3_spec)
    nu = tower.stationary_nu(beta3_spec)
    assert abs(float(nu @ obs.u)) < 1e-14
    assert obs.sup_norm < 1.0


def test_word_indicator_exactly_centered(small_spec):
    obs = word_indicator_observable(small_spec, 1)
    nu = tower.stationary_nu(small_spec)
    assert abs(float(nu @ obs.u)) < 1e-14


# ---------------------------------------------------------------------------
# windowed conditional expectations

def test_windowed_x_exact_when_window_covers_horizon(small_spec):
    path = np.array([(0, 0), (1, 0), (1, 1), (0, 0)])

    def psi(states):
        return float(states[0, 0] + 2 * states[1, 1])

    got = windowed_X(small_spec, psi, path, k=1, m=1, horizon=2)
    assert got == pytest.approx(float(path[1, 0] + 2 * path[2, 1]), abs=1e-15)


def test_doubly_windowed_iid_is_deterministic(iid_spec):
    # with unit heights the state at time k equals the window's middle letter
    m = 2
    window = np.array([0, 2, 1, 0, 2], dtype=np.int64)

    def psi(states):
        return float(states[0, 0])

    got = doubly_windowed_X(iid_spec, psi, window, m, n_cond=8, horizon=1)
    assert got == pytest.approx(float(window[m]), abs=1e-15)


def test_xtilde_exact_matches_monte_carlo(small_spec):
    obs = level_indicator_observable(small_spec)
    m, k = 4, 10
    rng = np.random.default_rng(0)
    eps = np.concatenate(([-1], rng.integers(0, small_spec.n_words, size=k)))
    exact = xtilde_exact(small_spec, obs, eps, m, k)

    nu = tower.stationary_nu(small_spec)
    offs = small_spec.offsets
    state_of = []
    for wi in range(small_spec.n_words):
        for l in range(small_spec.h[wi]):
            state_of.append((wi, l))
    n_mc = 40_000
    starts = rng.choice(len(state_of), size=n_mc, p=nu)
    free = rng.choice(small_spec.n_words, size=(n_mc, k - m),
                      p=small_spec.p_a)
    vals = np.empty(n_mc)
    for c in range(n_mc):
        w, l = state_of[starts[c]]
        for t in range(1, k + 1):
            # innovations before the window are freshly sampled; the window
            # innovations eps_{k-m}..eps_k are held fixed
            e = free[c, t - 1] if t < k - m else eps[t]
            w, l = tower.update(small_spec, (w, l), int(e))
        vals[c] = obs.u[offs[w] + l]
    se = vals.std(ddof=1) / math.sqrt(n_mc)
    assert abs(vals.mean() - exact) <= 5 * se + 1e-6


def test_delta1_within_coupling_bound(small_spec):
    obs = level_indicator_observable(small_spec)
    t, _ = tower.meeting_times(small_spec, master_seed=17, n_runs=100_000,
                               n_max=1000)
    for m in (4, 8):
        tail_hat = float(np.mean(t >= m))
        out = delta1_check(small_spec, obs, m, n_reps=20_000, master_seed=31,
                           t_tail_hat=tail_hat)
        assert out["ok"]
    # the discrepancy shrinks as the window widens
    t4 = delta1_check(small_spec, obs, 4, 20_000, 31, 1.0)
    t16 = delta1_check(small_spec, obs, 16, 20_000, 31, 1.0)
    assert t16["l1"] <= t4["l1"] + 4 * (t4["stderr"] + t16["stderr"])


# ---------------------------------------------------------------------------
# blocks and block variance

def test_block_sums_zero_observable(beta3_spec):
    sch = BlockScheme(beta=3.0)
    zero = TowerObservable(np.zeros(beta3_spec.n_states), "zero")
    blocks, windows = block_sums(sch, beta3_spec, zero, ell=5,
                                 master_seed=1, n_reps=4)
    assert blocks.shape == (4, sch.q(5))
    assert np.allclose(blocks, 0.0)
    assert windows.shape == (4, sch.q(5), 2 * sch.m(5))


def test_block_sums_below_k0_rejected(beta3_spec):
    sch = BlockScheme(beta=3.0)
    obs = level_indicator_observable(beta3_spec)
    with pytest.raises(ValueError):
        block_sums(sch, beta3_spec, obs, ell=sch.k0 - 1, master_seed=1)


def test_block_variance_iid(iid_spec):
    # unit heights: each block sums 6m i.i.d. centered indicators, so its
    # variance is 6m p(1-p)
    sch = BlockScheme(beta=3.0)
    obs = word_indicator_observable(iid_spec, 0)
    blocks, _ = block_sums(sch, iid_spec, obs, ell=5, master_seed=7,
                           n_reps=500)
    m = sch.m(5)
    target = 6 * m * 0.25
    got = float(blocks.var(ddof=1))
    assert abs(blocks.mean()) < 0.2
    assert got == pytest.approx(target, rel=0.15)


def test_nu_ell_iid_matches_marginal_variance(iid_spec):
    sch = BlockScheme(beta=3.0)
    obs = word_indicator_observable(iid_spec, 0)
    est, se = nu_ell(sch, iid_spec, obs, ell=5, master_seed=3, n_reps=4000)
    assert abs(est - 0.25) <= 4 * se


def test_nu_ell_zero_observable(iid_spec):
    sch = BlockScheme(beta=3.0)
    zero = TowerObservable(np.zeros(iid_spec.n_states), "zero")
    est, se = nu_ell(sch, iid_spec, zero, ell=5, master_seed=3, n_reps=100)
    assert est == 0.0


# ---------------------------------------------------------------------------
# Gaussian coupling

def test_gaussian_couple_requires_replicas(beta3_spec):
    sch = BlockScheme(beta=3.0)
    obs = level_indicator_observable(beta3_spec)
    with pytest.raises(InsufficientReplicas):
        gaussian_couple(sch, beta3_spec, obs, l_max=6, n_reps=50,
                        master_seed=1, c2_hat=1.0)


def test_gaussian_couple_zero_observable_zero_path(beta3_spec):
    sch = BlockScheme(beta=3.0)
    zero = TowerObservable(np.zeros(beta3_spec.n_states), "zero")
    coupled = gaussian_couple(sch, beta3_spec, zero, l_max=9, n_reps=200,
                              master_seed=1, c2_hat=0.0)
    assert np.allclose(coupled.sup_error, 0.0)
    assert rate_fit(coupled) is None


def test_rate_fit_exact_power():
    cps = np.array([3**k for k in range(1, 7)], dtype=np.int64)
    coupled = CoupledPath(cps, cps.astype(float) ** 0.25,
                          np.empty((1, cps.size)))
    fit = rate_fit(coupled)
    assert fit.slope == pytest.approx(0.25, abs=1e-12)


def test_rate_fit_needs_checkpoints():
    cps = np.array([3, 9], dtype=np.int64)
    with pytest.raises(DegenerateRange):
        rate_fit(CoupledPath(cps, np.ones(2), np.empty((1, 2))))


# ---------------------------------------------------------------------------
# periodic transfer

def test_induced_observable_sums_climb(periodic_spec):
    obs = level_indicator_observable(periodic_spec)
    u_t = induced_observable(periodic_spec, obs)
    off, off_t = periodic_spec.offsets, tower.induce_aperiodic(periodic_spec).offsets
    p = periodic_spec.period
    assert u_t[off_t[0]] == pytest.approx(obs.u[off[0]: off[0] + p].sum())


def test_periodic_transfer(periodic_spec):
    obs = level_indicator_observable(periodic_spec)
    out = periodic_transfer(periodic_spec, obs, master_seed=5, n_steps=4096,
                            n_reps=64)
    assert out["p"] == 2
    assert out["bound"] == pytest.approx(4.0 * obs.sup_norm)
    assert out["pathwise_ok"]
    assert out["variance_ok"]


def test_periodic_transfer_rescales_checkpoints(periodic_spec):
    obs = level_indicator_observable(periodic_spec)
    cps = np.array([3**k for k in range(1, 6)], dtype=np.int64)
    coupled = CoupledPath(cps, np.ones(cps.size, dtype=float),
                          np.empty((1, cps.size)))
    out = periodic_transfer(periodic_spec, obs, master_seed=5, n_steps=1024,
                            n_reps=16, coupled=coupled)
    assert np.array_equal(out["rescaled"].checkpoints, 2 * cps)


def test_periodic_transfer_requires_period(iid_spec):
    obs = level_indicator_observable(iid_spec)
    with pytest.raises(NotPeriodic):
        periodic_transfer(iid_spec, obs, master_seed=1, n_steps=64, n_reps=2)


# ---------------------------------------------------------------------------
# interval-map probes

def test_optimality_counter_lsv(lsv05):
    out = optimality_counter(lsv05, beta=2.0, n_events=20_000, seed=2)
    assert out["count"] >= 1
    assert out["exact_partial_sum"] > 0
    assert np.isfinite(out["ratio"])


def test_optimality_counter_needs_events(lsv05):
    with pytest.raises(ValueError):
        optimality_counter(lsv05, beta=2.0, n_events=100, seed=1)


def test_cobas_doubling_decays(doubling):
    out = cobas_check(doubling, beta=1.0, eta=0, epsilon=0.5,
                      checkpoints=[10, 100, 1000, 10_000], seed=1)
    assert out["verdict"] == "Decaying"


def test_cobas_lsv_decays(lsv04):
    # frozen seed: individual orbits fluctuate, but this one decays cleanly
    out = cobas_check(lsv04, beta=1.0 / 0.4, eta=0, epsilon=0.5,
                      checkpoints=[10**k for k in range(3, 8)], seed=6)
    assert out["verdict"] == "Decaying"


def test_cobas_single_checkpoint_undetermined(doubling):
    out = cobas_check(doubling, beta=1.0, eta=0, epsilon=0.5,
                      checkpoints=[1000], seed=1)
    assert out["verdict"] == "Undetermined"


def test_cobas_weak_mode_needs_epsilon(doubling):
    with pytest.raises(ValueError):
        cobas_check(doubling, beta=1.0, eta=1, epsilon=0.0,
                    checkpoints=[10, 100], seed=1)


def test_cobas_scale_tracking_not_decaying():
    # running max growing like the comparison scale keeps the ratio flat
    ns = np.arange(1002, dtype=np.float64)
    ns[0] = 1.0
    taus = np.ceil(ns ** 0.5 * np.log(np.maximum(ns, 2.0)) ** 0.6).astype(np.int64)
    out = cobas_check(None, beta=2.0, eta=0, epsilon=0.1,
                      checkpoints=[100, 1000], seed=0, taus=taus)
    assert out["verdict"] == "NotDecaying"
