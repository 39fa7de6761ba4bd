"""Block construction and empirical strong-approximation probe.

Partial sums of a tower observable are approximated by a Gaussian path
assembled from block sums: within level ell (indices in (3^{ell-1}, 3^ell])
the observable is replaced by its conditional expectation given a window of
2 m_ell innovations, summed over blocks of 6 m_ell terms, and each block sum
is mapped to a Gaussian of matched variance by a rank-based quantile
transform across a replica ensemble.  The coupling is a documented heuristic
stand-in for a nonconstructive strong-approximation theorem, and every rate
obtained from it is labeled indicative.

For observables that are functions of the current state, the windowed
conditional expectations are computed exactly by a renewal argument: given
the innovation window, the state at time k is determined by the last
regeneration time, and the unknown pre-window state only enters through the
stationary law of its time-to-ceiling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.stats import norm

from ._rng import generator, next_uniform, stream_seed
from .estimators import DegenerateRange, ExponentFit, _loglog_fit, variance_c2
from .maps import MapModel, induced_orbit_return_times, partition
from .tower import (NotPeriodic, TowerSpec, _sample_cdf, _sample_nu,
                    induce_aperiodic, stationary_nu)


class InsufficientReplicas(ValueError):
    pass


@dataclass(frozen=True)
class BlockScheme:
    """Level geometry: window sizes m_ell and block counts q_ell."""

    beta: float
    eta: int = 0
    kappa: float = 1.0

    def __post_init__(self):
        if self.eta not in (0, 1):
            raise ValueError("eta must be 0 (strong mode) or 1 (weak mode)")
        if self.eta == 1 and self.kappa <= 1.0 / self.beta:
            raise ValueError("kappa must exceed 1/beta")

    def m(self, ell: int) -> int:
        if ell < 1:
            raise ValueError("ell must be >= 1")
        return int(3.0 ** (ell / self.beta) * ell ** (self.eta * self.kappa))

    def q(self, ell: int) -> int:
        return math.ceil(3 ** (ell - 2) / self.m(ell)) - 2

    @property
    def k0(self) -> int:
        k = 1
        while self.m(k) > 3 ** (k - 2) / 4.0:
            k += 1
        return k

    @staticmethod
    def b(n: int) -> int:
        """Smallest b with 3^b >= n."""
        b = 0
        while 3**b < n:
            b += 1
        return b


def block_params(scheme: BlockScheme, ell: int):
    """(m_ell, q_ell, within_k0 flag) for one level."""
    return scheme.m(ell), scheme.q(ell), ell < scheme.k0


# ---------------------------------------------------------------------------
# Observables on the tower

@dataclass(frozen=True)
class TowerObservable:
    """A bounded observable that is a function of the current state."""

    u: np.ndarray  # value per flattened state
    name: str = "custom"

    @property
    def sup_norm(self) -> float:
        return float(np.abs(self.u).max())


def level_indicator_observable(spec: TowerSpec) -> TowerObservable:
    """1{level = 0} minus its stationary mean (exactly centered)."""
    u = np.full(spec.n_states, -1.0 / spec.mean_height)
    u[spec.offsets] += 1.0
    return TowerObservable(u, "level0-indicator")


def word_indicator_observable(spec: TowerSpec, wi: int) -> TowerObservable:
    """1{word = wi} minus its stationary mean (exactly centered)."""
    nu = stationary_nu(spec)
    u = np.zeros(spec.n_states)
    sl = slice(spec.offsets[wi], spec.offsets[wi] + spec.h[wi])
    u[sl] = 1.0
    return TowerObservable(u - float(nu[sl].sum()), f"word{wi}-indicator")


def tau0_tail_weights(spec: TowerSpec, m: int):
    """(P(tau_0 = a) for a = 0..m, leftover term A_m for the observable u).

    tau_0 = h(w) - level - 1 is the time to the ceiling from a stationary
    start; P(tau_0 = a) = P_A(h >= a + 1) / E_A(h).
    """
    e = spec.mean_height
    p = np.array([spec.height_tail(a + 1) / e for a in range(m + 1)])
    return p


def _deep_climb_term(spec: TowerSpec, u: np.ndarray, m: int) -> float:
    """E[u(state at k); no regeneration in the window]: the start is still
    climbing, so the state is (w, level + m + 1)."""
    total = 0.0
    off = spec.offsets
    for i in range(spec.n_words):
        for j in range(m + 1, spec.h[i]):
            total += spec.p_a[i] * u[off[i] + j]
    return total / spec.mean_height


# ---------------------------------------------------------------------------
# Exact doubly-windowed conditional expectation (state-function observables)

@njit(cache=True, inline="always")
def _xtilde_at(h, off, u, eps, m, k, ptau0, a_m, work):
    """Exact E(u(g_k) | innovations in (k-m, k]) under a stationary start.

    work is an int64 scratch array of length m + 1 holding, for each
    hypothetical regeneration at time t = k - m + a, the last regeneration
    time <= k reachable from it (computed by one backward pass).
    """
    for idx in range(m, -1, -1):
        t = k - m + idx
        nt = t + h[eps[t]]
        if nt > k:
            work[idx] = t
        else:
            work[idx] = work[nt - (k - m)]
    x = a_m
    for a in range(m + 1):
        last = work[a]
        x += ptau0[a] * u[off[eps[last]] + (k - last)]
    return x


@njit(cache=True)
def _xtilde_range(h, off, u, eps, m, k_lo, k_hi, ptau0, a_m):
    out = np.empty(k_hi - k_lo + 1)
    work = np.empty(m + 1, dtype=np.int64)
    for k in range(k_lo, k_hi + 1):
        out[k - k_lo] = _xtilde_at(h, off, u, eps, m, k, ptau0, a_m, work)
    return out


@njit(cache=True)
def _block_sums_kernel(h, off, u, eps, m, q, base, ptau0, a_m):
    """B_j = sum of X-tilde over the 6m indices of block j, j = 1..q."""
    out = np.empty(q)
    work = np.empty(m + 1, dtype=np.int64)
    for j in range(1, q + 1):
        acc = 0.0
        for i in range((6 * j - 1) * m + 1, (6 * j + 5) * m + 1):
            k = i + m + base
            acc += _xtilde_at(h, off, u, eps, m, k, ptau0, a_m, work)
        out[j - 1] = acc
    return out


@njit(cache=True)
def _replica_streams(h, word_cdf, nu_word_cdf, master, rep, n):
    """Stationary start plus n innovations for one replica stream."""
    st = stream_seed(np.uint64(master), np.uint64(rep))
    st, w0, l0 = _sample_nu(h, nu_word_cdf, st)
    eps = np.empty(n + 1, dtype=np.int64)
    eps[0] = -1
    for t in range(1, n + 1):
        st, uu = next_uniform(st)
        eps[t] = _sample_cdf(word_cdf, uu)
    return w0, l0, eps


@njit(cache=True)
def _s_at_ticks(h, off, u, w0, l0, eps, ticks):
    """Partial sums S_k = sum_{i<=k} u(g_i) sampled at the given ticks."""
    out = np.empty(ticks.size)
    w, l = w0, l0
    s = 0.0
    ti = 0
    n = ticks[-1]
    for t in range(1, n + 1):
        if l + 1 < h[w]:
            l += 1
        else:
            w, l = eps[t], 0
        s += u[off[w] + l]
        while ti < ticks.size and ticks[ti] == t:
            out[ti] = s
            ti += 1
    return out


@njit(cache=True)
def _state_at(h, off, w0, l0, eps, k):
    w, l = w0, l0
    for t in range(1, k + 1):
        if l + 1 < h[w]:
            l += 1
        else:
            w, l = eps[t], 0
    return w, l


# ---------------------------------------------------------------------------
# Spec-level Monte Carlo versions of the windowed operators

def windowed_X(spec: TowerSpec, psi, path, k: int, m: int, seed: int = 0,
               n_cond: int = 64, horizon: int | None = None):
    """E(psi(g_k, g_{k+1}, ...) | g_k, ..., g_{k+m}) by fresh continuations.

    psi takes an (r, 2) array of states.  When psi is declared with a finite
    horizon r and the window already covers it (m + 1 >= r), the value is
    exact and no sampling happens.
    """
    path = np.asarray(path)
    r = horizon if horizon is not None else m + 1
    if m + 1 >= r:
        return float(psi(path[k: k + r]))
    vals = np.empty(n_cond)
    for c in range(n_cond):
        st = stream_seed(np.uint64(seed), np.uint64(c))
        w, l = int(path[k + m, 0]), int(path[k + m, 1])
        states = [tuple(s) for s in path[k: k + m + 1]]
        while len(states) < r:
            st, uu = next_uniform(np.uint64(st))
            e = _sample_cdf(spec.word_cdf(), uu)
            if l + 1 < spec.h[w]:
                l += 1
            else:
                w, l = e, 0
            states.append((w, l))
        vals[c] = psi(np.array(states))
    return float(vals.mean())


def doubly_windowed_X(spec: TowerSpec, psi, eps_window, m: int,
                      seed: int = 0, n_cond: int = 64,
                      horizon: int | None = None):
    """E(X_{l,k} | eps_{k-m}, ..., eps_{k+m}) by averaging over fresh
    stationary states g_{k-m-1} pushed through the fixed window.

    eps_window holds the 2m + 1 innovations eps_{k-m}..eps_{k+m}.  The
    continuation beyond the window (needed when the horizon exceeds it)
    reuses windowed_X's fresh-stream construction.
    """
    eps_window = np.asarray(eps_window, dtype=np.int64)
    if eps_window.size != 2 * m + 1:
        raise ValueError("window must hold 2m + 1 innovations")
    h = spec.h
    vals = np.empty(n_cond)
    for c in range(n_cond):
        st = stream_seed(np.uint64(seed), np.uint64(2 * c + 1))
        st, w, l = _sample_nu(h, spec.nu_word_cdf(), np.uint64(st))
        states = []
        for e in eps_window:
            if l + 1 < h[w]:
                l += 1
            else:
                w, l = int(e), 0
            states.append((w, l))
        # states now covers times k-m .. k+m; psi starts at time k
        vals[c] = windowed_X(spec, psi, np.array(states), k=m, m=m,
                             seed=seed + 7919 * (c + 1), n_cond=1,
                             horizon=horizon)
    return float(vals.mean())


def xtilde_exact(spec: TowerSpec, obs: TowerObservable, eps, m: int, k: int):
    """Exact doubly-windowed value at index k for a state-function observable."""
    ptau0 = tau0_tail_weights(spec, m)
    a_m = _deep_climb_term(spec, obs.u, m)
    work = np.empty(m + 1, dtype=np.int64)
    return float(_xtilde_at(spec.h, spec.offsets, obs.u,
                            np.asarray(eps, dtype=np.int64), m, k,
                            ptau0, a_m, work))


def delta1_check(spec: TowerSpec, obs: TowerObservable, m: int,
                 n_reps: int, master_seed: int, t_tail_hat: float):
    """Estimate ||u(g_k) - X-tilde_{l,k}||_1 and compare to the coupling
    bound 2 |psi|_inf P(T >= m) (with t_tail_hat the empirical tail)."""
    h, off, u = spec.h, spec.offsets, obs.u
    ptau0 = tau0_tail_weights(spec, m)
    a_m = _deep_climb_term(spec, u, m)
    k = m + 1
    diffs = _delta1_kernel(h, off, u, spec.word_cdf(), spec.nu_word_cdf(),
                           np.uint64(master_seed), n_reps, m, k, ptau0, a_m)
    est = float(diffs.mean())
    se = float(diffs.std(ddof=1) / math.sqrt(n_reps))
    bound = 2.0 * obs.sup_norm * t_tail_hat
    return {"l1": est, "stderr": se, "bound": bound, "m": m,
            "ok": bool(est <= bound + 4.0 * se)}


@njit(cache=True)
def _delta1_kernel(h, off, u, word_cdf, nu_word_cdf, master, n_reps, m, k,
                   ptau0, a_m):
    out = np.empty(n_reps)
    work = np.empty(m + 1, dtype=np.int64)
    for r in range(n_reps):
        w0, l0, eps = _replica_streams(h, word_cdf, nu_word_cdf, master, r, k)
        w, l = _state_at(h, off, w0, l0, eps, k)
        xt = _xtilde_at(h, off, u, eps, m, k, ptau0, a_m, work)
        out[r] = abs(u[off[w] + l] - xt)
    return out


# ---------------------------------------------------------------------------
# Blocks, block variance, and the heuristic Gaussian coupling

def block_sums(scheme: BlockScheme, spec: TowerSpec, obs: TowerObservable,
               ell: int, master_seed: int, n_reps: int = 1, rep0: int = 0):
    """Block sums B_{l,j}, j = 1..q_l, for n_reps replica trajectories.

    Returns (blocks, windows): blocks is an (n_reps, q_l) array; windows
    records, per replica and block, the tuple of 2m innovations in the
    block's conditioning window J_{l,j}.
    """
    if ell < scheme.k0:
        raise ValueError(f"ell = {ell} below k0 = {scheme.k0}")
    m, q = scheme.m(ell), scheme.q(ell)
    base = 3 ** (ell - 1)
    n_need = (6 * q + 6) * m + base
    ptau0 = tau0_tail_weights(spec, m)
    a_m = _deep_climb_term(spec, obs.u, m)
    blocks = np.empty((n_reps, q))
    windows = np.empty((n_reps, q, 2 * m), dtype=np.int64)
    for r in range(n_reps):
        _, _, eps = _replica_streams(spec.h, spec.word_cdf(),
                                     spec.nu_word_cdf(),
                                     np.uint64(master_seed), rep0 + r, n_need)
        blocks[r] = _block_sums_kernel(spec.h, spec.offsets, obs.u, eps,
                                       m, q, base, ptau0, a_m)
        for j in range(1, q + 1):
            j0 = base + (6 * j - 1) * m + 1
            windows[r, j - 1] = eps[j0: j0 + 2 * m]
    return blocks, windows


def nu_ell(scheme: BlockScheme, spec: TowerSpec, obs: TowerObservable,
           ell: int, master_seed: int, n_reps: int):
    """Plug-in block-variance estimate
    nu_l = (2m)^{-1} {E(W~_{2m}^2) + 2 E(W~_{2m}(W~_{4m} - W~_{2m}))}."""
    m = scheme.m(ell)
    base = 3 ** (ell - 1)
    ptau0 = tau0_tail_weights(spec, m)
    a_m = _deep_climb_term(spec, obs.u, m)
    vals = np.empty(n_reps)
    for r in range(n_reps):
        _, _, eps = _replica_streams(spec.h, spec.word_cdf(),
                                     spec.nu_word_cdf(),
                                     np.uint64(master_seed), r, base + 4 * m)
        xt = _xtilde_range(spec.h, spec.offsets, obs.u, eps, m,
                           base + 1, base + 4 * m, ptau0, a_m)
        w2 = xt[: 2 * m].sum()
        w4 = xt.sum()
        vals[r] = (w2 * w2 + 2.0 * w2 * (w4 - w2)) / (2.0 * m)
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_reps))


@dataclass
class CoupledPath:
    """Checkpointed sup-error between partial sums and the Gaussian path."""

    checkpoints: np.ndarray  # n values (powers of 3)
    sup_error: np.ndarray  # mean over replicas, aligned with checkpoints
    per_replica: np.ndarray  # (R, n_checkpoints)
    method: str = "QuantileBlock"


def _level_layout(scheme: BlockScheme, ell: int):
    """Tick positions and segment kinds for one level's index range."""
    m, q = scheme.m(ell), scheme.q(ell)
    base = 3 ** (ell - 1)
    ticks, kinds = [], []  # kind: -1 gap, j >= 0 block index
    ticks.append(base + 6 * m)
    kinds.append(-1)
    for j in range(1, q + 1):
        ticks.append(base + (6 * j + 6) * m)
        kinds.append(j - 1)
    if ticks[-1] < 3**ell:
        ticks.append(3**ell)
        kinds.append(-1)
    return np.array(ticks, dtype=np.int64), kinds


def gaussian_couple(scheme: BlockScheme, spec: TowerSpec,
                    obs: TowerObservable, l_max: int, n_reps: int,
                    master_seed: int, c2_hat: float) -> CoupledPath:
    """Assemble the heuristic Gaussian approximation and its sup error.

    Per level and block-parity class, each block sum is replaced by a
    Gaussian of matched (class-pooled) variance via a rank quantile map
    across the replica ensemble; non-block index ranges get independent
    Gaussian fill with variance c2_hat per step.  The sup error is evaluated
    on the tick grid of block and gap boundaries, with checkpoints at the
    level endpoints n = 3^l.  Heuristic: rates fitted from this path are
    indicative only.
    """
    if n_reps < 200:
        raise InsufficientReplicas(f"{n_reps} replicas < 200")
    k0 = scheme.k0
    if l_max < k0:
        raise ValueError("l_max below k0")
    # Global tick layout.
    all_ticks = [3 ** (k0 - 1)]
    seg_level = [-1]  # level of the segment ending at each tick; -1 = prelude
    seg_kind = [-1]
    for ell in range(k0, l_max + 1):
        ticks, kinds = _level_layout(scheme, ell)
        all_ticks.extend(int(t) for t in ticks)
        seg_level.extend(ell for _ in kinds)
        seg_kind.extend(kinds)
    ticks = np.array(all_ticks, dtype=np.int64)

    # Simulate replicas once: S at ticks and block sums per level.
    n_total = int(ticks[-1])
    s_ticks = np.empty((n_reps, ticks.size))
    blocks = {}
    for ell in range(k0, l_max + 1):
        blocks[ell] = np.empty((n_reps, scheme.q(ell)))
    pt = {ell: tau0_tail_weights(spec, scheme.m(ell))
          for ell in range(k0, l_max + 1)}
    am = {ell: _deep_climb_term(spec, obs.u, scheme.m(ell))
          for ell in range(k0, l_max + 1)}
    for r in range(n_reps):
        w0, l0, eps = _replica_streams(spec.h, spec.word_cdf(),
                                       spec.nu_word_cdf(),
                                       np.uint64(master_seed), r, n_total)
        s_ticks[r] = _s_at_ticks(spec.h, spec.offsets, obs.u, w0, l0, eps,
                                 ticks)
        for ell in range(k0, l_max + 1):
            blocks[ell][r] = _block_sums_kernel(
                spec.h, spec.offsets, obs.u, eps, scheme.m(ell),
                scheme.q(ell), 3 ** (ell - 1), pt[ell], am[ell])

    # Rank-quantile Gaussianization per (level, parity, block index).
    gauss = {}
    zgrid = norm.ppf((np.arange(n_reps) + 0.5) / n_reps)
    for ell in range(k0, l_max + 1):
        b = blocks[ell]
        g = np.empty_like(b)
        for par in (0, 1):
            cols = np.arange(par, b.shape[1], 2)
            if cols.size == 0:
                continue
            sigma = float(b[:, cols].std(ddof=1))
            for j in cols:
                order = np.argsort(b[:, j], kind="stable")
                ranks = np.empty(n_reps, dtype=np.int64)
                ranks[order] = np.arange(n_reps)
                g[:, j] = zgrid[ranks] * sigma
        gauss[ell] = g

    # Assemble W at ticks and the running sup error.
    n_cp = l_max - k0 + 1
    cp_values = np.array([3**ell for ell in range(k0, l_max + 1)],
                        dtype=np.int64)
    per_rep = np.zeros((n_reps, n_cp))
    for r in range(n_reps):
        rng = generator(master_seed, "gaussian-fill", r)
        w = 0.0
        worst = 0.0
        cp_i = 0
        prev_tick = 0
        for i, t in enumerate(ticks):
            lvl, kind = seg_level[i], seg_kind[i]
            length = int(t - prev_tick)
            if kind < 0:
                w += rng.normal(0.0, math.sqrt(max(c2_hat, 0.0) * length))
            else:
                w += gauss[lvl][r, kind]
            worst = max(worst, abs(s_ticks[r, i] - w))
            prev_tick = int(t)
            while cp_i < n_cp and t >= cp_values[cp_i]:
                per_rep[r, cp_i] = worst
                cp_i += 1
    return CoupledPath(cp_values, per_rep.mean(axis=0), per_rep)


def rate_fit(coupled: CoupledPath) -> ExponentFit | None:
    """Log-log fit of the coupling sup error against n; None for zero paths."""
    if coupled.checkpoints.size < 5:
        raise DegenerateRange("need at least 5 checkpoints")
    if np.all(coupled.sup_error == 0):
        return None
    fit = _loglog_fit(coupled.checkpoints.astype(float), coupled.sup_error,
                      None, min_points=5)
    return fit


# ---------------------------------------------------------------------------
# Periodic reduction

def induced_observable(spec: TowerSpec, obs: TowerObservable) -> np.ndarray:
    """psi-tilde on the induced chain: the sum of psi over one p-step climb."""
    p = spec.period
    ind = induce_aperiodic(spec)
    u_t = np.empty(ind.n_states)
    off, off_t = spec.offsets, ind.offsets
    for i in range(spec.n_words):
        for lt in range(ind.h[i]):
            u_t[off_t[i] + lt] = obs.u[off[i] + lt * p: off[i] + (lt + 1) * p].sum()
    return u_t


def periodic_transfer(spec: TowerSpec, obs: TowerObservable,
                      master_seed: int, n_steps: int, n_reps: int,
                      coupled: CoupledPath | None = None):
    """Appendix-style transfer from the induced aperiodic chain back to a
    periodic tower: pathwise sum-defect bound, variance relation, and the
    time rescaling of an induced-level Gaussian path.

    Checks, on every simulated trajectory, that the partial sums of psi on
    the periodic chain and of psi-tilde on the induced chain (aligned at the
    first multiple-of-p level) never differ by more than 2 p |psi|_inf, and
    that the induced long-run variance is p times the periodic one.
    """
    p = spec.period
    if p < 2:
        raise NotPeriodic("spec has period 1")
    ind = induce_aperiodic(spec)
    obs_t = TowerObservable(induced_observable(spec, obs), obs.name + "-induced")
    bound = 2.0 * p * obs.sup_norm
    h, off = spec.h, spec.offsets
    max_defect = 0.0
    series = np.empty((n_reps, n_steps))
    series_t = np.empty((n_reps, n_steps // p))
    for r in range(n_reps):
        w0, l0, eps = _replica_streams(h, spec.word_cdf(), spec.nu_word_cdf(),
                                       np.uint64(master_seed), r, n_steps + p)
        vals, vals_t, defect = _periodic_defect(
            h, off, obs.u, ind.h, ind.offsets, obs_t.u, w0, l0, eps, p,
            n_steps)
        max_defect = max(max_defect, defect)
        series[r] = vals
        series_t[r] = vals_t[: n_steps // p]
    c2 = variance_c2(series)
    v2 = variance_c2(series_t)
    se = 4.0 * math.hypot(p * c2.se_growth, v2.se_growth)
    return {
        "p": p,
        "max_defect": float(max_defect),
        "bound": bound,
        "pathwise_ok": bool(max_defect <= bound + 1e-9),
        "c2": c2.c2_growth,
        "c2_se": c2.se_growth,
        "v2": v2.c2_growth,
        "v2_se": v2.se_growth,
        "variance_ok": bool(abs(v2.c2_growth - p * c2.c2_growth) <= se),
        "rescaled": None if coupled is None else CoupledPath(
            coupled.checkpoints * p, coupled.sup_error, coupled.per_replica,
            coupled.method + "-rescaled"),
    }


@njit(cache=True)
def _periodic_defect(h, off, u, h_t, off_t, u_t, w0, l0, eps, p, n_steps):
    """Trajectory values of psi and psi-tilde plus the max alignment defect.

    The induced chain is the periodic chain watched every p steps starting
    at its first multiple-of-p level (the projection's phase shift).
    """
    vals = np.empty(n_steps)
    vals_t = np.empty(n_steps // p + 1)
    w, l = w0, l0
    # steps until the level is a multiple of p (deterministic rotation)
    shift = (p - (l % p)) % p
    s = 0.0
    st = 0.0
    n_t = 0
    defect = 0.0
    for t in range(1, n_steps + 1):
        if l + 1 < h[w]:
            l += 1
        else:
            w, l = eps[t], 0
        vals[t - 1] = u[off[w] + l]
        s += u[off[w] + l]
        if t > shift and (t - shift) % p == 0 and n_t < vals_t.size:
            vals_t[n_t] = u_t[off_t[w] + (l // p)]
            st += vals_t[n_t]
            n_t += 1
        d = abs(s - st)
        if d > defect:
            defect = d
    return vals, vals_t[: n_steps // p], defect


# ---------------------------------------------------------------------------
# Optimality probes on the interval maps

def optimality_counter(model: MapModel, beta: float, n_events: int,
                       seed: int, burn_in: int = 100_000):
    """Count occurrences of tau(F^n y) >= (n log n)^{1/beta} along one
    induced-map trajectory, against the exact tail partial sum."""
    if n_events < 1000:
        raise ValueError("n_events must be >= 1000")
    taus = induced_orbit_return_times(model, seed, n_events + 1,
                                      burn_in=burn_in)
    ns = np.arange(2, n_events + 1)
    thresh = np.ceil((ns * np.log(ns)) ** (1.0 / beta)).astype(np.int64)
    count = int(np.sum(taus[ns] >= thresh))
    part = partition(model, int(thresh.max()) + 1)
    exact = float(np.sum([part.tail(int(t)) for t in thresh]))
    return {
        "count": count,
        "exact_partial_sum": exact,
        "ratio": count / exact if exact > 0 else math.inf,
        "n_events": n_events,
    }


def cobas_check(model: MapModel | None, beta: float, eta: int, epsilon: float,
                checkpoints, seed: int, taus=None, burn_in: int = 100_000):
    """Running-max return times against the scale n^{1/beta} (log n)^{1/beta+eps}.

    Verdict "Decaying" when the normalized running max at the last
    checkpoint is below half its first-checkpoint value.
    """
    if eta == 1 and epsilon <= 0:
        raise ValueError("epsilon must be positive in weak mode")
    checkpoints = np.asarray(sorted(int(c) for c in checkpoints),
                             dtype=np.int64)
    n_max = int(checkpoints[-1])
    if taus is None:
        if model.variant == "doubling":
            taus = np.ones(n_max + 1, dtype=np.int64)  # full-shift scheme
        else:
            taus = induced_orbit_return_times(model, seed, n_max + 1,
                                              burn_in=burn_in)
    running = np.maximum.accumulate(taus)
    ratios = []
    for n in checkpoints:
        scale = n ** (1.0 / beta) * math.log(n) ** (1.0 / beta + epsilon)
        ratios.append(float(running[n] / scale))
    if len(ratios) < 2:
        verdict = "Undetermined"
    elif ratios[-1] < 0.5 * ratios[0]:
        verdict = "Decaying"
    else:
        verdict = "NotDecaying"
    return {"checkpoints": checkpoints.tolist(), "ratios": ratios,
            "verdict": verdict}
