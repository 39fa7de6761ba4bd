"""Abstract tower Markov chain: specs, stationary law, innovation updates,
coupled runs with meeting times, separation metric, and the periodic-to-
aperiodic reduction.

States are pairs (word, level) with 0 <= level < h(word).  The chain climbs
deterministically and, at the ceiling level h(word) - 1, jumps to (eps, 0)
where eps is the current innovation drawn from the word distribution P_A.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit, prange
from scipy.special import zeta

from ._rng import next_uniform, splitmix64, stream_seed


class EmptySpec(ValueError):
    pass


class ZeroMass(ValueError):
    pass


class NotPeriodic(ValueError):
    pass


@dataclass(frozen=True)
class TowerSpec:
    """A finite truncation of a tower: words, heights, word distribution."""

    words: tuple
    h: np.ndarray  # int64 heights, aligned with words
    p_a: np.ndarray  # probabilities, renormalized to sum 1
    provenance: str = "synthetic"
    truncation_residual: float = 0.0
    beta_hint: float = math.nan

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def mean_height(self) -> float:
        return float(np.dot(self.p_a, self.h))

    @property
    def period(self) -> int:
        return int(np.gcd.reduce(self.h))

    @property
    def n_states(self) -> int:
        return int(self.h.sum())

    @property
    def offsets(self) -> np.ndarray:
        """offsets[i] = flat index of state (word i, level 0)."""
        return np.concatenate(([0], np.cumsum(self.h)))[:-1]

    def state_index(self, wi: int, level: int) -> int:
        if not 0 <= level < self.h[wi]:
            raise ValueError(f"level {level} invalid for word {wi}")
        return int(self.offsets[wi] + level)

    def word_cdf(self) -> np.ndarray:
        return np.cumsum(self.p_a)

    def nu_word_cdf(self) -> np.ndarray:
        """CDF of the word marginal of the stationary law (mass P_A(w)h(w))."""
        w = self.p_a * self.h
        return np.cumsum(w / w.sum())

    def height_tail(self, k: int) -> float:
        """P_A(h >= k)."""
        return float(self.p_a[self.h >= k].sum())


def validate_spec(raw) -> TowerSpec:
    """Build a TowerSpec from raw data ({words: [{id, h, weight}], ...})."""
    entries = raw.get("words", raw) if isinstance(raw, dict) else raw
    if not entries:
        raise EmptySpec("no words supplied")
    ids, heights, weights = [], [], []
    for e in entries:
        hval = int(e["h"])
        wval = float(e["weight"])
        if hval < 1:
            raise ValueError(f"height {hval} must be positive")
        if wval < 0:
            raise ValueError(f"weight {wval} must be nonnegative")
        ids.append(e.get("id", f"w{len(ids)}"))
        heights.append(hval)
        weights.append(wval)
    w = np.asarray(weights, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ZeroMass("total weight is zero")
    keep = w > 0
    meta = raw if isinstance(raw, dict) else {}
    return TowerSpec(
        words=tuple(i for i, k in zip(ids, keep) if k),
        h=np.asarray(heights, dtype=np.int64)[keep],
        p_a=w[keep] / total,
        provenance=meta.get("provenance", "synthetic"),
        truncation_residual=float(meta.get("truncation_residual", 0.0)),
        beta_hint=float(meta.get("beta_hint", math.nan)),
    )


def synthetic_spec(beta: float, h_max: int | None = None,
                   residual_target: float = 1e-6) -> TowerSpec:
    """One word per height k with P_A(h = k) proportional to k^{-beta-1}.

    Then P_A(h >= k) ~ k^{-beta} / (beta zeta(beta+1)).  Truncated at h_max
    (chosen to meet residual_target when not given); the dropped mass is
    recorded as truncation_residual.
    """
    s = beta + 1.0
    total = float(zeta(s, 1))
    if h_max is None:
        h_max = 8
        while True:
            if float(zeta(s, h_max + 1)) / total < residual_target:
                break
            h_max *= 2
        # tighten by bisection
        lo, hi = h_max // 2, h_max
        while lo + 1 < hi:
            mid = (lo + hi) // 2
            if float(zeta(s, mid + 1)) / total < residual_target:
                hi = mid
            else:
                lo = mid
        h_max = hi
    ks = np.arange(1, h_max + 1, dtype=np.int64)
    w = ks.astype(np.float64) ** (-s)
    residual = float(zeta(s, h_max + 1)) / total
    return TowerSpec(
        words=tuple(f"h{k}" for k in ks),
        h=ks,
        p_a=w / w.sum(),
        provenance="synthetic",
        truncation_residual=residual,
        beta_hint=beta,
    )


def stationary_nu(spec: TowerSpec) -> np.ndarray:
    """Stationary mass over flattened states: nu(w, l) = P_A(w) / E_A(h)."""
    nu = np.empty(spec.n_states)
    off = spec.offsets
    for i in range(spec.n_words):
        nu[off[i]: off[i] + spec.h[i]] = spec.p_a[i] / spec.mean_height
    return nu


def update(spec: TowerSpec, state, eps: int):
    """One innovation step: climb below the ceiling, jump to (eps, 0) at it."""
    wi, level = state
    if not (0 <= wi < spec.n_words and 0 <= level < spec.h[wi]):
        raise ValueError(f"invalid state {state}")
    if not 0 <= eps < spec.n_words:
        raise ValueError(f"invalid innovation {eps}")
    if level + 1 < spec.h[wi]:
        return (wi, level + 1)
    return (eps, 0)


def transition_matrix(spec: TowerSpec) -> np.ndarray:
    """Exact one-step transition matrix over flattened states."""
    n = spec.n_states
    mat = np.zeros((n, n))
    off = spec.offsets
    for i in range(spec.n_words):
        for l in range(spec.h[i] - 1):
            mat[off[i] + l, off[i] + l + 1] = 1.0
        ceil = off[i] + spec.h[i] - 1
        for j in range(spec.n_words):
            mat[ceil, off[j]] = spec.p_a[j]
    return mat


# ---------------------------------------------------------------------------
# Sampling kernels

@njit(cache=True, inline="always")
def _sample_cdf(cdf, u):
    lo, hi = 0, cdf.size - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cdf[mid] < u:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, inline="always")
def _sample_nu(h, nu_word_cdf, state):
    """Draw (word, level) from the stationary law."""
    state, u = next_uniform(state)
    wi = _sample_cdf(nu_word_cdf, u)
    state, v = next_uniform(state)
    level = int(v * h[wi])
    if level >= h[wi]:
        level = h[wi] - 1
    return state, wi, level


@njit(cache=True, parallel=True)
def _meeting_batch(h, word_cdf, nu_word_cdf, master, rep0, n_reps, n_max):
    t_out = np.empty(n_reps, dtype=np.int64)
    ts_out = np.empty(n_reps, dtype=np.int64)
    for r in prange(n_reps):
        st = stream_seed(np.uint64(master), np.uint64(rep0 + r))
        st, w1, l1 = _sample_nu(h, nu_word_cdf, st)
        st, w2, l2 = _sample_nu(h, nu_word_cdf, st)
        t = np.int64(-1)
        tstar = np.int64(-1)
        if l1 == h[w1] - 1 and l2 == h[w2] - 1:
            tstar = 0
        if w1 == w2 and l1 == l2:
            t = 0
        n = 0
        while n < n_max and (t < 0 or tstar < 0):
            st, u = next_uniform(st)
            eps = _sample_cdf(word_cdf, u)
            if l1 + 1 < h[w1]:
                l1 += 1
            else:
                w1, l1 = eps, 0
            if l2 + 1 < h[w2]:
                l2 += 1
            else:
                w2, l2 = eps, 0
            n += 1
            if t < 0 and w1 == w2 and l1 == l2:
                t = n
            if tstar < 0 and l1 == h[w1] - 1 and l2 == h[w2] - 1:
                tstar = n
        t_out[r] = t
        ts_out[r] = tstar
    return t_out, ts_out


@njit(cache=True)
def _chain_path(h, word_cdf, nu_word_cdf, seed, n, from_nu, w0, l0):
    words = np.empty(n + 1, dtype=np.int64)
    levels = np.empty(n + 1, dtype=np.int64)
    eps = np.empty(n, dtype=np.int64)
    st = np.uint64(seed)
    if from_nu:
        st, w, l = _sample_nu(h, nu_word_cdf, st)
    else:
        w, l = w0, l0
    words[0], levels[0] = w, l
    for i in range(n):
        st, u = next_uniform(st)
        e = _sample_cdf(word_cdf, u)
        eps[i] = e
        if l + 1 < h[w]:
            l += 1
        else:
            w, l = e, 0
        words[i + 1], levels[i + 1] = w, l
    return words, levels, eps


@dataclass
class CoupledRun:
    """Two trajectories sharing innovations, with the realized meeting time."""

    path: np.ndarray  # (n+1, 2) of (word, level)
    path_star: np.ndarray
    T: int | None  # None when censored at n_max
    T_star: int | None
    n_max: int

    @property
    def censored(self) -> bool:
        return self.T is None


def coupled_run(spec: TowerSpec, seed: int, n_max: int) -> CoupledRun:
    """Run one coupled pair from independent stationary starts."""
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    h = spec.h
    st = stream_seed(np.uint64(seed), np.uint64(0))
    st, w1, l1 = _sample_nu(h, spec.nu_word_cdf(), np.uint64(st))
    st, w2, l2 = _sample_nu(h, spec.nu_word_cdf(), np.uint64(st))
    wcdf = spec.word_cdf()
    path = [(w1, l1)]
    path_star = [(w2, l2)]
    t = 0 if (w1, l1) == (w2, l2) else None
    tstar = 0 if (l1 == h[w1] - 1 and l2 == h[w2] - 1) else None
    for n in range(1, n_max + 1):
        st, u = next_uniform(np.uint64(st))
        eps = _sample_cdf(wcdf, u)
        w1, l1 = update(spec, (w1, l1), eps)
        w2, l2 = update(spec, (w2, l2), eps)
        path.append((w1, l1))
        path_star.append((w2, l2))
        if t is None and (w1, l1) == (w2, l2):
            t = n
        if tstar is None and l1 == h[w1] - 1 and l2 == h[w2] - 1:
            tstar = n
        if t is not None and tstar is not None:
            break
    run = CoupledRun(np.array(path), np.array(path_star), t, tstar, n_max)
    if run.T is not None and run.T_star is not None:
        assert run.T <= run.T_star + 1
    return run


def meeting_times(spec: TowerSpec, master_seed: int, n_runs: int,
                  n_max: int, rep0: int = 0):
    """Batch meeting times; (T, T_star) arrays with -1 marking censoring.

    Replica r uses a stream derived from (master_seed, rep0 + r), so the
    aggregate is independent of how replicas are sharded.
    """
    return _meeting_batch(spec.h, spec.word_cdf(), spec.nu_word_cdf(),
                          np.uint64(master_seed), rep0, n_runs, n_max)


def run_chain(spec: TowerSpec, start, seed: int, n: int):
    """Trajectory of n+1 states; start is (word, level) or the string 'nu'.

    Returns (states, innovations): states is an (n+1, 2) int array, and
    innovations the n word draws used along the way.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    from_nu = start == "nu"
    w0, l0 = (0, 0) if from_nu else start
    if not from_nu:
        if not (0 <= w0 < spec.n_words and 0 <= l0 < spec.h[w0]):
            raise ValueError(f"invalid start state {start}")
    words, levels, eps = _chain_path(
        spec.h, spec.word_cdf(), spec.nu_word_cdf(),
        np.uint64(stream_seed(np.uint64(seed), np.uint64(0))), n, from_nu, w0, l0)
    return np.stack([words, levels], axis=1), eps


def separation(a, b, lam: float = 2.0):
    """Separation count s and metric d = lam^{-s} for two state sequences.

    s counts visits to level 0 within the longest common prefix; identical
    sequences give (inf, 0); divergence at index 0 gives (0, 1).
    """
    if len(a) == 0 or len(b) == 0:
        raise ValueError("sequences must be nonempty")
    if lam <= 1:
        raise ValueError("lam must exceed 1")
    a = np.asarray(a)
    b = np.asarray(b)
    n = min(len(a), len(b))
    agree = np.all(a[:n] == b[:n], axis=1)
    if agree.all() and len(a) == len(b):
        return math.inf, 0.0
    if not agree[0]:
        return 0, 1.0
    div = n if agree.all() else int(np.argmin(agree))
    s = int(np.sum(a[:div, 1] == 0))
    return s, lam ** (-s)


def induce_aperiodic(spec: TowerSpec) -> TowerSpec:
    """The induced aperiodic spec with heights h/p, p = gcd of heights."""
    p = spec.period
    if p < 2:
        raise NotPeriodic("spec already has period 1")
    return TowerSpec(
        words=spec.words,
        h=spec.h // p,
        p_a=spec.p_a.copy(),
        provenance=spec.provenance,
        truncation_residual=spec.truncation_residual,
        beta_hint=spec.beta_hint,
    )


# ---------------------------------------------------------------------------
# I/O

def spec_to_file(spec: TowerSpec, path, seed=None) -> None:
    doc = {
        "words": [
            {"id": str(w), "h": int(hh), "weight": float(pp)}
            for w, hh, pp in zip(spec.words, spec.h, spec.p_a)
        ],
        "beta_hint": None if math.isnan(spec.beta_hint) else spec.beta_hint,
        "seed": seed,
        "provenance": spec.provenance,
        "truncation_residual": spec.truncation_residual,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)


def spec_from_file(path) -> TowerSpec:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("beta_hint") is None:
        doc["beta_hint"] = math.nan
    return validate_spec(doc)


def meeting_times_to_csv(path, t, t_star) -> None:
    """CSV with columns run_id, T, censored_flag, T_star (-1 = censored)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["run_id", "T", "censored_flag", "T_star"])
        for i, (ti, tsi) in enumerate(zip(t, t_star)):
            w.writerow([i, int(ti), int(ti < 0), int(tsi)])


def meeting_times_from_csv(path):
    t, ts = [], []
    with open(path, encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t.append(int(row["T"]))
            ts.append(int(row["T_star"]))
    return np.asarray(t, dtype=np.int64), np.asarray(ts, dtype=np.int64)
