"""Intermittent interval maps: iteration, branch inverses, first-return
structure, invariant-measure sampling and Birkhoff sums.

Three variants are supported: the polynomial intermittent map with a
neutral fixed point at 0 ("lsv"), its slowly-varying cousin ("hg") with
rho(x) = C |log x|^{(1+eps)*gamma}, and the doubling map ("doubling")
used as an exact test fixture.  All maps send [0,1] to itself, fix
f(1/2) = 1 for the two intermittent variants, and use the affine branch
2x - 1 on (1/2, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from ._rng import next_uniform, stream_seed

Y_LEFT = 0.5

LSV, HG, DOUBLING = 0, 1, 2
_VARIANTS = {"lsv": LSV, "hg": HG, "doubling": DOUBLING}


class CapExceeded(RuntimeError):
    """A return-time search hit the iteration cap."""


@dataclass(frozen=True)
class MapModel:
    """An interval map variant with its intermittency parameter."""

    variant: str = "lsv"
    gamma: float = 0.5
    rho_eps: float = 0.5

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant != "doubling" and not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")

    @property
    def code(self) -> int:
        return _VARIANTS[self.variant]

    @property
    def beta(self) -> float:
        return math.inf if self.variant == "doubling" else 1.0 / self.gamma

    @property
    def rho_c(self) -> float:
        # Pinned so that f(1/2) = 1 for the hg branch.
        g, e = self.gamma, self.rho_eps
        return 2.0**g * math.log(2.0) ** (-(1.0 + e) * g)

    def params(self):
        """(code, gamma, C, eps) tuple consumed by the numba kernels."""
        if self.variant == "doubling":
            return (DOUBLING, 0.0, 0.0, 0.0)
        return (self.code, self.gamma, self.rho_c, self.rho_eps)


@njit(cache=True, inline="always")
def _step_left(code, gamma, c, eps, x):
    if code == 2:
        return 2.0 * x
    if code == 0:
        return x * (1.0 + 2.0**gamma * x**gamma)
    # hg: rho(x) = C * (-log x)^((1+eps)*gamma), valid for x in (0, 1/2]
    rho = c * (-math.log(x)) ** ((1.0 + eps) * gamma)
    return x * (1.0 + x**gamma * rho)


@njit(cache=True, inline="always")
def _deriv_left(code, gamma, c, eps, x):
    if code == 2:
        return 2.0
    if code == 0:
        return 1.0 + 2.0**gamma * (1.0 + gamma) * x**gamma
    u = -math.log(x)
    a = (1.0 + eps) * gamma
    rho = c * u**a
    drho = -c * a * u ** (a - 1.0) / x
    return 1.0 + (1.0 + gamma) * x**gamma * rho + x ** (1.0 + gamma) * drho


@njit(cache=True, inline="always")
def _step(code, gamma, c, eps, x):
    if x > 0.5:
        return 2.0 * x - 1.0
    if x <= 0.0:
        return 0.0
    y = _step_left(code, gamma, c, eps, x)
    if y > 1.0:
        y = 1.0
    return y


@njit(cache=True, inline="always")
def _advance(code, gamma, c, eps, st, x):
    """One orbit step for invariant-measure sampling.

    For the doubling fixture a fresh random low-order bit is injected each
    step: 2x mod 1 is exact in binary floating point but consumes one
    mantissa bit per iterate, so a deterministic orbit collapses to 0 after
    ~53 steps.  Re-injecting i.i.d. bottom bits reproduces the shift on an
    i.i.d. binary digit stream, which is the correct stationary process.
    """
    if code == 2:
        st, u = next_uniform(st)
        x = 2.0 * x
        if x >= 1.0:
            x -= 1.0
        if u < 0.5:
            x += 1.1102230246251565e-16  # 2^-53
            if x >= 1.0:
                x -= 1.0
        return st, x
    return st, _step(code, gamma, c, eps, x)


@njit(cache=True)
def _left_preimage(code, gamma, c, eps, y):
    """Unique x in (0, 1/2] with f(x) = y, for y in (0, 1]."""
    if code == 2:
        return 0.5 * y
    lo, hi = 0.0, 0.5
    # Bisect until the bracket is narrow, then polish with Newton.
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid <= 0.0:
            break
        if _step_left(code, gamma, c, eps, mid) < y:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-6 * max(hi, 1e-300):
            break
    x = 0.5 * (lo + hi)
    for _ in range(100):
        fx = _step_left(code, gamma, c, eps, x)
        if fx < y:
            lo = x
        else:
            hi = x
        xn = x - (fx - y) / _deriv_left(code, gamma, c, eps, x)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)  # safeguarded bisection step
        if abs(xn - x) <= 1e-16 * x:
            return xn
        x = xn
    return x


@njit(cache=True)
def _return_time(code, gamma, c, eps, y, cap):
    """(tau, F(y)) for y in (1/2, 1]; tau = 0 signals the cap was hit."""
    x = _step(code, gamma, c, eps, y)
    tau = 1
    while x <= 0.5:
        if tau >= cap:
            return 0, x
        x = _step(code, gamma, c, eps, x)
        tau += 1
    return tau, x


def step(model: MapModel, x: float) -> float:
    """One application of the map; branch chosen by x <= 1/2."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x = {x} outside [0, 1]")
    return _step(*model.params(), x)


def left_preimage(model: MapModel, y: float) -> float:
    """Inverse of the left branch on (0, 1]."""
    if not 0.0 < y <= 1.0:
        raise ValueError(f"y = {y} outside (0, 1]")
    return _left_preimage(*model.params(), y)


def return_time(model: MapModel, y: float, cap: int = 100_000_000):
    """First return time to Y = (1/2, 1] and the induced image F(y)."""
    if not Y_LEFT < y <= 1.0:
        raise ValueError(f"y = {y} outside (1/2, 1]")
    tau, fy = _return_time(*model.params(), y, cap)
    if tau == 0:
        raise CapExceeded(f"no return within {cap} iterations from y = {y}")
    return tau, fy


@dataclass(frozen=True)
class ReturnPartition:
    """Endpoints of the first-return cylinders in Y = (1/2, 1].

    xi[0] = 1/2 and xi[k] is the k-th left-branch preimage, so the
    tau = n cell is ((1+xi[n-1])/2, (1+xi[n-2])/2] for n >= 2 and
    (3/4, 1] for n = 1.  Under normalized Lebesgue measure on Y,
    m(tau >= n) = xi[n-2] for n >= 2.
    """

    model: MapModel
    xi: np.ndarray
    max_n: int

    def cell(self, n: int):
        """The (left, right] interval of the tau = n cylinder in Y."""
        if not 1 <= n <= self.max_n:
            raise ValueError(f"n = {n} outside [1, {self.max_n}]")
        if n == 1:
            return (0.75, 1.0)
        return ((1.0 + self.xi[n - 1]) / 2.0, (1.0 + self.xi[n - 2]) / 2.0)

    def tail(self, n: int) -> float:
        """Exact m(tau >= n) under normalized Lebesgue on Y."""
        if not 1 <= n <= self.max_n:
            raise ValueError(f"n = {n} outside [1, {self.max_n}]")
        if n == 1:
            return 1.0
        return float(self.xi[n - 2])

    def cell_mass(self, n: int) -> float:
        """Exact m(tau = n)."""
        hi = self.tail(n)
        lo = self.xi[n - 1] if n <= self.max_n - 1 else 0.0
        if n == self.max_n:
            lo = float(self.xi[n - 1])
        return hi - lo

    def to_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "xi_n", "tail_n"])
            for n in range(1, self.max_n + 1):
                w.writerow([n, repr(float(self.xi[n - 1])), repr(self.tail(n))])


def partition(model: MapModel, max_n: int) -> ReturnPartition:
    """Compute the first-return partition down to the tau = max_n cell."""
    if max_n < 2:
        raise ValueError("max_n must be >= 2")
    code, gamma, c, eps = model.params()
    xi = np.empty(max_n)
    xi[0] = 0.5
    for k in range(1, max_n):
        xi[k] = _left_preimage(code, gamma, c, eps, xi[k - 1])
    return ReturnPartition(model, xi, max_n)


def tau_tail(part: ReturnPartition, n: int) -> float:
    return part.tail(n)


# ---------------------------------------------------------------------------
# Observables

HOELDER_POWER, BUMP, PIECEWISE_HOELDER, COBOUNDARY, CUSTOM = 0, 1, 2, 3, 4
_OBS_KINDS = {
    "hoelder_power": HOELDER_POWER,
    "bump": BUMP,
    "piecewise_hoelder": PIECEWISE_HOELDER,
    "coboundary": COBOUNDARY,
    "custom": CUSTOM,
}


@njit(cache=True, inline="always")
def _obs_raw(kind, p1, p2, code, gamma, c, eps, x):
    """Uncentered observable value at x."""
    if kind == 0:  # hoelder power x^p1
        return x**p1
    if kind == 1:  # bump supported on Y, equal to 1 on the core [p1, p2]
        dy = x - 0.5
        if dy <= 0.0:
            return 0.0
        dk = p1 - x
        if x > p2:
            dk = x - p2
        if dk <= 0.0:
            return 1.0
        return dy / (dy + dk)
    if kind == 2:  # x^p1 on the left half, x^p1 - p2 on the right half
        if x <= 0.5:
            return x**p1
        return x**p1 - p2
    if kind == 3:  # coboundary of u(x) = cos(2 pi x)
        return math.cos(2.0 * math.pi * x) - math.cos(
            2.0 * math.pi * _step(code, gamma, c, eps, x)
        )
    return 0.0


@dataclass(frozen=True)
class Observable:
    """A bounded observable on [0,1] with a stored centering offset."""

    kind: str
    p1: float = 0.0
    p2: float = 0.0
    offset: float = 0.0
    offset_stderr: float = 0.0
    sup_norm: float = 1.0
    model: MapModel = field(default_factory=MapModel)
    fn: object = None  # custom kinds only

    @property
    def code(self) -> int:
        return _OBS_KINDS[self.kind]

    def obs_params(self):
        return (self.code, self.p1, self.p2)

    def __call__(self, x):
        if self.kind == "custom":
            return self.fn(x) - self.offset
        kind, p1, p2 = self.obs_params()
        code, gamma, c, eps = self.model.params()
        if np.ndim(x) == 0:
            return _obs_raw(kind, p1, p2, code, gamma, c, eps, float(x)) - self.offset
        xs = np.asarray(x, dtype=np.float64)
        out = np.empty_like(xs)
        for i, v in enumerate(xs.ravel()):
            out.ravel()[i] = _obs_raw(kind, p1, p2, code, gamma, c, eps, v)
        return out - self.offset


# ---------------------------------------------------------------------------
# Orbit kernels

@njit(cache=True)
def _orbit_fill(code, gamma, c, eps, st, x0, burn_in, out):
    x = x0
    for _ in range(burn_in):
        st, x = _advance(code, gamma, c, eps, st, x)
    for i in range(out.size):
        out[i] = x
        st, x = _advance(code, gamma, c, eps, st, x)
    return x


@njit(cache=True)
def _orbit_fill_y(code, gamma, c, eps, st, x0, burn_in, cap, out):
    """Successive induced-map iterates within Y; returns 0 on success."""
    x = x0
    for _ in range(burn_in):
        st, x = _advance(code, gamma, c, eps, st, x)
    while x <= 0.5:
        st, x = _advance(code, gamma, c, eps, st, x)
    for i in range(out.size):
        out[i] = x
        st, x = _advance(code, gamma, c, eps, st, x)
        steps = 1
        while x <= 0.5:
            if steps >= cap:
                return 1
            st, x = _advance(code, gamma, c, eps, st, x)
            steps += 1
    return 0


def sample_invariant(model, seed, burn_in, n, conditioned_on_y=False, cap=100_000_000):
    """Orbit segment after burn-in from a Lebesgue-uniform start.

    With conditioned_on_y, returns successive first-return iterates in Y,
    approximating the induced invariant measure.
    """
    code, gamma, c, eps = model.params()
    st = stream_seed(np.uint64(seed), np.uint64(0))
    st, u = next_uniform(np.uint64(st))
    st = np.uint64(st)
    out = np.empty(n)
    if conditioned_on_y:
        bad = _orbit_fill_y(code, gamma, c, eps, st, u, burn_in, cap, out)
        if bad:
            raise CapExceeded("induced orbit hit the iteration cap")
    else:
        _orbit_fill(code, gamma, c, eps, st, u, burn_in, out)
    return out


@njit(cache=True)
def _birkhoff(code, gamma, c, eps, kind, p1, p2, offset, x, n):
    s = 0.0
    for _ in range(n):
        s += _obs_raw(kind, p1, p2, code, gamma, c, eps, x) - offset
        x = _step(code, gamma, c, eps, x)
    return s


def birkhoff_sum(model, obs, x, n):
    """Sum of the centered observable along the first n orbit points."""
    if n < 0:
        raise ValueError("n must be >= 0")
    if obs.kind == "custom":
        s = 0.0
        for _ in range(n):
            s += obs(x)
            x = step(model, x)
        return s
    code, gamma, c, eps = model.params()
    kind, p1, p2 = obs.obs_params()
    return _birkhoff(code, gamma, c, eps, kind, p1, p2, obs.offset, x, n)


@njit(cache=True)
def _orbit_average(code, gamma, c, eps, kind, p1, p2, seed, burn_in, n):
    """Long-orbit mean and batch-means stderr of the raw observable."""
    st = stream_seed(np.uint64(seed), np.uint64(0))
    st, x = next_uniform(st)
    for _ in range(burn_in):
        st, x = _advance(code, gamma, c, eps, st, x)
    n_batches = 64
    bsize = n // n_batches
    means = np.empty(n_batches)
    for b in range(n_batches):
        s = 0.0
        for _ in range(bsize):
            s += _obs_raw(kind, p1, p2, code, gamma, c, eps, x)
            st, x = _advance(code, gamma, c, eps, st, x)
        means[b] = s / bsize
    mu = means.mean()
    var = 0.0
    for b in range(n_batches):
        var += (means[b] - mu) ** 2
    var /= n_batches - 1
    return mu, math.sqrt(var / n_batches)


def make_observable(kind, model, seed=0, centering_budget=10_000_000,
                    burn_in=100_000, exponent=0.5, core=(0.75, 1.0),
                    jump=1.0, fn=None, center=True):
    """Build an observable and estimate its centering offset.

    The offset is a long-orbit average of length centering_budget; its
    batch-means standard error is stored on the observable.  Coboundary
    observables are exactly centered by construction.
    """
    if kind not in _OBS_KINDS:
        raise ValueError(f"unknown observable kind {kind!r}")
    p1 = p2 = 0.0
    sup = 1.0
    if kind == "hoelder_power":
        p1 = exponent
    elif kind == "bump":
        p1, p2 = core
        if p1 <= 0.5:
            raise ValueError("bump core must lie inside Y = (1/2, 1]")
    elif kind == "piecewise_hoelder":
        p1, p2 = exponent, jump
        sup = 1.0 + abs(jump)
    elif kind == "coboundary":
        sup = 2.0
    offset = stderr = 0.0
    if kind == "custom":
        obs = Observable("custom", model=model, fn=fn, sup_norm=sup)
        if center:
            xs = sample_invariant(model, seed, burn_in, centering_budget // 10)
            vals = np.array([fn(v) for v in xs[: 10**5]])
            offset, stderr = float(vals.mean()), float(vals.std() / len(vals) ** 0.5)
        return Observable("custom", model=model, fn=fn, offset=offset,
                          offset_stderr=stderr, sup_norm=sup)
    if center and kind != "coboundary":
        code, gamma, c, eps = model.params()
        offset, stderr = _orbit_average(code, gamma, c, eps, _OBS_KINDS[kind],
                                        p1, p2, seed, burn_in, centering_budget)
    return Observable(kind, p1, p2, offset, stderr, sup, model)


@njit(cache=True)
def _obs_series_batch(code, gamma, c, eps, kind, p1, p2, offset,
                      master, rep0, n_reps, burn_in, n_steps):
    out = np.empty((n_reps, n_steps))
    for r in range(n_reps):
        st = stream_seed(np.uint64(master), np.uint64(rep0 + r))
        st, x = next_uniform(st)
        for _ in range(burn_in):
            st, x = _advance(code, gamma, c, eps, st, x)
        for i in range(n_steps):
            out[r, i] = _obs_raw(kind, p1, p2, code, gamma, c, eps, x) - offset
            st, x = _advance(code, gamma, c, eps, st, x)
    return out


def observable_series(model, obs, master_seed, n_reps, n_steps,
                      burn_in=100_000, rep0=0):
    """(n_reps, n_steps) array of centered observable values along
    independent orbits started from the invariant measure."""
    code, gamma, c, eps = model.params()
    kind, p1, p2 = obs.obs_params()
    return _obs_series_batch(code, gamma, c, eps, kind, p1, p2, obs.offset,
                             np.uint64(master_seed), rep0, n_reps, burn_in, n_steps)


@njit(cache=True)
def _birkhoff_batch(code, gamma, c, eps, kind, p1, p2, offset,
                    master, rep0, n_reps, burn_in, n):
    out = np.empty(n_reps)
    for r in range(n_reps):
        st = stream_seed(np.uint64(master), np.uint64(rep0 + r))
        st, x = next_uniform(st)
        for _ in range(burn_in):
            st, x = _advance(code, gamma, c, eps, st, x)
        s = 0.0
        for _ in range(n):
            s += _obs_raw(kind, p1, p2, code, gamma, c, eps, x) - offset
            st, x = _advance(code, gamma, c, eps, st, x)
        out[r] = s
    return out


def birkhoff_sums(model, obs, master_seed, n_reps, n, burn_in=100_000, rep0=0):
    """Birkhoff sums of length n over independent invariant-measure starts."""
    code, gamma, c, eps = model.params()
    kind, p1, p2 = obs.obs_params()
    return _birkhoff_batch(code, gamma, c, eps, kind, p1, p2, obs.offset,
                           np.uint64(master_seed), rep0, n_reps, burn_in, n)


@njit(cache=True)
def _return_times_batch(code, gamma, c, eps, master, rep0, n_reps, cap):
    out = np.empty(n_reps, dtype=np.int64)
    for r in range(n_reps):
        st = stream_seed(np.uint64(master), np.uint64(rep0 + r))
        st, u = next_uniform(st)
        y = 0.5 + 0.5 * u
        tau, _ = _return_time(code, gamma, c, eps, y, cap)
        out[r] = tau
    return out


def return_times_uniform(model, master_seed, n_reps, cap=100_000_000, rep0=0):
    """Return times of n_reps uniform samples in Y (0 never occurs: cap errors raise)."""
    code, gamma, c, eps = model.params()
    taus = _return_times_batch(code, gamma, c, eps, np.uint64(master_seed),
                               rep0, n_reps, cap)
    if (taus == 0).any():
        raise CapExceeded("a uniform Y sample failed to return within the cap")
    return taus


@njit(cache=True)
def _induced_orbit_taus(code, gamma, c, eps, seed, burn_in, n, cap):
    st = stream_seed(np.uint64(seed), np.uint64(0))
    st, x = next_uniform(st)
    for _ in range(burn_in):
        st, x = _advance(code, gamma, c, eps, st, x)
    while x <= 0.5:
        st, x = _advance(code, gamma, c, eps, st, x)
    taus = np.empty(n, dtype=np.int64)
    for i in range(n):
        st, x = _advance(code, gamma, c, eps, st, x)
        tau = 1
        while x <= 0.5:
            if tau >= cap:
                taus[i] = 0
                return taus
            st, x = _advance(code, gamma, c, eps, st, x)
            tau += 1
        taus[i] = tau
    return taus


def induced_orbit_return_times(model, seed, n, burn_in=100_000, cap=100_000_000):
    """Return-time sequence tau(F^k y) along one induced-map trajectory."""
    code, gamma, c, eps = model.params()
    taus = _induced_orbit_taus(code, gamma, c, eps, seed, burn_in, n, cap)
    if (taus == 0).any():
        raise CapExceeded("induced orbit hit the iteration cap")
    return taus
