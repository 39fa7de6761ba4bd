"""Deterministic seed derivation and streams.

Every source of randomness in the package is derived from a master seed
plus a tuple of context labels / indices via a counter-based scheme
(FNV-1a folding + splitmix64).  Per-replica streams therefore depend only
on the replica index, never on the shard layout, which is what makes
sharded aggregates reproducible.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _fnv1a(data: bytes, state: int = _FNV_OFFSET) -> int:
    for b in data:
        state = ((state ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return state


def _splitmix64_py(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def derive_seed(master_seed: int, *context) -> int:
    """Fold a master seed and context labels into a 64-bit stream seed.

    Context items may be ints or strings; the result is stable across
    runs and platforms.
    """
    state = _fnv1a(int(master_seed).to_bytes(8, "little", signed=False))
    for item in context:
        if isinstance(item, str):
            state = _fnv1a(item.encode("utf-8"), state)
        else:
            state = _fnv1a(int(item).to_bytes(8, "little", signed=True), state)
    return _splitmix64_py(state)


def generator(master_seed: int, *context) -> np.random.Generator:
    """A numpy Generator on an independent Philox stream for this context."""
    return np.random.Generator(np.random.Philox(key=derive_seed(master_seed, *context)))


@njit(cache=True, inline="always")
def splitmix64(state):
    """Advance a splitmix64 state; returns (new_state, output)."""
    # Bit-preserving cast: callers at the Python boundary may hand us an
    # int64-typed state, which would otherwise turn the shifts arithmetic.
    state = (np.uint64(state) + np.uint64(0x9E3779B97F4A7C15)) & _MASK
    z = state
    z = ((z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
    z = ((z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True, inline="always")
def next_uniform(state):
    """(new_state, u) with u uniform on [0, 1) at 53-bit resolution."""
    state, z = splitmix64(state)
    return state, (z >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, inline="always")
def stream_seed(master, index):
    """Seed for the index-th replica stream of a numba kernel."""
    s = (np.uint64(master) ^ (np.uint64(index) * np.uint64(0x9E3779B97F4A7C15))) & _MASK
    s, z = splitmix64(s)
    return z
