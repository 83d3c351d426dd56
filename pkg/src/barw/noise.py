"""Deterministic driving-noise field.

The simulator needs one uniform random variable per space-time site,
defined simultaneously on the whole lattice and for all (possibly
negative) times, so that different initial conditions can be evolved
under literally the same randomness and so that environments can be
replayed without storing them.  A stateful generator cannot do this;
a counter-based pseudorandom function can: the value at (x, n) is a
keyed hash of (seed, stream_id, x, n) mapped to a 53-bit mantissa
uniform in [0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_U64 = np.uint64

# Multipliers from the MurmurHash3 64-bit finalizer; the chain below
# applies the finalizer between absorbed words, which is enough
# avalanche for Monte Carlo use (this is not a cryptographic PRF).
_M1 = _U64(0xFF51AFD7ED558CCD)
_M2 = _U64(0xC4CEB9FE1A85EC53)
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_SHIFT = _U64(33)
_INV53 = float(2.0**-53)


def _fmix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> _SHIFT)) * _M1
    z = (z ^ (z >> _SHIFT)) * _M2
    return z ^ (z >> _SHIFT)


def _as_u64(values) -> np.ndarray:
    # Two's complement for negative coordinates / time indices.
    return np.asarray(values, dtype=np.int64).astype(np.uint64)


@dataclass(frozen=True)
class NoiseField:
    """Keyed family U(x, n) of i.i.d. uniforms on [0, 1).

    Two fields with different (seed, stream_id) are independent for
    all practical purposes; stream_id separates replicas of the same
    experiment.
    """

    seed: int
    stream_id: int = 0

    def _key(self) -> np.uint64:
        mask = 0xFFFFFFFFFFFFFFFF
        k = _fmix64(np.asarray([int(self.seed) & mask], dtype=np.uint64) + _GOLDEN)
        k = _fmix64(k ^ (np.asarray([int(self.stream_id) & mask], dtype=np.uint64) * _M1 + _GOLDEN))
        return k[0]

    def site_hash(self, x) -> np.ndarray:
        """Time-independent part of the hash for sites ``x``.

        ``x`` has shape (..., d); the result has shape (...).  Cached by
        callers that sweep the same lattice every step.
        """
        x = np.atleast_2d(np.asarray(x))
        h = np.broadcast_to(self._key(), x.shape[:-1]).copy()
        h = _fmix64(h ^ _as_u64(x.shape[-1]))
        for i in range(x.shape[-1]):
            h = _fmix64(h ^ (_as_u64(x[..., i]) + _GOLDEN))
        return h

    def uniform_from_site_hash(self, site_hash: np.ndarray, n) -> np.ndarray:
        h = _fmix64(site_hash ^ _fmix64(_as_u64(np.broadcast_to(n, site_hash.shape)) + _GOLDEN))
        return (h >> _U64(11)).astype(np.float64) * _INV53


def uniform_at(field: NoiseField, x, n):
    """U(x, n) for a single lattice point or an array of them.

    ``x`` is a length-d sequence (one point) or an array of shape
    (..., d); ``n`` is an integer time index, broadcastable against the
    leading shape of ``x``.  Pure: identical inputs give bit-identical
    outputs in [0, 1).
    """
    x = np.asarray(x)
    single = x.ndim <= 1
    out = field.uniform_from_site_hash(field.site_hash(x), n)
    if single:
        return float(out.reshape(-1)[0])
    return out
