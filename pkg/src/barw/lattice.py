"""Occupancy configurations on a finite torus and local density kernels.

Configurations are {0,1}-valued fields on a d-dimensional torus with
equal extent per axis.  Local densities are averages over sup-norm
balls; the batched kernel computes them with one exact integer
sliding-window pass per axis, so its cost is independent of the ball
radius and its rounding path (integer count, one float division) is
identical to the naive per-site sum.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .noise import NoiseField

SNAPSHOT_MAGIC = b"BARW"
SNAPSHOT_VERSION = 1


class BallTooLargeError(ValueError):
    """A sup-norm ball of radius r needs 2r+1 <= side to not self-overlap."""


@dataclass(frozen=True)
class Config:
    """Bit occupancy field on the d-dimensional torus of extent side^d."""

    d: int
    side: int
    occupancy: np.ndarray  # uint8, shape (side,) * d, values in {0, 1}

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupancy, dtype=np.uint8)
        if occ.shape != (self.side,) * self.d:
            raise ValueError(f"occupancy shape {occ.shape} != {(self.side,) * self.d}")
        if occ.max(initial=0) > 1:
            raise ValueError("occupancy values must be 0 or 1")
        object.__setattr__(self, "occupancy", occ)

    @property
    def num_sites(self) -> int:
        return self.side**self.d

    def particle_count(self) -> int:
        return int(np.count_nonzero(self.occupancy))

    def global_density(self) -> float:
        return self.particle_count() / self.num_sites

    def is_empty(self) -> bool:
        return self.particle_count() == 0

    def occupied_sites(self) -> np.ndarray:
        """Coordinates of occupied sites, shape (count, d)."""
        return np.argwhere(self.occupancy != 0)

    def translate(self, v) -> "Config":
        """Torus translation: result(x) = self(x - v)."""
        occ = np.roll(self.occupancy, shift=tuple(int(vi) for vi in np.atleast_1d(v)), axis=tuple(range(self.d)))
        return Config(self.d, self.side, occ)


@dataclass(frozen=True)
class DensityField:
    """Per-site ball-averaged density of a Config at a fixed radius."""

    d: int
    side: int
    radius: int
    values: np.ndarray  # float64, shape (side,) * d, in [0, 1]

    def at(self, x) -> float:
        return float(self.values[tuple(int(c) % self.side for c in np.atleast_1d(x))])


def _require_ball_fits(side: int, r: int):
    if 2 * r + 1 > side:
        raise BallTooLargeError(f"ball radius {r} needs side >= {2 * r + 1}, got {side}")


def box_count(occ: np.ndarray, r: int, axes=None) -> np.ndarray:
    """Exact occupied count in B_r(x) for every x, torus-wrapped.

    One wrap-extended cumulative sum per axis, O(d * side^d) total.
    `axes` restricts the window to a subset of axes (used by batched
    simulations whose leading axis enumerates independent replicas).
    """
    a = occ.astype(np.int64, copy=False)
    v = 2 * r + 1
    for axis in range(a.ndim) if axes is None else axes:
        side = a.shape[axis]
        _require_ball_fits(side, r)
        ext = np.concatenate([a, a.take(range(v - 1), axis=axis)], axis=axis)
        c = np.cumsum(ext, axis=axis, dtype=np.int64)
        pad = np.zeros_like(c.take([0], axis=axis))
        p = np.concatenate([pad, c], axis=axis)
        # window starting at s sums ext[s : s + v]
        starts = p.take(range(v, side + v), axis=axis) - p.take(range(side), axis=axis)
        a = np.roll(starts, r, axis=axis)
    return a


def ball_volume(r: int, d: int) -> int:
    return (2 * r + 1) ** d


def local_density(cfg: Config, x, r: int) -> float:
    """Fraction of occupied sites in the sup-norm ball B_r(x)."""
    _require_ball_fits(cfg.side, r)
    x = np.atleast_1d(x)
    idx = [(np.arange(int(c) - r, int(c) + r + 1)) % cfg.side for c in x]
    window = cfg.occupancy[np.ix_(*idx)]
    return int(window.sum(dtype=np.int64)) / ball_volume(r, cfg.d)


def density_field(cfg: Config, r: int) -> DensityField:
    """All local densities at radius r; bit-identical to per-site sums."""
    counts = box_count(cfg.occupancy, r)
    values = counts / float(ball_volume(r, cfg.d))
    return DensityField(cfg.d, cfg.side, r, values)


def site_grid(d: int, side: int) -> np.ndarray:
    """All lattice points of the torus, shape (side**d, d), row-major order."""
    axes = np.indices((side,) * d)
    return axes.reshape(d, -1).T.copy()


def bernoulli_product_init(noise: NoiseField, n: int, p: float, d: int, side: int) -> Config:
    """I.i.d. Bernoulli(p) occupancy driven by the noise field at time n."""
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must be in [0, 1], got {p}")
    u = noise.uniform_from_site_hash(noise.site_hash(site_grid(d, side)), n)
    occ = (u < p).astype(np.uint8).reshape((side,) * d)
    return Config(d, side, occ)


def save_snapshot(path, cfg: Config, time_index: int, seed: int, stream_id: int):
    """Write the snapshot format: 'BARW', version, geometry, time, key, packed bits."""
    header = SNAPSHOT_MAGIC + struct.pack(
        "<HHqQQQ", SNAPSHOT_VERSION, cfg.d, time_index, cfg.side, seed, stream_id
    )
    packed = np.packbits(cfg.occupancy.reshape(-1), bitorder="little")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(packed.tobytes())


def load_snapshot(path):
    """Read a snapshot; returns (Config, meta dict). Bit-exact round trip."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a BARW snapshot (bad magic)")
    header_size = 4 + struct.calcsize("<HHqQQQ")
    version, d, time_index, side, seed, stream_id = struct.unpack("<HHqQQQ", raw[4:header_size])
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    side = int(side)
    d = int(d)
    n_sites = side**d
    bits = np.unpackbits(
        np.frombuffer(raw[header_size:], dtype=np.uint8), count=n_sites, bitorder="little"
    )
    cfg = Config(d, side, bits.reshape((side,) * d))
    meta = {"time_index": int(time_index), "seed": int(seed), "stream_id": int(stream_id)}
    return cfg, meta
