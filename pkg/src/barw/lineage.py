"""Ancestral lineages as random walks in the stored environment.

A particle's lineage, read forward in walk time, moves backward
through the environment history: at each step it selects a uniformly
random occupied site within sup-norm distance R one generation
earlier.  The walk positions live on Z^d (unwrapped); environment
lookups wrap around the torus.  Increments decompose exactly into a
drift part (the conditional mean given the neighbourhood, an integer
vector over an integer denominator) and a martingale part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .dynamics import ModelParams, ParentMap, burn_in_stationary, step, theta, varphi
from .lattice import Config, box_count
from .noise import NoiseField
from .renorm import Scales


class EmptyNeighborhoodError(RuntimeError):
    """No occupied site within distance R at the parent time.

    Impossible along genuine dynamics (every particle has a parent);
    an occurrence signals a corrupted environment or mismatched times.
    """


class MissingParentError(KeyError):
    pass


@dataclass(frozen=True)
class EnvHistory:
    """Bit-packed ring of environment snapshots plus the noise handle.

    Snapshot at time t equals the flow applied to the snapshot at any
    earlier retained time under `noise`; storage exists for random
    access, replay from noise is used to validate it.
    """

    params: ModelParams
    side: int
    t_lo: int
    packed: np.ndarray  # (horizon + 1, packed bytes per snapshot)
    noise: NoiseField

    @property
    def t_hi(self) -> int:
        return self.t_lo + len(self.packed) - 1

    @property
    def horizon(self) -> int:
        return len(self.packed) - 1

    def occupancy_at(self, t: int) -> np.ndarray:
        if not self.t_lo <= t <= self.t_hi:
            raise IndexError(f"time {t} outside stored window [{self.t_lo}, {self.t_hi}]")
        d = self.params.d
        n_sites = self.side**d
        bits = np.unpackbits(self.packed[t - self.t_lo], count=n_sites, bitorder="little")
        return bits.reshape((self.side,) * d)

    def config_at(self, t: int) -> Config:
        return Config(self.params.d, self.side, self.occupancy_at(t))


def _pack(occ: np.ndarray) -> np.ndarray:
    return np.packbits(occ.reshape(-1), bitorder="little")


def build_env_history(
    params: ModelParams,
    noise: NoiseField,
    side: int,
    burn_in: int,
    horizon: int,
    retries: int = 5,
) -> EnvHistory:
    """Burn in to quasi-stationarity, then record `horizon` further steps."""
    res = burn_in_stationary(params, noise, burn_in, side, retries=retries)
    if res.extinct:
        raise RuntimeError(f"extinct after {res.attempts} burn-in attempts")
    cfg = res.config
    rows = [_pack(cfg.occupancy)]
    for k in range(horizon):
        cfg = step(cfg, params, res.noise, burn_in + k)
        rows.append(_pack(cfg.occupancy))
    if cfg.is_empty():
        raise RuntimeError("environment went extinct inside the lineage horizon")
    return EnvHistory(params, side, burn_in, np.stack(rows), res.noise)


@dataclass(frozen=True)
class AncestorDistribution:
    """Uniform law over occupied sites of B_R(x) one generation earlier."""

    x: np.ndarray
    displacements: np.ndarray  # (m, d), entries in [-R, R]

    @property
    def count(self) -> int:
        return len(self.displacements)

    @property
    def probabilities(self) -> list:
        # exact rational weights; they sum to 1 by construction
        return [Fraction(1, self.count)] * self.count

    def drift(self):
        """Conditional mean displacement as (integer vector, denominator)."""
        return self.displacements.sum(axis=0), self.count


def _window_offsets(d: int, R: int) -> np.ndarray:
    axes = [np.arange(-R, R + 1)] * d
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)


def ancestor_distribution(env: Config, x, R: int) -> AncestorDistribution:
    """Transition law of the lineage at x given the parent generation `env`."""
    x = np.atleast_1d(np.asarray(x)).astype(np.int64)
    idx = [(np.arange(int(c) - R, int(c) + R + 1)) % env.side for c in x]
    window = env.occupancy[np.ix_(*idx)].reshape(-1)
    offs = _window_offsets(env.d, R)
    occupied = offs[window != 0]
    if len(occupied) == 0:
        raise EmptyNeighborhoodError(f"B_{R}({tuple(int(c) for c in x)}) empty at parent time")
    return AncestorDistribution(x, occupied)


@dataclass(frozen=True)
class LineagePath:
    """Sampled ancestral trajectory with its exact drift decomposition.

    positions[k] is X_k on Z^d (unwrapped).  drift_num[k] over
    drift_den[k] is the conditional mean of X_{k+1} - X_k given X_k and
    the environment, stored exactly; the martingale increment is the
    difference.  Genealogy-derived paths carry no decomposition until
    `martingale_decomposition` fills it in.
    """

    positions: np.ndarray  # (K + 1, d) int64
    drift_num: Optional[np.ndarray] = None  # (K, d) int64
    drift_den: Optional[np.ndarray] = None  # (K,) int64

    @property
    def start(self) -> np.ndarray:
        return self.positions[0]

    @property
    def steps(self) -> int:
        return len(self.positions) - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)

    @property
    def drift_terms(self) -> np.ndarray:
        self._require_decomposition()
        return self.drift_num / self.drift_den[:, None]

    @property
    def martingale_increments(self) -> np.ndarray:
        return self.increments - self.drift_terms

    def _require_decomposition(self):
        if self.drift_num is None or self.drift_den is None:
            raise ValueError("path has no drift decomposition; run martingale_decomposition")

    def drift_fractions(self):
        """Exact drift terms as Fractions, shape (K, d) nested lists."""
        self._require_decomposition()
        return [
            [Fraction(int(n), int(den)) for n in num]
            for num, den in zip(self.drift_num, self.drift_den)
        ]

    def reconstruction_residual(self):
        """X_K - X_0 - (sum drift + sum Y) in exact rational arithmetic."""
        drift = self.drift_fractions()
        total = [Fraction(0)] * self.positions.shape[1]
        for k, inc in enumerate(self.increments):
            for i in range(len(total)):
                y = Fraction(int(inc[i])) - drift[k][i]
                total[i] += drift[k][i] + y
        end_to_end = self.positions[-1] - self.positions[0]
        return [Fraction(int(end_to_end[i])) - total[i] for i in range(len(total))]


def sample_lineage(
    history: EnvHistory, start, K: int, rng: np.random.Generator
) -> LineagePath:
    """Markov chain per the ancestor kernel, K steps from the top time."""
    if K > history.horizon:
        raise ValueError(f"K = {K} exceeds stored horizon {history.horizon}")
    start = np.atleast_1d(np.asarray(start)).astype(np.int64)
    top = history.t_hi
    if history.occupancy_at(top)[tuple(start % history.side)] == 0:
        raise ValueError(f"start {tuple(int(c) for c in start)} not occupied at top time")
    d = history.params.d
    R = history.params.R
    positions = np.zeros((K + 1, d), dtype=np.int64)
    positions[0] = start
    drift_num = np.zeros((K, d), dtype=np.int64)
    drift_den = np.zeros(K, dtype=np.int64)
    for k in range(K):
        env = history.config_at(top - k - 1)
        dist = ancestor_distribution(env, positions[k] % history.side, R)
        pick = int(rng.integers(dist.count))
        positions[k + 1] = positions[k] + dist.displacements[pick]
        num, den = dist.drift()
        drift_num[k] = num
        drift_den[k] = den
    return LineagePath(positions, drift_num, drift_den)


def _wrap_displacement(delta: np.ndarray, side: int) -> np.ndarray:
    return (delta + side // 2) % side - side // 2


def lineage_from_parent_maps(maps: Sequence[ParentMap], start) -> LineagePath:
    """Follow recorded genealogy backward from `start` at the newest generation.

    maps[i] connects generation i to generation i+1; the path has
    exactly len(maps) steps and no drift decomposition.
    """
    start = np.atleast_1d(np.asarray(start)).astype(np.int64)
    d = len(start)
    positions = np.zeros((len(maps) + 1, d), dtype=np.int64)
    positions[0] = start
    site = start.copy()
    for k, pm in enumerate(reversed(maps)):
        try:
            parent = np.asarray(pm.parent_of(site % pm.side), dtype=np.int64)
        except KeyError as exc:
            raise MissingParentError(str(exc)) from exc
        hop = _wrap_displacement(parent - site % pm.side, pm.side)
        positions[k + 1] = positions[k] + hop
        site = positions[k + 1]
    return LineagePath(positions)


def martingale_decomposition(path: LineagePath, history: EnvHistory) -> LineagePath:
    """Fill the exact drift/martingale split from the stored environment."""
    K = path.steps
    d = path.positions.shape[1]
    R = history.params.R
    top = history.t_hi
    drift_num = np.zeros((K, d), dtype=np.int64)
    drift_den = np.zeros(K, dtype=np.int64)
    for k in range(K):
        env = history.config_at(top - k - 1)
        dist = ancestor_distribution(env, path.positions[k] % history.side, R)
        inc = path.increments[k]
        if not np.any(np.all(dist.displacements == inc, axis=1)):
            raise EmptyNeighborhoodError(
                f"recorded increment {tuple(inc)} not an occupied displacement at step {k}"
            )
        num, den = dist.drift()
        drift_num[k] = num
        drift_den[k] = den
    return LineagePath(path.positions.copy(), drift_num, drift_den)


def azuma_envelope(scales: Scales) -> float:
    """L_t * exp(-(L_s/8)^2 / (2 L_t R^2)), the martingale excursion bound."""
    ls8 = scales.L_s / 8.0
    return scales.L_t * math.exp(-(ls8**2) / (2.0 * scales.L_t * scales.R**2))


@dataclass
class SpeedBoundReport:
    n_paths: int
    confinement_freq: float
    confinement_by_bucket: dict  # start-distance bucket -> (count, freq)
    p_amart: float
    p_amart_stderr: float
    azuma: float
    azuma_vacuous: bool
    drift_budget: float
    max_drift_norm: float
    drift_violations: int
    delta: float
    confinement_pass: bool

    def to_json(self):
        return {
            "n_paths": self.n_paths,
            "confinement_freq": self.confinement_freq,
            "confinement_by_bucket": {
                str(k): {"count": c, "freq": f} for k, (c, f) in self.confinement_by_bucket.items()
            },
            "p_amart": self.p_amart,
            "p_amart_stderr": self.p_amart_stderr,
            "azuma_envelope": self.azuma,
            "azuma_vacuous": self.azuma_vacuous,
            "drift_budget": self.drift_budget,
            "max_drift_norm": self.max_drift_norm,
            "drift_violations": self.drift_violations,
            "delta": self.delta,
            "confinement_pass": self.confinement_pass,
        }


def check_speed_bound(paths: Sequence[LineagePath], scales: Scales, delta: float) -> SpeedBoundReport:
    """Confinement, martingale excursion, and per-step drift diagnostics.

    Paths are expected to start within B_{L_s/2} of a good-block centre
    and to span (at most) L_t steps.  Drift norms are compared to the
    per-step budget L_s / (8 L_t) while the path stays within L_s/2 of
    its start.
    """
    if not paths:
        raise ValueError("need at least one path")
    confine_radius = scales.L_s / 4.0
    mart_radius = scales.L_s / 8.0
    budget = scales.drift_bound()
    confined = []
    amart = []
    buckets: dict = {}
    max_drift = 0.0
    violations = 0
    for p in paths:
        disp = p.positions - p.positions[0]
        max_norm = np.abs(disp).max() if p.steps else 0.0
        confined.append(max_norm <= confine_radius)
        y_cum = np.cumsum(p.martingale_increments, axis=0)
        amart.append(bool(np.abs(y_cum).max(initial=0.0) >= mart_radius))
        inside = np.abs(disp[:-1]).max(axis=1) <= scales.L_s / 2.0
        norms = np.abs(p.drift_terms).max(axis=1)
        relevant = norms[inside]
        if relevant.size:
            max_drift = max(max_drift, float(relevant.max()))
            violations += int((relevant >= budget).sum())
        # start coordinates are relative to the block centre by convention
        bucket = min(3, int(4 * np.abs(p.start).max() / max(scales.L_s / 2.0, 1)))
        buckets.setdefault(bucket, []).append(confined[-1])
    freq = float(np.mean(confined))
    p_am = float(np.mean(amart))
    az = azuma_envelope(scales)
    by_bucket = {k: (len(v), float(np.mean(v))) for k, v in sorted(buckets.items())}
    return SpeedBoundReport(
        n_paths=len(paths),
        confinement_freq=freq,
        confinement_by_bucket=by_bucket,
        p_amart=p_am,
        p_amart_stderr=math.sqrt(max(p_am * (1 - p_am), 1e-12) / len(paths)),
        azuma=az,
        azuma_vacuous=az >= 1.0,
        drift_budget=budget,
        max_drift_norm=max_drift,
        drift_violations=violations,
        delta=delta,
        confinement_pass=freq >= 1.0 - delta,
    )


class _Batch1d:
    """Many independent 1-d tori evolved in lockstep.

    Replica b uses the fake 2-d site coordinates (b, x) against a single
    noise field, which keeps every replica's driving noise independent
    while the update stays one vectorised pass.
    """

    def __init__(self, params: ModelParams, side: int, n_envs: int, noise: NoiseField):
        if params.d != 1:
            raise ValueError("batched engine is 1-d only")
        self.params = params
        self.side = side
        self.n_envs = n_envs
        self.noise = noise
        grid = np.stack(
            np.meshgrid(np.arange(n_envs), np.arange(side), indexing="ij"), axis=-1
        ).reshape(-1, 2)
        self._hash = noise.site_hash(grid).reshape(n_envs, side)

    def init_bernoulli(self, p: float, n: int = 0) -> np.ndarray:
        u = self.noise.uniform_from_site_hash(self._hash, n)
        return (u < p).astype(np.uint8)

    def step(self, occ: np.ndarray, t: int) -> np.ndarray:
        counts = box_count(occ, self.params.R, axes=(1,))
        probs = varphi(self.params.mu, counts / float(2 * self.params.R + 1))
        u = self.noise.uniform_from_site_hash(self._hash, t + 1)
        return (u <= probs).astype(np.uint8)

    def run(self, occ: np.ndarray, t0: int, steps: int) -> np.ndarray:
        for k in range(steps):
            occ = self.step(occ, t0 + k)
        return occ


def _agent_step_displacements(occ: np.ndarray, params: ModelParams, rng: np.random.Generator):
    """One agent step on every replica; one uniform child-to-parent
    displacement per replica that produced children."""
    n_envs, side = occ.shape
    b_idx, x_idx = np.nonzero(occ)
    counts = rng.poisson(params.mu, size=len(b_idx))
    pb = np.repeat(b_idx, counts)
    px = np.repeat(x_idx, counts)
    disp = rng.integers(-params.R, params.R + 1, size=len(pb))
    cx = (px + disp) % side
    flat = pb * side + cx
    arrivals = np.bincount(flat, minlength=n_envs * side)
    singleton = arrivals[flat] == 1
    sb, sdisp = pb[singleton], disp[singleton]
    perm = rng.permutation(len(sb))
    envs, first = np.unique(sb[perm], return_index=True)
    return envs, -sdisp[perm][first]


def _kernel_displacements(parent_occ: np.ndarray, child_occ: np.ndarray, params: ModelParams, rng: np.random.Generator):
    """Per replica: a uniform occupied child site, then a uniform occupied
    parent within R of it."""
    n_envs, side = parent_occ.shape
    R = params.R
    child_counts = child_occ.sum(axis=1)
    keep = np.flatnonzero(child_counts > 0)
    child_x = np.zeros(len(keep), dtype=np.int64)
    for i, b in enumerate(keep):
        sites = np.flatnonzero(child_occ[b])
        child_x[i] = sites[rng.integers(len(sites))]
    offs = np.arange(-R, R + 1)
    windows = parent_occ[keep[:, None], (child_x[:, None] + offs[None, :]) % side]
    m = windows.sum(axis=1)
    ok = m > 0
    keep, child_x, windows, m = keep[ok], child_x[ok], windows[ok], m[ok]
    pick = rng.integers(m)
    cum = np.cumsum(windows, axis=1)
    idx = (cum > pick[:, None]).argmax(axis=1)
    return keep, idx - R


def kernel_equivalence_histograms(
    params: ModelParams,
    side: int,
    n_draws: int,
    burn_in: int,
    seed: int,
):
    """Forward-genealogy vs backward-kernel one-step displacement counts.

    Each half uses its own batch of independent quasi-stationary 1-d
    environments: the genealogy half takes one agent step and follows a
    uniformly chosen child to its recorded parent; the kernel half
    takes one PCA step and samples the parent from the ancestor law.
    Returns two length-(2R+1) count arrays.
    """
    rng = np.random.default_rng(seed)
    bins = 2 * params.R + 1

    batch = _Batch1d(params, side, n_draws, NoiseField(seed, 0))
    occ = batch.run(batch.init_bernoulli(theta(params.mu)), 0, burn_in)
    envs, disp = _agent_step_displacements(occ, params, rng)
    genealogy = np.bincount(disp + params.R, minlength=bins)

    batch2 = _Batch1d(params, side, n_draws, NoiseField(seed, 1))
    occ2 = batch2.run(batch2.init_bernoulli(theta(params.mu)), 0, burn_in)
    child = batch2.step(occ2, burn_in)
    envs2, disp2 = _kernel_displacements(occ2, child, params, rng)
    kernel = np.bincount(disp2 + params.R, minlength=bins)
    return genealogy, kernel


def pick_occupied_starts(cfg: Config, count: int, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random occupied sites, the translation form of conditioning
    on a particle at the origin."""
    sites = cfg.occupied_sites()
    if len(sites) == 0:
        raise EmptyNeighborhoodError("no occupied site to start a lineage from")
    idx = rng.integers(len(sites), size=count)
    return sites[idx].astype(np.int64)


def walk_ensemble(
    history: EnvHistory,
    n_walkers: int,
    K: int,
    checkpoints: Sequence[int],
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorised lineage ensemble on one environment.

    Walkers start at uniformly random occupied sites of the top
    snapshot and move by rejection sampling (propose uniform in the
    box, accept if occupied), which realises the uniform-over-occupied
    kernel exactly.  Returns positions relative to each walker's start,
    shape (n_walkers, len(checkpoints), d).
    """
    if K > history.horizon:
        raise ValueError(f"K = {K} exceeds stored horizon {history.horizon}")
    d = history.params.d
    R = history.params.R
    side = history.side
    checkpoints = list(checkpoints)
    starts = pick_occupied_starts(history.config_at(history.t_hi), n_walkers, rng)
    pos = starts.copy()
    out = np.zeros((n_walkers, len(checkpoints), d), dtype=np.int64)
    cp_index = {k: i for i, k in enumerate(checkpoints)}
    if 0 in cp_index:
        out[:, cp_index[0], :] = 0
    top = history.t_hi
    for k in range(K):
        occ = history.occupancy_at(top - k - 1)
        occ_flat = occ.reshape(-1)
        pending = np.arange(n_walkers)
        for round_ in range(10_000):
            if pending.size == 0:
                break
            disp = rng.integers(-R, R + 1, size=(pending.size, d))
            tgt = (pos[pending] + disp) % side
            flat = np.ravel_multi_index(tgt.T, (side,) * d)
            hit = occ_flat[flat] != 0
            pos[pending[hit]] += disp[hit]
            pending = pending[~hit]
        if pending.size:
            # astronomically unlikely unless a window is empty; resolve exactly
            for w in pending:
                dist = ancestor_distribution(
                    history.config_at(top - k - 1), pos[w] % side, R
                )
                pos[w] += dist.displacements[int(rng.integers(dist.count))]
        if (k + 1) in cp_index:
            out[:, cp_index[k + 1], :] = pos - starts
    return out
