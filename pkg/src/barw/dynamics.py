"""Branching annihilating random walk dynamics.

The canonical update is the parallel probabilistic-cellular-automaton
step: every site becomes occupied independently with probability
varphi(mu, local R-density), thresholded against the shared driving
noise.  The agent-based three-step procedure (Poisson offspring,
uniform dispersal in a box, annihilation of multiply-occupied sites)
induces the same one-step law and additionally records child-parent
relations; it is kept as a validation oracle and as the genealogy
source.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .lattice import Config, bernoulli_product_init, density_field, site_grid
from .noise import NoiseField

E_SQUARED = math.e**2


@dataclass(frozen=True)
class ModelParams:
    """Branching mean mu and dispersal radius R on the d-torus."""

    mu: float
    R: int
    d: int

    def __post_init__(self):
        if not self.mu > 1.0:
            raise ValueError(f"mu must exceed 1, got {self.mu}")
        if self.R < 1:
            raise ValueError(f"R must be >= 1, got {self.R}")
        if self.d not in (1, 2, 3):
            raise ValueError(f"d must be 1, 2 or 3, got {self.d}")


def require_contraction_regime(mu: float):
    """The fixpoint/profile machinery needs mu in (1, e^2)."""
    if not 1.0 < mu < E_SQUARED:
        raise ValueError(f"mu must lie in (1, e^2) for this machinery, got {mu}")


def varphi(mu: float, w):
    """mu * w * exp(-mu * w): probability a Poisson(mu*w) count equals 1."""
    w_arr = np.asarray(w, dtype=np.float64)
    if np.any(w_arr < 0):
        raise ValueError("varphi requires w >= 0")
    out = mu * w_arr * np.exp(-mu * w_arr)
    return float(out) if np.isscalar(w) or w_arr.ndim == 0 else out


def varphi_prime(mu: float, w):
    """Derivative mu * (1 - mu*w) * exp(-mu*w)."""
    w_arr = np.asarray(w, dtype=np.float64)
    out = mu * (1.0 - mu * w_arr) * np.exp(-mu * w_arr)
    return float(out) if np.isscalar(w) or w_arr.ndim == 0 else out


def theta(mu: float) -> float:
    """The nontrivial fixpoint log(mu)/mu of varphi."""
    if not mu > 1.0:
        raise ValueError(f"theta requires mu > 1, got {mu}")
    return math.log(mu) / mu


def contraction_constant(mu: float, eps: float) -> float:
    """sup of |varphi'| over [theta - eps, theta + eps].

    The sup is attained at an endpoint or at w = 2/mu, the only
    interior critical point of varphi'.  A value >= 1 means varphi is
    not a contraction on the interval (eps too large).
    """
    require_contraction_regime(mu)
    th = theta(mu)
    a, b = th - eps, th + eps
    if not (a > 0 and eps > 0):
        raise ValueError(f"need 0 < eps < theta(mu) = {th}, got eps = {eps}")
    candidates = [abs(varphi_prime(mu, a)), abs(varphi_prime(mu, b))]
    w_crit = 2.0 / mu
    if a <= w_crit <= b:
        candidates.append(abs(varphi_prime(mu, w_crit)))
    return max(candidates)


def eps_fp(mu: float, margin: float, tol: float = 1e-9) -> float:
    """Largest eps with contraction_constant(mu, eps) <= 1 - margin.

    Binary search; the derivative sup is monotone in eps.  Infeasible
    margins (1 - margin below |varphi'(theta)| = |1 - log mu|) raise.
    """
    require_contraction_regime(mu)
    if not 0.0 < margin < 1.0:
        raise ValueError(f"margin must be in (0, 1), got {margin}")
    target = 1.0 - margin
    if abs(1.0 - math.log(mu)) > target:
        raise ValueError(
            f"no contraction window: |varphi'(theta)| = {abs(1.0 - math.log(mu)):.6f} > {target}"
        )
    th = theta(mu)
    lo, hi = 0.0, th * (1.0 - 1e-12)
    if contraction_constant(mu, hi) <= target:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if contraction_constant(mu, mid) <= target:
            lo = mid
        else:
            hi = mid
    return lo


@lru_cache(maxsize=8)
def _cached_site_hash(field: NoiseField, d: int, side: int):
    h = field.site_hash(site_grid(d, side))
    h.setflags(write=False)
    return h


def step(cfg: Config, params: ModelParams, noise: NoiseField, n: int) -> Config:
    """One PCA step: child(x) = 1{U(x, n+1) <= varphi(mu, delta_R(x))}."""
    dens = density_field(cfg, params.R)
    probs = varphi(params.mu, dens.values)
    u = noise.uniform_from_site_hash(_cached_site_hash(noise, cfg.d, cfg.side), n + 1)
    occ = (u.reshape(probs.shape) <= probs).astype(np.uint8)
    return Config(cfg.d, cfg.side, occ)


def flow(cfg: Config, params: ModelParams, noise: NoiseField, m: int, n: int) -> Config:
    """Compose steps from time m to time n (m < n)."""
    if not m < n:
        raise ValueError(f"flow requires m < n, got {m}, {n}")
    out = cfg
    for k in range(m, n):
        out = step(out, params, noise, k)
    return out


@dataclass(frozen=True)
class ParentMap:
    """Parent coordinates for every occupied site of a child generation."""

    d: int
    side: int
    children: np.ndarray  # (k, d) int
    parents: np.ndarray  # (k, d) int

    def __len__(self) -> int:
        return len(self.children)

    def parent_of(self, site) -> np.ndarray:
        site = np.atleast_1d(np.asarray(site))
        match = np.all(self.children == site[None, :], axis=1)
        idx = np.flatnonzero(match)
        if len(idx) != 1:
            raise KeyError(f"site {tuple(site)} has no recorded parent")
        return self.parents[idx[0]]


def step_agents(cfg: Config, params: ModelParams, rng: np.random.Generator):
    """Agent-based step: Poisson offspring, box dispersal, annihilation.

    Returns (child Config, ParentMap).  The dispersal randomness comes
    from the supplied stateful stream, not from the driving noise: this
    path is a validation oracle for `step`, not the canonical dynamics.
    """
    if 2 * params.R + 1 > cfg.side:
        raise ValueError(f"dispersal radius {params.R} too large for side {cfg.side}")
    sites = cfg.occupied_sites()
    empty = np.zeros((0, cfg.d), dtype=np.int64)
    if len(sites) == 0:
        return Config(cfg.d, cfg.side, np.zeros_like(cfg.occupancy)), ParentMap(
            cfg.d, cfg.side, empty, empty
        )
    counts = rng.poisson(params.mu, size=len(sites))
    parents_rep = np.repeat(sites, counts, axis=0)
    disp = rng.integers(-params.R, params.R + 1, size=(len(parents_rep), cfg.d))
    targets = (parents_rep + disp) % cfg.side
    flat = np.ravel_multi_index(targets.T, (cfg.side,) * cfg.d)
    arrivals = np.bincount(flat, minlength=cfg.num_sites)
    occ = (arrivals == 1).astype(np.uint8).reshape((cfg.side,) * cfg.d)
    singleton = arrivals[flat] == 1
    pm = ParentMap(
        cfg.d,
        cfg.side,
        targets[singleton].astype(np.int64),
        parents_rep[singleton].astype(np.int64),
    )
    return Config(cfg.d, cfg.side, occ), pm


@dataclass(frozen=True)
class BurnInResult:
    config: Config
    extinct: bool
    attempts: int
    time_index: int
    noise: NoiseField


def burn_in_stationary(
    params: ModelParams,
    noise: NoiseField,
    steps: int,
    side: int,
    retries: int = 5,
) -> BurnInResult:
    """Approximate the stationary law by evolving a theta-Bernoulli start.

    Starts from a Bernoulli(theta_mu) product at time 0 and runs `steps`
    flow steps.  Extinction is flagged, not raised; each retry uses a
    fresh derived stream (stream_id + attempt * 2**32).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    p0 = theta(params.mu)
    field = noise
    for attempt in range(max(1, retries)):
        field = NoiseField(noise.seed, noise.stream_id + (attempt << 32))
        cfg = bernoulli_product_init(field, 0, p0, params.d, side)
        cfg = flow(cfg, params, field, 0, steps)
        if not cfg.is_empty():
            return BurnInResult(cfg, False, attempt + 1, steps, field)
    return BurnInResult(cfg, True, max(1, retries), steps, field)
