"""Fixpoint bracketing sequences and comparison density profiles.

The update probability varphi has the attractive fixpoint theta_mu;
densities of the process concentrate near it.  This module builds the
nested bracketing sequences alpha_m (increasing) / beta_m (decreasing)
around theta_mu, the staircase-with-front profile pairs that sandwich
local densities, a numerical certifier for the self-propagation
property of such profile pairs, and the Bernstein-type concentration
bound for the probability that a block of driving noise preserves the
sandwich for one step.

Certification is numerical, not symbolic: the profile pair either
passes the worst-case one-step inequalities with positive margin at
the requested scale or the violations are reported as data.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import require_contraction_regime, theta, varphi
from .noise import NoiseField


class NestingError(ValueError):
    """The slacked interval iteration failed to nest at some index."""

    def __init__(self, index: int, message: str):
        super().__init__(f"at m={index}: {message}")
        self.index = index


def phi_range(mu: float, a, b):
    """(inf, sup) of varphi over [a, b], 0 <= a <= b.

    varphi increases up to 1/mu and decreases afterwards, so the
    infimum sits at an endpoint and the supremum is 1/e when 1/mu lies
    inside the interval.  Vectorized over arrays of interval endpoints.
    """
    fa = varphi(mu, a)
    fb = varphi(mu, b)
    lo = np.minimum(fa, fb)
    hi = np.maximum(fa, fb)
    inside = (np.asarray(a) <= 1.0 / mu) & (1.0 / mu <= np.asarray(b))
    hi = np.where(inside, math.exp(-1.0), hi)
    if np.isscalar(fa):
        return float(lo), float(hi)
    return lo, hi


def phi_argrange(mu: float, a, b):
    """(arginf, argsup) of varphi over [a, b], vectorized."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    fa = varphi(mu, a)
    fb = varphi(mu, b)
    arginf = np.where(fa <= fb, a, b)
    argsup = np.where(fa >= fb, a, b)
    inside = (a <= 1.0 / mu) & (1.0 / mu <= b)
    argsup = np.where(inside, 1.0 / mu, argsup)
    return arginf, argsup


@dataclass(frozen=True)
class AlphaBetaSeq:
    """Strictly nested bracketing sequences around theta_mu.

    alpha[m-1] is alpha_m (1-indexed in the usual notation); invariants
    alpha_m increasing, beta_m decreasing, alpha_m < theta < beta_m and
    varphi([alpha_m, beta_m]) strictly inside (alpha_{m+1}, beta_{m+1})
    hold by construction.
    """

    mu: float
    gamma: float
    alpha: np.ndarray
    beta: np.ndarray

    @property
    def m_max(self) -> int:
        return len(self.alpha)

    def interval(self, m: int):
        return float(self.alpha[m - 1]), float(self.beta[m - 1])


def build_alpha_beta(
    mu: float, alpha1: float, beta1: float, m_max: int, gamma: float = 0.1
) -> AlphaBetaSeq:
    """Slacked interval iteration for the bracketing sequences.

    alpha_{m+1} = inf varphi([alpha_m, beta_m]) / (1 + gamma) and
    beta_{m+1} = sup varphi([alpha_m, beta_m]) / (1 - gamma), so the
    image of each interval lies strictly inside the open successor.
    Monotonicity can fail when the starting interval is too close to
    the slacked fixpoints (for instance beta1 below
    log(mu/(1-gamma))/mu); that is reported as a NestingError with the
    offending index rather than silently accepted.
    """
    require_contraction_regime(mu)
    th = theta(mu)
    if not 0.0 < alpha1 < th:
        raise ValueError(f"need 0 < alpha1 < theta = {th:.6f}, got {alpha1}")
    if not beta1 > math.exp(-1.0):
        raise ValueError(f"need beta1 > 1/e = {math.exp(-1.0):.6f}, got {beta1}")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"need gamma in (0, 1), got {gamma}")
    alpha = [alpha1]
    beta = [beta1]
    conv_tol = 1e-12
    for m in range(1, m_max):
        lo, hi = phi_range(mu, alpha[-1], beta[-1])
        a_next = lo / (1.0 + gamma)
        b_next = hi / (1.0 - gamma)
        if a_next <= alpha[-1] or b_next >= beta[-1]:
            # at the slacked fixpoints the iteration stalls; a stall
            # within float tolerance just means the sequence is done
            if a_next > alpha[-1] - conv_tol and b_next < beta[-1] + conv_tol:
                break
            if not a_next > alpha[-1]:
                raise NestingError(m, f"alpha not increasing ({alpha[-1]:.6g} -> {a_next:.6g})")
            raise NestingError(m, f"beta not decreasing ({beta[-1]:.6g} -> {b_next:.6g})")
        if not (a_next < th < b_next):
            raise NestingError(m, f"interval [{a_next:.6g}, {b_next:.6g}] lost theta")
        alpha.append(a_next)
        beta.append(b_next)
    return AlphaBetaSeq(mu, gamma, np.array(alpha), np.array(beta))


def find_m0(seq: AlphaBetaSeq, eps_fp_value: float) -> int:
    """Least m with both alpha_m and beta_m inside [theta - eps, theta + eps]."""
    th = theta(seq.mu)
    inside = (seq.alpha >= th - eps_fp_value) & (seq.beta <= th + eps_fp_value)
    hits = np.flatnonzero(inside)
    if len(hits) == 0:
        raise ValueError(
            f"no index <= {seq.m_max} inside the contraction window; increase m_max"
        )
    return int(hits[0]) + 1


@dataclass(frozen=True)
class ProfilePair:
    """Comparison density profile pair zeta_k^{r,-} / zeta_k^{r,+}.

    Piecewise constant staircases around a growing central plateau:
    the minus profile steps down alpha_{m0}, ..., alpha_1 over bands of
    width r and decays linearly to eps0 over a front of width
    ceil(w*r); the plus profile steps up beta_{m0}, ..., beta_1 and is
    max(1, beta_1) outside.  The plateau expands by ceil(s*r) per time
    step k.
    """

    mu: float
    r: int
    R_max: int
    s: float
    w: float
    eps0: float
    m0: int
    k0: int
    alpha: np.ndarray  # alpha_1 .. alpha_m0
    beta: np.ndarray  # beta_1 .. beta_m0

    def __post_init__(self):
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"front speed s must be in (0, 1), got {self.s}")
        if not self.w >= 2.0:
            raise ValueError(f"front width multiplier w must be >= 2, got {self.w}")
        if not 0.0 < self.eps0 < self.alpha[0]:
            raise ValueError(f"front floor eps0 must be in (0, alpha_1), got {self.eps0}")
        if len(self.alpha) != self.m0 or len(self.beta) != self.m0:
            raise ValueError("alpha/beta staircases must have exactly m0 levels")

    @property
    def front_step(self) -> int:
        return math.ceil(self.s * self.r)

    @property
    def front_width(self) -> int:
        return math.ceil(self.w * self.r)

    @property
    def d(self) -> int:
        # profiles are shape functions of coordinates; dimension comes
        # from the points they are evaluated at
        raise AttributeError("evaluate at points to fix the dimension")

    def plateau_radius(self, k: int) -> int:
        """R_max^r(k): radius of strongest control at time k."""
        return self.R_max + k * self.front_step

    def support_radius(self, k: int) -> int:
        return self.plateau_radius(k) + self.m0 * self.r + self.front_width

    def plateau_values(self):
        return float(self.alpha[-1]), float(self.beta[-1])


def chi(profile: ProfilePair, k: int, x) -> np.ndarray:
    """Auxiliary front function chi_k^r.

    Constant alpha_1 out to the staircase edge, then a per-coordinate
    linear decay to eps0 across a front of width ceil(w*r); zero beyond
    the support.  The front shifts outward by ceil(s*r) per unit k.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    x = np.atleast_2d(np.asarray(x))
    d = x.shape[-1]
    alpha1 = float(profile.alpha[0])
    inner = profile.plateau_radius(k) + profile.m0 * profile.r
    rtil = inner + profile.front_width
    absx = np.abs(x).astype(np.float64)
    base = (profile.eps0 / alpha1) ** (1.0 / d)
    factors = np.where(
        absx <= rtil,
        np.minimum(base + (rtil - absx) / profile.front_width, 1.0),
        0.0,
    )
    out = alpha1 * np.prod(factors, axis=-1)
    return out if out.shape != (1,) else out.reshape(())


def zeta(profile: ProfilePair, k: int, x, sign: str) -> np.ndarray:
    """Evaluate zeta_k^{r,-} (sign '-') or zeta_k^{r,+} (sign '+') at x."""
    if not 0 <= k <= profile.k0:
        raise ValueError(f"k must be in [0, {profile.k0}], got {k}")
    if sign not in ("-", "+"):
        raise ValueError(f"sign must be '-' or '+', got {sign!r}")
    x = np.atleast_2d(np.asarray(x))
    norm = np.abs(x).max(axis=-1)
    plat = profile.plateau_radius(k)
    # band index: 0 on the plateau, j in 1..m0 on the staircase
    j = np.clip(np.ceil((norm - plat) / profile.r), 0, profile.m0).astype(np.int64)
    if sign == "-":
        levels = np.concatenate([[profile.alpha[-1]], profile.alpha[::-1]])
        tail = chi(profile, k, x)
    else:
        levels = np.concatenate([[profile.beta[-1]], profile.beta[::-1]])
        tail = np.full(norm.shape, max(1.0, float(profile.beta[0])))
    out = np.where(norm > plat + profile.m0 * profile.r, tail, levels[j])
    return out if out.shape != (1,) else out.reshape(())


def build_profile_pair(
    seq: AlphaBetaSeq,
    m0: int,
    r: int,
    R_max: int,
    s: float,
    w: float,
    eps0: float,
    k0: int,
) -> ProfilePair:
    if m0 > seq.m_max:
        raise ValueError(f"m0 = {m0} exceeds sequence length {seq.m_max}")
    return ProfilePair(
        mu=seq.mu,
        r=r,
        R_max=R_max,
        s=s,
        w=w,
        eps0=eps0,
        m0=m0,
        k0=k0,
        alpha=seq.alpha[:m0].copy(),
        beta=seq.beta[:m0].copy(),
    )


@dataclass
class CdpViolation:
    k: int
    x: tuple
    kind: str  # "order", "floor", "lower", "upper"
    margin: float

    def to_json(self):
        return {"k": self.k, "x": list(self.x), "kind": self.kind, "margin": self.margin}


@dataclass
class CdpReport:
    """Outcome of the numerical comparison-density-profile certification."""

    passed: bool
    mu: float
    r: int
    d: int
    delta: float
    eps: float
    k0: int
    min_lower_margin: dict
    min_upper_margin: dict
    checked_sites: int
    violations: list = field(default_factory=list)

    def to_json(self):
        return {
            "passed": self.passed,
            "mu": self.mu,
            "r": self.r,
            "d": self.d,
            "delta": self.delta,
            "eps": self.eps,
            "k0": self.k0,
            "min_lower_margin": {str(k): v for k, v in self.min_lower_margin.items()},
            "min_upper_margin": {str(k): v for k, v in self.min_upper_margin.items()},
            "checked_sites": self.checked_sites,
            "violations": [v.to_json() for v in self.violations[:100]],
            "violation_count": len(self.violations),
        }


def _box_mean(grid: np.ndarray, r: int) -> np.ndarray:
    """Mean over the (2r+1)^d window centred at each interior point.

    No wrapping: the caller pads the grid by r with boundary values.
    Returns an array shrunk by r on every side.
    """
    a = grid
    v = 2 * r + 1
    for axis in range(a.ndim):
        c = np.cumsum(a, axis=axis)
        zero = np.zeros_like(c.take([0], axis=axis))
        p = np.concatenate([zero, c], axis=axis)
        n = a.shape[axis]
        a = p.take(range(v, n + 1), axis=axis) - p.take(range(0, n + 1 - v), axis=axis)
    return a / float(v ** grid.ndim)


def _coordinate_grid(radius: int, d: int) -> np.ndarray:
    axes = [np.arange(-radius, radius + 1)] * d
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def certify_cdp(
    profile: ProfilePair,
    mu: float,
    eps: float,
    delta: float,
    d: int = 1,
    symmetry_reduce: bool = True,
) -> CdpReport:
    """Check the comparison-density-profile properties numerically.

    For every k < k0 and every x in the support of the minus profile,
    the worst-case window averages of varphi over the sandwich
    intervals (interval extrema via unimodality) must satisfy

        (1 + delta) * zeta_{k+1}^-(x) <= lower average
        upper average <= (1 - delta) * zeta_{k+1}^+(x).

    Pointwise ordering and the eps floor on the support are checked as
    well.  Violations are reported as data, not raised.
    """
    violations = []
    min_lower = {}
    min_upper = {}
    checked = 0
    r = profile.r
    for k in range(profile.k0):
        supp = profile.support_radius(k)
        grid = _coordinate_grid(supp + r, d)
        zm = zeta(profile, k, grid, "-")
        zp = zeta(profile, k, grid, "+")
        norm = np.abs(grid).max(axis=-1)

        order_bad = zm > zp
        for x in grid[order_bad]:
            violations.append(CdpViolation(k, tuple(int(c) for c in x), "order", float("nan")))
        on_supp = zm > 0
        floor_bad = on_supp & (zm < eps)
        for x in grid[floor_bad]:
            violations.append(CdpViolation(k, tuple(int(c) for c in x), "floor", float("nan")))

        phi_lo, phi_hi = phi_range(mu, zm, zp)
        lower_avg = _box_mean(phi_lo, r)
        upper_avg = _box_mean(phi_hi, r)

        inner = _coordinate_grid(supp, d)
        inner_norm = np.abs(inner).max(axis=-1)
        zm_next = zeta(profile, k + 1, inner, "-")
        zp_next = zeta(profile, k + 1, inner, "+")
        lower_margin = lower_avg - (1.0 + delta) * zm_next
        upper_margin = (1.0 - delta) * zp_next - upper_avg

        mask = zeta(profile, k, inner, "-") > 0
        if symmetry_reduce and d > 1:
            sorted_nonneg = np.all(inner >= 0, axis=-1) & np.all(
                np.diff(np.abs(inner), axis=-1) >= 0, axis=-1
            )
            mask = mask & sorted_nonneg
        elif symmetry_reduce:
            mask = mask & (inner[..., 0] >= 0)
        checked += int(mask.sum())

        lm = lower_margin[mask]
        um = upper_margin[mask]
        min_lower[k] = float(lm.min()) if lm.size else float("inf")
        min_upper[k] = float(um.min()) if um.size else float("inf")
        for x, m in zip(inner[mask & (lower_margin < 0)], lower_margin[mask & (lower_margin < 0)]):
            violations.append(CdpViolation(k, tuple(int(c) for c in x), "lower", float(m)))
        for x, m in zip(inner[mask & (upper_margin < 0)], upper_margin[mask & (upper_margin < 0)]):
            violations.append(CdpViolation(k, tuple(int(c) for c in x), "upper", float(m)))

    return CdpReport(
        passed=not violations,
        mu=mu,
        r=r,
        d=d,
        delta=delta,
        eps=eps,
        k0=profile.k0,
        min_lower_margin=min_lower,
        min_upper_margin=min_upper,
        checked_sites=checked,
        violations=violations,
    )


@dataclass(frozen=True)
class CdpSearchResult:
    found: bool
    s: float | None
    w: float | None
    eps0: float | None
    delta0: float | None
    report: CdpReport | None
    tried: int = 0


def find_cdp_params(
    mu: float,
    r: int,
    R: int,
    R_max: int,
    seq: AlphaBetaSeq,
    m0: int,
    d: int = 1,
    k0: int = 2,
) -> CdpSearchResult:
    """Grid search for (s, w, eps0, delta0) certifying the profile pair.

    Coarse grids: s in {0.1, ..., 0.5}, w in {2, ..., 8}, eps0 and
    delta0 on log grids.  Returns the first certified tuple; explicit
    failure (found=False) otherwise.
    """
    if R_max < 2 * R:
        raise ValueError(f"R_max = {R_max} must be at least 2R = {2 * R}")
    alpha1 = float(seq.alpha[0])
    tried = 0
    for s in (0.1, 0.2, 0.3, 0.4, 0.5):
        for w in (2, 3, 4, 5, 6, 7, 8):
            for eps0 in (alpha1 / 2, alpha1 / 4, alpha1 / 8, alpha1 / 16):
                profile = build_profile_pair(seq, m0, r, R_max, s, w, eps0, k0)
                for delta0 in (0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001):
                    tried += 1
                    report = certify_cdp(profile, mu, eps0, delta0, d=d)
                    if report.passed:
                        return CdpSearchResult(True, s, float(w), eps0, delta0, report, tried)
    return CdpSearchResult(False, None, None, None, None, None, tried)


def bernstein_exponent(eps: float, delta: float) -> float:
    """The constant c = (delta*eps) / (1/(2*delta*eps) + 2/3)."""
    if eps <= 0 or delta <= 0:
        raise ValueError("eps and delta must be positive")
    de = delta * eps
    return de / (1.0 / (2.0 * de) + 2.0 / 3.0)


def bernstein_bound(eps: float, delta: float, r: int, d: int) -> float:
    """Concentration bound 2 * exp(-c * V_r^d) for one noise block.

    Can exceed 1 at desk scales; callers must report that vacuity
    honestly (see informative_volume for the threshold).
    """
    c = bernstein_exponent(eps, delta)
    return 2.0 * math.exp(-c * float((2 * r + 1) ** d))


def informative_volume(eps: float, delta: float) -> float:
    """Smallest V_r^d making the Bernstein bound informative (< 1)."""
    return math.log(2.0) / bernstein_exponent(eps, delta)


@dataclass(frozen=True)
class UkEstimate:
    estimate: float
    stderr: float
    trials: int
    hits: int

    def three_sigma(self):
        return (self.estimate - 3 * self.stderr, self.estimate + 3 * self.stderr)


def estimate_uk_probability(
    profile: ProfilePair,
    mu: float,
    k: int,
    x,
    trials: int,
    d: int = 1,
    seed: int = 0,
    stream_id: int = 0,
    input_band=None,
    target_band=None,
) -> UkEstimate:
    """Monte Carlo estimate of the one-step sandwich-preserving noise event.

    Uses the worst-case Bernoulli parameters (arginf / argsup of varphi
    over the sandwich intervals): for a fixed noise block the indicator
    sums are monotone in the parameters, so checking the lower sum at
    the arginf and the upper sum at the argsup decides membership
    exactly.  `input_band` / `target_band` override the profile values
    at times k / k+1 (used by oracle tests with degenerate profiles).
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    x = np.atleast_1d(np.asarray(x))
    window = _coordinate_grid(profile.r, len(x)) + x
    if input_band is None:
        zm = zeta(profile, k, window, "-")
        zp = zeta(profile, k, window, "+")
    else:
        zm = np.broadcast_to(np.asarray(input_band[0], dtype=float), window.shape[:-1])
        zp = np.broadcast_to(np.asarray(input_band[1], dtype=float), window.shape[:-1])
    lam_lo, lam_hi = phi_argrange(mu, zm, zp)
    p_lo = varphi(mu, lam_lo).reshape(-1)
    p_hi = varphi(mu, lam_hi).reshape(-1)
    if target_band is None:
        target_lo = float(zeta(profile, k + 1, x, "-"))
        target_hi = float(zeta(profile, k + 1, x, "+"))
    else:
        target_lo, target_hi = float(target_band[0]), float(target_band[1])

    nf = NoiseField(seed, stream_id)
    h = nf.site_hash(window.reshape(-1, len(x)))
    vol = p_lo.size
    hits = 0
    chunk = max(1, min(trials, 2_000_000 // max(vol, 1)))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        ns = (done + np.arange(m))[:, None]
        u = nf.uniform_from_site_hash(np.broadcast_to(h, (m, vol)), ns)
        s_lo = (u <= p_lo).mean(axis=1)
        s_hi = (u <= p_hi).mean(axis=1)
        hits += int(((s_lo >= target_lo) & (s_hi <= target_hi)).sum())
        done += m
    est = hits / trials
    stderr = math.sqrt(max(est * (1.0 - est), 1e-12) / trials)
    return UkEstimate(est, stderr, trials, hits)
