import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from barw.dynamics import eps_fp, theta, varphi
from barw.profiles import (
    AlphaBetaSeq,
    NestingError,
    ProfilePair,
    bernstein_bound,
    bernstein_exponent,
    build_alpha_beta,
    build_profile_pair,
    certify_cdp,
    chi,
    estimate_uk_probability,
    find_cdp_params,
    find_m0,
    informative_volume,
    phi_argrange,
    phi_range,
    zeta,
)

MU = 2.0


@pytest.fixture(scope="module")
def seq():
    return build_alpha_beta(MU, 0.05, 0.45, 30)


@pytest.fixture(scope="module")
def m0(seq):
    return find_m0(seq, eps_fp(MU, 0.1))


@pytest.fixture(scope="module")
def fixture_profile(seq, m0):
    # the committed certification fixture at r = 8
    return build_profile_pair(seq, m0, r=8, R_max=64, s=0.1, w=2.0, eps0=0.025, k0=2)


@given(
    a=st.floats(0.0, 2.0),
    width=st.floats(0.0, 2.0),
    mu=st.floats(1.1, 7.0),
)
@settings(max_examples=200, deadline=None)
def test_phi_range_matches_grid(a, width, mu):
    b = a + width
    lo, hi = phi_range(mu, a, b)
    grid = varphi(mu, np.linspace(a, b, 10_001))
    assert lo <= grid.min() + 1e-12 and abs(lo - grid.min()) < 1e-6
    assert hi >= grid.max() - 1e-12 and abs(hi - grid.max()) < 1e-6


def test_phi_range_exact_against_dense_grid():
    rng = np.random.default_rng(4)
    for _ in range(50):
        a = rng.uniform(0, 1.5)
        b = a + rng.uniform(0, 1.5)
        lo, hi = phi_range(MU, a, b)
        grid = varphi(MU, np.linspace(a, b, 10**4 + 1))
        assert abs(lo - grid.min()) < 1e-10 or lo <= grid.min()
        assert abs(hi - grid.max()) < 1e-8


def test_phi_argrange_consistency():
    lam_lo, lam_hi = phi_argrange(MU, np.array([0.1, 0.4]), np.array([0.3, 0.9]))
    lo, hi = phi_range(MU, np.array([0.1, 0.4]), np.array([0.3, 0.9]))
    assert np.allclose(varphi(MU, lam_lo), lo)
    assert np.allclose(varphi(MU, lam_hi), hi)


def test_alpha_beta_monotone_nested(seq):
    th = theta(MU)
    assert np.all(np.diff(seq.alpha) > 0)
    assert np.all(np.diff(seq.beta) < 0)
    assert np.all(seq.alpha < th) and np.all(seq.beta > th)


def test_alpha_beta_image_nesting_grid_oracle(seq):
    for m in range(seq.m_max - 1):
        grid = varphi(MU, np.linspace(seq.alpha[m], seq.beta[m], 10**4))
        assert grid.min() > seq.alpha[m + 1]
        assert grid.max() < seq.beta[m + 1]


def test_alpha_beta_converges_into_window(seq):
    e = eps_fp(MU, 0.1)
    th = theta(MU)
    assert abs(seq.alpha[-1] - th) < e
    assert abs(seq.beta[-1] - th) < e


def test_alpha_beta_bad_start_raises():
    # beta1 below the slacked fixpoint log(mu/(1-gamma))/mu bounces upward
    with pytest.raises(NestingError):
        build_alpha_beta(MU, 0.05, 0.37, 10)
    with pytest.raises(ValueError):
        build_alpha_beta(MU, 0.05, 0.2, 10)  # beta1 <= 1/e
    with pytest.raises(ValueError):
        build_alpha_beta(MU, 0.4, 0.45, 10)  # alpha1 >= theta


def test_find_m0_minimality(seq):
    e = eps_fp(MU, 0.1)
    m0 = find_m0(seq, e)
    th = theta(MU)
    assert th - e <= seq.alpha[m0 - 1] and seq.beta[m0 - 1] <= th + e
    if m0 > 1:
        a, b = seq.alpha[m0 - 2], seq.beta[m0 - 2]
        assert a < th - e or b > th + e


def test_find_m0_wide_window_is_one(seq):
    th = theta(MU)
    wide = max(th - seq.alpha[0], seq.beta[0] - th) + 0.01
    assert find_m0(seq, wide) == 1


def test_find_m0_not_found():
    short = build_alpha_beta(MU, 0.05, 0.45, 2)
    with pytest.raises(ValueError):
        find_m0(short, 1e-6)


def test_chi_plateau_and_endpoint(fixture_profile):
    p = fixture_profile
    assert chi(p, 0, [0]) == p.alpha[0]
    inner = p.plateau_radius(0) + p.m0 * p.r
    assert chi(p, 0, [inner]) == pytest.approx(p.alpha[0])
    rtil = inner + p.front_width
    assert chi(p, 0, [rtil]) == pytest.approx(p.eps0)
    assert chi(p, 0, [rtil + 1]) == 0.0


def test_chi_front_shift_d1(fixture_profile):
    p = fixture_profile
    shift = p.front_step
    inner = p.plateau_radius(0) + p.m0 * p.r
    for x in range(inner + 1, inner + p.front_width + 1):
        assert chi(p, 1, [x + shift]) == pytest.approx(chi(p, 0, [x]))


def test_zeta_plateau_and_support(fixture_profile):
    p = fixture_profile
    am0, bm0 = p.plateau_values()
    for k in (0, 1, 2):
        rad = p.plateau_radius(k)
        assert zeta(p, k, [rad], "-") == am0
        assert zeta(p, k, [rad], "+") == bm0
        supp = p.support_radius(k)
        assert zeta(p, k, [supp], "-") > 0
        assert zeta(p, k, [supp + 1], "-") == 0.0
        assert zeta(p, k, [supp + 1], "+") == max(1.0, p.beta[0])


def test_zeta_minus_floor_on_support(fixture_profile):
    p = fixture_profile
    xs = np.arange(-p.support_radius(0), p.support_radius(0) + 1).reshape(-1, 1)
    zm = zeta(p, 0, xs, "-")
    assert zm[zm > 0].min() >= p.eps0


def test_zeta_order_random_points(fixture_profile):
    p = fixture_profile
    rng = np.random.default_rng(0)
    xs = rng.integers(-400, 400, size=(10_000, 1))
    for k in (0, 1, 2):
        assert np.all(zeta(p, k, xs, "-") <= zeta(p, k, xs, "+"))


def test_zeta_minus_monotone_in_k(fixture_profile):
    p = fixture_profile
    xs = np.arange(-300, 301).reshape(-1, 1)
    for k in (0, 1):
        assert np.all(zeta(p, k + 1, xs, "-") >= zeta(p, k, xs, "-") - 1e-12)


def test_zeta_d2_shape(fixture_profile):
    p = fixture_profile
    pts = np.array([[0, 0], [p.plateau_radius(0), 0], [0, p.support_radius(0) + 1]])
    vals = zeta(p, 0, pts, "-")
    assert vals[0] == p.alpha[-1]
    assert vals[2] == 0.0


def test_certify_fixture_passes(fixture_profile):
    report = certify_cdp(fixture_profile, MU, eps=0.025, delta=0.1, d=1)
    assert report.passed
    assert all(v > 0 for v in report.min_lower_margin.values())
    assert all(v > 0 for v in report.min_upper_margin.values())


def test_certify_deep_plateau_scalar_reduction(seq, m0):
    # deep inside the plateau the condition is the scalar phi-image one
    am0, bm0 = seq.alpha[m0 - 1], seq.beta[m0 - 1]
    lo, hi = phi_range(MU, am0, bm0)
    delta = 0.1
    assert (1 + delta) * am0 <= lo
    assert hi <= (1 - delta) * bm0


def test_certify_reports_planted_order_violation(seq, m0):
    # swap the plateau pair: minus above plus must be flagged as data
    p = ProfilePair(
        mu=MU,
        r=4,
        R_max=16,
        s=0.25,
        w=2.0,
        eps0=0.01,
        m0=1,
        k0=1,
        alpha=np.array([0.5]),
        beta=np.array([0.30]),
    )
    report = certify_cdp(p, MU, eps=0.01, delta=0.05, d=1)
    assert not report.passed
    kinds = {v.kind for v in report.violations}
    assert "order" in kinds
    first = [v for v in report.violations if v.kind == "order"][0]
    assert zeta(p, first.k, [list(first.x)], "-") > zeta(p, first.k, [list(first.x)], "+")


def test_certify_symmetry_reduction_crosscheck(seq):
    p = build_profile_pair(seq, 2, r=2, R_max=6, s=0.4, w=2.0, eps0=0.01, k0=1)
    full = certify_cdp(p, MU, 0.01, 0.02, d=2, symmetry_reduce=False)
    red = certify_cdp(p, MU, 0.01, 0.02, d=2, symmetry_reduce=True)
    assert full.passed == red.passed
    for k in full.min_lower_margin:
        assert math.isclose(full.min_lower_margin[k], red.min_lower_margin[k], rel_tol=1e-12)
        assert math.isclose(full.min_upper_margin[k], red.min_upper_margin[k], rel_tol=1e-12)


def test_find_cdp_params_fixture(seq, m0):
    res = find_cdp_params(MU, r=8, R=32, R_max=64, seq=seq, m0=m0, d=1, k0=2)
    assert res.found
    # frozen fixture values (first certified grid point)
    assert (res.s, res.w, res.eps0, res.delta0) == (0.1, 2.0, 0.025, 0.1)
    assert res.report.passed


def test_find_cdp_params_monotone_in_delta(seq, m0):
    # if (s, w, eps0, delta0) certifies then halving delta0 still certifies
    p = build_profile_pair(seq, m0, 8, 64, 0.1, 2.0, 0.025, 2)
    assert certify_cdp(p, MU, 0.025, 0.1, d=1).passed
    assert certify_cdp(p, MU, 0.025, 0.05, d=1).passed


def test_find_cdp_params_requires_rmax():
    s = build_alpha_beta(MU, 0.05, 0.45, 20)
    with pytest.raises(ValueError):
        find_cdp_params(MU, r=8, R=32, R_max=32, seq=s, m0=4)


def test_bernstein_bound_values():
    c = bernstein_exponent(0.1, 0.1)
    assert abs(c - 0.01 / (50 + 2 / 3)) < 1e-12
    b = bernstein_bound(0.1, 0.1, 8, 1)
    assert abs(b - 2 * math.exp(-c * 17)) < 1e-12
    assert abs(b - 1.99330) < 5e-5
    assert b > 1  # vacuous at this scale, reported as such


def test_bernstein_bound_monotone_in_r():
    vals = [bernstein_bound(0.1, 0.1, r, 1) for r in range(1, 200, 10)]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_informative_volume_threshold():
    eps, delta = 0.1, 0.1
    v_star = informative_volume(eps, delta)
    c = bernstein_exponent(eps, delta)
    assert 2 * math.exp(-c * (v_star * 1.01)) < 1
    assert 2 * math.exp(-c * (v_star * 0.99)) > 1


def degenerate_profile(r):
    th = theta(MU)
    return ProfilePair(
        mu=MU,
        r=r,
        R_max=10 * r,
        s=0.25,
        w=2.0,
        eps0=0.01,
        m0=1,
        k0=2,
        alpha=np.array([th]),
        beta=np.array([th]),
    )


def test_estimate_uk_degenerate_binomial_oracle():
    # zero-width input band at theta: sums are Binomial(V, theta)/V and
    # membership in [lo, hi] is an exact binomial probability
    r = 10
    V = 2 * r + 1
    th = theta(MU)
    lo, hi = th - 0.08, th + 0.08
    p = degenerate_profile(r)
    est = estimate_uk_probability(
        p, MU, 0, [0], trials=40_000, input_band=(th, th), target_band=(lo, hi)
    )
    exact = sps.binom.cdf(math.floor(hi * V), V, varphi(MU, th)) - sps.binom.cdf(
        math.ceil(lo * V) - 1, V, varphi(MU, th)
    )
    assert abs(est.estimate - exact) < 3 * math.sqrt(exact * (1 - exact) / 40_000) + 1e-9


def test_estimate_uk_seed_replication():
    p = degenerate_profile(8)
    th = theta(MU)
    band = (th - 0.1, th + 0.1)
    e1 = estimate_uk_probability(p, MU, 0, [0], 20_000, seed=1, input_band=(th, th), target_band=band)
    e2 = estimate_uk_probability(p, MU, 0, [0], 20_000, seed=2, input_band=(th, th), target_band=band)
    spread = 3 * math.sqrt(e1.stderr**2 + e2.stderr**2)
    assert abs(e1.estimate - e2.estimate) <= spread + 1e-9


def test_estimate_uk_respects_informative_bound():
    # wide targets and a large window make the Bernstein bound informative
    r = 200
    th = theta(MU)
    eps, delta = 0.15, 0.3
    b = bernstein_bound(eps, delta, r, 1)
    assert b < 1
    p = degenerate_profile(r)
    est = estimate_uk_probability(
        p, MU, 0, [0], trials=5_000, input_band=(th, th), target_band=(th - 0.2, th + 0.2)
    )
    assert est.estimate >= 1 - b - 3 * est.stderr


def test_estimate_uk_on_fixture_profile(fixture_profile):
    est = estimate_uk_probability(fixture_profile, MU, 0, [0], trials=4_000)
    assert 0.0 <= est.estimate <= 1.0
    b = bernstein_bound(fixture_profile.eps0, 0.1, fixture_profile.r, 1)
    if b < 1:
        assert est.estimate >= 1 - b - 3 * est.stderr
