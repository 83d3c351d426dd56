import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from barw.noise import NoiseField, uniform_at


@given(
    seed=st.integers(0, 2**64 - 1),
    stream=st.integers(0, 2**64 - 1),
    x=st.lists(st.integers(-(2**40), 2**40), min_size=1, max_size=3),
    n=st.integers(-(2**40), 2**40),
)
@settings(max_examples=200, deadline=None)
def test_purity_and_range(seed, stream, x, n):
    nf = NoiseField(seed, stream)
    a = uniform_at(nf, x, n)
    b = uniform_at(nf, x, n)
    assert a == b
    assert 0.0 <= a < 1.0


def test_distinct_inputs_differ():
    nf = NoiseField(1, 0)
    vals = {
        uniform_at(nf, [0], 0),
        uniform_at(nf, [1], 0),
        uniform_at(nf, [0], 1),
        uniform_at(NoiseField(1, 1), [0], 0),
        uniform_at(NoiseField(2, 0), [0], 0),
    }
    assert len(vals) == 5


def test_dimension_separation():
    nf = NoiseField(7, 0)
    assert uniform_at(nf, [5], 3) != uniform_at(nf, [5, 0], 3)


def test_mean_of_million_draws():
    nf = NoiseField(12345, 7)
    xs = np.arange(10**6).reshape(-1, 1)
    u = nf.uniform_from_site_hash(nf.site_hash(xs), 0)
    # CLT band: 3 * (1/sqrt(12)) / sqrt(1e6)
    assert abs(u.mean() - 0.5) < 3 * (1 / np.sqrt(12)) / 1e3


def test_quartile_fraction():
    nf = NoiseField(999, 3)
    xs = np.arange(10**6).reshape(-1, 1)
    u = nf.uniform_from_site_hash(nf.site_hash(xs), 5)
    # binomial 3 sigma: 3 * sqrt(.25 * .75 / 1e6) ~ 0.0013
    assert abs((u < 0.25).mean() - 0.25) < 0.0013


def test_pairwise_independence_lag_correlation():
    nf = NoiseField(5150, 0)
    xs = np.arange(10**5 + 1).reshape(-1, 1)
    u = nf.uniform_from_site_hash(nf.site_hash(xs), 0)
    r = np.corrcoef(u[:-1], u[1:])[0, 1]
    assert abs(r) < 3 / np.sqrt(10**5)


def test_vectorized_matches_scalar():
    nf = NoiseField(31, 9)
    pts = np.array([[1, 2], [3, -4], [-5, 6]])
    vec = uniform_at(nf, pts, 11)
    for i, p in enumerate(pts):
        assert vec[i] == uniform_at(nf, p, 11)


def test_negative_seed_is_rejected_gracefully():
    nf = NoiseField(2**64 - 1, 2**64 - 1)
    assert 0.0 <= uniform_at(nf, [0], 0) < 1.0
