import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from walkpolymer import rng as rngmod
from walkpolymer.correlations import (centered_poisson_moment, centered_poisson_polynomial, chain_product,
                                      coincidence_counts, coincidence_moment, exact_correlation, mc_correlation,
                                      partitions_without_singletons)
from walkpolymer.errors import CapabilityError, DomainError
from walkpolymer.lattice_kernels import rw_kernel

P1_0 = 0.465759607593640436501901529563
P1_1 = 0.207910415349708448869354685508
# partitions of an m-set with no singleton block, m = 0..8
NO_SINGLETON_COUNTS = [1, 0, 1, 1, 4, 11, 41, 162, 715]

points_strategy = st.lists(st.tuples(st.floats(0, 5), st.integers(-4, 4)), min_size=1, max_size=5)


def _poisson_central_moment_by_sum(x, n):
    k = np.arange(0, int(x + 40 * math.sqrt(x + 1) + 60))
    return float(np.sum((k - x) ** n * stats.poisson.pmf(k, x)))


def test_chain_product_examples():
    assert chain_product([(0.3, 2)]) == 1.0
    assert chain_product([(0, 0), (1, 0)]) == pytest.approx(P1_0, abs=1e-15)
    assert chain_product([(0, 0), (1, 1), (2, 1)]) == pytest.approx(P1_1 * P1_0, abs=1e-15)
    # order of input does not matter
    assert chain_product([(2, 1), (0, 0), (1, 1)]) == chain_product([(0, 0), (1, 1), (2, 1)])


@given(points_strategy, st.data())
@settings(max_examples=100, deadline=None)
def test_chain_product_coarsening_monotone(points, data):
    pts = sorted(points, key=lambda p: p[0])
    if len(pts) < 3:
        return
    drop = data.draw(st.integers(1, len(pts) - 2))
    coarse = pts[:drop] + pts[drop + 1:]
    assert chain_product(coarse) >= chain_product(pts) * (1 - 1e-12)


def test_touchard_low_orders():
    assert centered_poisson_moment(0.7, 0) == 1.0
    assert centered_poisson_moment(0.7, 1) == 0.0
    assert centered_poisson_moment(0.5, 2) == 0.5
    assert centered_poisson_moment(0.5, 3) == 0.5
    assert centered_poisson_moment(0.5, 4) == 1.25


@pytest.mark.parametrize("n", range(2, 13))
def test_touchard_against_pmf_sum(n):
    for x in (0.1, 0.5, 2.0, 7.0):
        ref = _poisson_central_moment_by_sum(x, n)
        assert centered_poisson_moment(x, n) == pytest.approx(ref, rel=1e-9)


def test_touchard_polynomial_coefficients():
    assert centered_poisson_polynomial(2) == (0, 1)
    assert centered_poisson_polynomial(3) == (0, 1)
    assert centered_poisson_polynomial(4) == (0, 1, 3)
    assert centered_poisson_polynomial(6) == (0, 1, 25, 15)


def test_touchard_errors():
    with pytest.raises(DomainError):
        centered_poisson_moment(-1.0, 2)
    with pytest.raises(CapabilityError):
        centered_poisson_moment(1.0, 13)


@pytest.mark.parametrize("m", range(9))
def test_partition_counts(m):
    parts = list(partitions_without_singletons(m))
    assert len(parts) == NO_SINGLETON_COUNTS[m]
    for p in parts:
        assert sorted(itertools.chain.from_iterable(p)) == list(range(m))
        assert all(len(b) >= 2 for b in p)


def test_exact_correlation_examples():
    assert exact_correlation([(0, 0), (1, 1)], 2.0) == pytest.approx(2 * P1_1, abs=1e-15)
    assert exact_correlation([(0, 0), (1, 1), (2, 1)], 1.0) == pytest.approx(P1_1 * P1_0, abs=1e-15)
    assert exact_correlation([(0.4, 3)], 1.0) == 0.0


def test_four_point_structure():
    pts = [(0, 0), (1, 0), (2, 0), (3, 0)]
    lam = 1.3
    val, terms = exact_correlation(pts, lam, return_terms=True)
    P = lambda t: rw_kernel(t, 0)
    pairs = lam**2 * (P(1) * P(1) + P(2) * P(2) + P(3) * P(1))
    assert val - pairs == pytest.approx(lam * P(1) ** 3, abs=1e-15)
    assert len(terms) == 4


def test_too_many_points():
    with pytest.raises(CapabilityError):
        exact_correlation([(i, 0) for i in range(9)], 1.0)


@given(points_strategy, st.floats(-3, 3), st.integers(-5, 5))
@settings(max_examples=60, deadline=None)
def test_correlation_invariances(points, shift_t, shift_x):
    if len(points) > 5:
        return
    base = exact_correlation(points, 1.2)
    t_min = min(t for t, _ in points)
    shift_t = max(shift_t, -t_min)
    moved = [(t + shift_t, x + shift_x) for t, x in points]
    mirrored = [(t, -x) for t, x in points]
    assert exact_correlation(moved, 1.2) == pytest.approx(base, rel=1e-9, abs=1e-15)
    assert exact_correlation(mirrored, 1.2) == pytest.approx(base, rel=1e-12, abs=1e-15)


@given(st.lists(st.tuples(st.floats(0, 6), st.integers(-6, 6)), min_size=3, max_size=3), st.floats(0.1, 3))
@settings(max_examples=60, deadline=None)
def test_odd_moment_bound(points, lam):
    pts = sorted(points)
    eta = max(rw_kernel(b[0] - a[0], b[1] - a[1]) for a, b in zip(pts, pts[1:]))
    assert exact_correlation(pts, lam) <= lam * eta**2 * (1 + 1e-12) + 1e-300


def test_mc_single_point_centred():
    m, se = mc_correlation([(0.5, 1)], 1.0, 50_000, seed=3)
    assert abs(m) <= 3 * se


def test_mc_same_point_variance():
    m, se = mc_correlation([(0.5, 1), (0.5, 1)], 1.0, 50_000, seed=4)
    assert abs(m - 1.0) <= 3 * se


def test_mc_requires_replicas():
    with pytest.raises(DomainError):
        mc_correlation([(0, 0)], 1.0, 10, seed=1)


@pytest.mark.parametrize("pts,lam", [
    ([(0.5, 0), (1.0, 1)], 1.0),
    ([(0.0, 0), (0.3, 0), (1.0, 1)], 2.0),
    ([(0.0, 0), (1.0, 0), (2.0, 0), (3.0, 0)], 1.0),
])
def test_mc_matches_exact(pts, lam):
    m, se = mc_correlation(pts, lam, 100_000, seed=10)
    assert abs(m - exact_correlation(pts, lam)) <= 3 * se


def test_coincidence_moment_examples():
    assert coincidence_moment([(0.5, 2)], 2, 1.0) == 1.0
    assert coincidence_moment([(0, 0), (1, 0)], 2, 1.0) == pytest.approx(P1_0, abs=1e-15)


def test_coincidence_counts_poisson_head():
    lam = 0.3
    pts = [(0, 0), (1, 0)]
    n = coincidence_counts(pts, lam, 100_000, seed=6)
    mu = lam * P1_0
    for k in (0, 1):
        frac = np.mean(n == k)
        p = stats.poisson.pmf(k, mu)
        assert abs(frac - p) <= 3 * math.sqrt(p * (1 - p) / n.size)
