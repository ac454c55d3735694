import math

import numpy as np
import pytest
from scipy import integrate, stats

from walkpolymer import continuum as C
from walkpolymer import rng as rngmod
from walkpolymer.errors import CapabilityError, DomainError
from walkpolymer.lattice_kernels import cont_kernel

SPEC = C.GridSpec(1.0, 16, -4.0, 4.0, 32)

# cell-average covariances on SPEC keyed by (time offset, space offset);
# frozen from the adaptive-quadrature reference
FROZEN_COV = {
    (0, 0): 2.4207457044881,
    (1, 0): 1.56195673304628,
    (0, 1): 0.73056123176,
    (1, 1): 0.92856391361855,
    (2, 3): 0.13341668753085,
    (5, 0): 0.7036495669906,
}


@pytest.fixture(scope="module")
def fields():
    return C.sample_fields(SPEC, 4000, 11)


def test_grid_validation():
    with pytest.raises(DomainError):
        C.GridSpec(1.0, 1, -1, 1, 8)
    with pytest.raises(DomainError):
        C.GridSpec(1.0, 4, 1, -1, 8)
    assert SPEC.dt == 1 / 16 and SPEC.dx == 0.25
    assert SPEC.refined().nt == 32


@pytest.mark.parametrize("offset,value", sorted(FROZEN_COV.items()))
def test_covariance_frozen(offset, value):
    assert C.covariance_table(SPEC)[offset] == pytest.approx(value, rel=1e-10)


@pytest.mark.parametrize("offset", [(0, 0), (1, 0), (0, 1), (2, 3)])
def test_covariance_against_quadrature(offset):
    fine = C.GridSpec(1.0, 32, -4.0, 4.0, 64)
    assert C.covariance_table(fine)[offset] == pytest.approx(C.cell_covariance_reference(fine, *offset), rel=1e-6)


def test_covariance_symmetric_and_offset_only():
    assert C.cell_covariance(SPEC, (2, 5), (7, 1)) == C.cell_covariance(SPEC, (7, 1), (2, 5))
    assert C.cell_covariance(SPEC, (2, 5), (7, 1)) == C.cell_covariance(SPEC, (4, 10), (9, 6))
    with pytest.raises(DomainError):
        C.cell_covariance(SPEC, (16, 0), (0, 0))


@pytest.mark.parametrize("di,dj", [(14, 4), (12, 4), (15, 2)])
def test_far_cells_match_heat_kernel(di, dj):
    val = C.covariance_table(SPEC)[di, dj]
    assert val == pytest.approx(cont_kernel(di * SPEC.dt, dj * SPEC.dx), rel=0.01)


def test_dense_cap():
    with pytest.raises(CapabilityError):
        C.covariance_matrix(C.GridSpec(1.0, 201, -1, 1, 200))


def test_sample_field_deterministic():
    a = C.sample_field(SPEC, 5)
    b = C.sample_fields(SPEC, 3, 5)
    assert np.allclose(a.xi, b.xi[0], rtol=1e-12, atol=1e-12)
    assert np.array_equal(C.sample_field(SPEC, 5).xi, a.xi)


def test_field_moments(fields):
    xi = fields.xi
    n = xi.shape[0]
    z = xi.mean(axis=0) / (xi.std(axis=0) / math.sqrt(n))
    assert np.mean(np.abs(z) > 3) < 0.01
    tab = C.covariance_table(SPEC)
    for (i, j), ref in [((3, 10), tab[0, 0]), ((8, 16), tab[0, 0])]:
        v = xi[:, i, j] ** 2
        assert abs(v.mean() - ref) <= 3 * v.std() / math.sqrt(n)
    prod = xi[:, 14, 20] * xi[:, 0, 16]
    assert abs(prod.mean() - tab[14, 4]) <= 3 * prod.std() / math.sqrt(n)


def test_field_gaussian():
    many = C.sample_fields(C.GridSpec(1.0, 4, -1, 1, 4), 100_000, 3).xi
    flat = many.reshape(many.shape[0], -1)
    std = flat / flat.std(axis=0)
    assert np.max(np.abs(stats.kurtosis(std, axis=0))) < 0.1
    # a fixed combination of a Gaussian vector is Gaussian too
    comb = std[:, 0] + 0.5 * std[:, 5] - std[:, 11]
    assert abs(stats.kurtosis(comb)) < 0.1
    assert abs(stats.skew(comb)) < 0.05


def test_series_trivial(fields):
    f = fields.member(0)
    assert np.all(C.series_term(f, 0, 0.3, 1.0).values == 1.0)
    assert np.all(C.series_term(f, 2, 0.0, 1.0).values == 0.0)
    assert np.all(C.series_solution(f, 3, 0.0, 1.0).values == 1.0)
    with pytest.raises(CapabilityError):
        C.series_term(f, 7, 0.3, 1.0)


def test_series_causal(fields):
    f = fields.member(1)
    k = 8
    base = C.series_solution(f, 3, 0.5, 1.0).values[: k + 1]
    xi = f.xi.copy()
    xi[k:] = 123.0
    moved = C.series_solution(f.with_values(xi), 3, 0.5, 1.0).values[: k + 1]
    assert np.allclose(base, moved, rtol=0, atol=1e-10)


def test_series_term_norms_decrease(fields):
    sol = C.series_solution(fields.member(2), 4, 0.3, 1.0)
    norms = sol.term_norms()
    assert np.all(np.diff(norms) < 0)


def test_term_at_matches_grid(fields):
    sol = C.series_solution(fields.member(3), 2, 0.4, 1.0)
    x = float(SPEC.centers[17])
    for m in (1, 2):
        assert sol.term_at(m, 0.5, x) == pytest.approx(C.GridFunction(SPEC, sol.terms[m]).at(0.5, x), rel=1e-9)


def test_order1_moments(fields):
    beta, lam = 0.3, 1.0
    sol = C.series_solution(fields, 1, beta, lam)
    u1 = sol.term_at(1, 1.0, 0.0)
    se_mean = u1.std() / math.sqrt(u1.size)
    assert abs(u1.mean()) <= 3 * se_mean
    sq = u1**2
    ref = C.order1_variance_reference(beta, lam)
    assert abs(sq.mean() - ref) <= 0.05 * ref + 3 * sq.std() / math.sqrt(sq.size)
    # exact grid variance sits inside the same band without sampling noise
    assert C.order1_grid_variance(SPEC, 1.0, 0.0, beta, lam) == pytest.approx(ref, rel=0.08)


def test_order1_reference_routes():
    ref = C.order1_variance_reference(0.3, 1.0)
    assert ref == pytest.approx(C.order1_variance_closed(0.3, 1.0, 1.0), rel=1e-8)

    def integrand(s, r):
        return C._heat(2.0 - 2.0 * min(r, s), 0.0)
    dq = integrate.dblquad(integrand, 0, 1, 0, 1, epsabs=1e-11)[0]
    assert ref == pytest.approx(0.09 * dq, rel=1e-6)


def test_space_semigroup():
    num, closed = C.space_semigroup_check(1.0, 0.3, 0.6)
    assert num == pytest.approx(closed, rel=1e-8)


def test_series_refinement_stable():
    beta, lam = 0.3, 1.0
    coarse = C.GridSpec(1.0, 8, -4.0, 4.0, 16)
    fine = coarse.refined()
    means = []
    for spec in (coarse, fine):
        f = C.sample_fields(spec, 1000, 21)
        means.append(float(np.mean(C.series_solution(f, 3, beta, lam).at(1.0, 0.0))))
    assert abs(means[1] - means[0]) < 0.05 * means[1]


def test_series_mean_matches_feynman_kac(fields):
    beta, lam = 0.3, 1.0
    vals = C.series_solution(fields, 4, beta, lam).at(1.0, 0.0)
    m, se = rngmod.mean_se(vals)
    fk, fse = C.fk_moment(1, beta, lam, 1.0, 2000, 64, 4)
    assert abs(m - fk) <= 0.05 * fk + 3 * math.hypot(se, fse)


def test_series_second_order_matches_brownian_moment():
    # E u_2 = (beta^2 lam / 2) E V(B); the 16x32 grid is too coarse for 5 %, so refine once
    beta, lam = 0.5, 1.0
    f = C.sample_fields(C.GridSpec(1.0, 32, -4.0, 4.0, 64), 1500, 11)
    u2 = C.series_solution(f, 2, beta, lam).term_at(2, 1.0, 0.0)
    m, se = rngmod.mean_se(u2)
    ref = 0.5 * beta**2 * lam * C.double_integral_mean(1.0)
    assert abs(m - ref) <= 0.05 * ref + 3 * se


def test_mollifier_weights():
    with pytest.raises(DomainError):
        C.mollifier_weights(SPEC, 0.1, 0.1, 1.0, 3.8)
    with pytest.raises(DomainError):
        C.mollifier_weights(SPEC, 0.1, 0.5, 0.25, 0.0)
    w = C.mollifier_weights(SPEC, 0.1, 0.25, 1.0, 0.0)
    assert w.sum() == pytest.approx(1.0, abs=1e-9)
    const = np.full((SPEC.nt, SPEC.nx), 2.5)
    assert C.mollified_field_value((SPEC, const), 0.1, 0.25, 1.0, 0.0) == pytest.approx(2.5, rel=1e-9)


def test_mollified_variance(fields):
    eps, epsp = 0.1, 0.25
    vals = C.mollified_field_value(fields, eps, epsp, 0.75, 0.0)
    m, se = rngmod.mean_se(vals)
    assert abs(m) <= 3 * se
    sq = vals**2
    ref = C.mollified_variance_reference(eps, epsp)
    assert abs(sq.mean() - ref) <= 0.05 * ref + 3 * sq.std() / math.sqrt(sq.size)


def test_brownian_path_validation():
    with pytest.raises(DomainError):
        C.BrownianPath(np.linspace(0, 1, 3), np.array([0.1, 0, 0]))
    with pytest.raises(DomainError):
        C.brownian_double_integral(C.sample_brownian_path(1.0, 32, 1))
    p = C.sample_brownian_path(1.0, 64, 1)
    r = C.refine(p, np.random.default_rng(0))
    assert r.resolution == 128 and np.array_equal(r.values[::2], p.values)


def test_double_integral_static_grid():
    # zero grid values still carry bridge fluctuations inside cells; the gap to the
    # static-path value closes like sqrt(h)
    gaps = []
    for n in (64, 256, 1024):
        v = C.brownian_double_integral(C.BrownianPath(np.linspace(0, 1, n + 1), np.zeros(n + 1)))
        gaps.append(C.DOUBLE_INTEGRAL_BOUND - v)
    assert all(g > 0 for g in gaps)
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.1)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.1)
    assert C.DOUBLE_INTEGRAL_BOUND == pytest.approx(1.06385, abs=1e-5)
    assert C.DOUBLE_INTEGRAL_MEAN == pytest.approx(0.75225, abs=1e-5)


def test_double_integral_richardson():
    p = C.sample_brownian_path(1.0, 64, 7)
    gen = np.random.default_rng(3)
    finer = C.refine(p, gen)
    # refinement reveals fresh bridge points; the conditional value moves by O(h) at most
    assert abs(C.brownian_double_integral(p) - C.brownian_double_integral(finer)) < 0.05


@pytest.mark.parametrize("t", [0.5, 1.0, 2.0])
def test_double_integral_bound_and_mean(t):
    B = C.sample_brownian_paths(4000, t, 64, 9, stream_index=int(4 * t))
    V = C.double_integrals(B, t)
    assert np.all(V <= C.double_integral_bound(t) * (1 + 1e-9))
    m, se = rngmod.mean_se(V)
    assert abs(m - C.double_integral_mean(t)) <= 3 * se


def test_double_integral_small_time():
    t = 1e-2
    V = C.double_integrals(C.sample_brownian_paths(2000, t, 64, 2), t)
    m, se = rngmod.mean_se(V)
    assert abs(m - C.double_integral_mean(t)) <= 3 * se
    assert m < 1e-3


def test_cross_integral_mean():
    B = C.sample_brownian_paths(4000, 1.0, 64, 13)
    V12 = C.cross_double_integrals(B[:2000], B[2000:], 1.0)
    m, se = rngmod.mean_se(V12)
    assert abs(m - C.CROSS_INTEGRAL_MEAN) <= 3 * se


def test_fk_moment_envelope():
    assert C.fk_moment(1, 0.0, 1.0, 1.0, 10, 64, 1) == (1.0, 0.0)
    est, se = C.fk_moment(1, 0.5, 1.0, 1.0, 2000, 64, 1)
    assert 1.0 <= est <= math.exp(0.125 * C.DOUBLE_INTEGRAL_BOUND)
    est2, _ = C.fk_moment(2, 0.5, 1.0, 1.0, 500, 64, 1)
    assert est2 > est**2
    with pytest.raises(DomainError):
        C.fk_moment(3, 0.5, 1.0, 1.0, 10, 64, 1)


def test_fk_thread_independent():
    a = C.fk_samples(1, 1.0, 300, 64, 5, threads=1)
    b = C.fk_samples(1, 1.0, 300, 64, 5, threads=3)
    assert np.array_equal(a, b)
