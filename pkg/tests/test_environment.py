import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from walkpolymer import rng as rngmod
from walkpolymer.environment import (EnvironmentConfig, bump_pairing_grid, buffer_halfwidth, displacement_tail,
                                     empty_environment,
                                     environment_from_dict, environment_from_paths, environment_to_dict,
                                     field_pairing, load_snapshot, occupation_samples, sample_environment,
                                     save_snapshot)
from walkpolymer.errors import ConfigError, DomainError, SnapshotError, WindowError
from walkpolymer.paths import PathBatch, WalkPath, sample_paths
from walkpolymer.testfunctions import standard_bump, unit_bump, zero_function


def _merge_oracle(walks, polymer, lam, t0, T):
    """Pure-Python event merge: sum of (interval length) * (count - lam)."""
    events = {t0, T}
    for p in list(walks) + [polymer]:
        events.update(float(s) for s in p.times if t0 < s < T)
    grid = sorted(events)
    total = 0.0
    for a, b in zip(grid, grid[1:]):
        mid = 0.5 * (a + b)
        site = polymer.position(mid)
        count = sum(1 for w in walks if w.position(mid) == site)
        total += (b - a) * (count - lam)
    return total


def _random_walks(gen, n, T, spread=2):
    return [WalkPath(int(gen.integers(-spread, spread + 1)), *_jumps(gen, T)) for _ in range(n)]


def _jumps(gen, T):
    k = gen.poisson(T)
    times = np.sort(gen.uniform(0, T, k))
    return times, (2 * gen.integers(0, 2, k) - 1).astype(np.int8)


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        EnvironmentConfig(0.0, 10, 1.0)
    with pytest.raises(ConfigError):
        EnvironmentConfig(1.0, 0, 1.0)
    with pytest.raises(ConfigError):
        EnvironmentConfig(1.0, 5, -1.0)
    with pytest.raises(ConfigError):
        EnvironmentConfig(1.0, 5, 1.0, leak_tolerance=1.0)


def test_buffer_certificate_below_tolerance():
    for lam, T, delta in [(1.0, 1.0, 1e-8), (2.0, 25.0, 1e-8), (0.5, 400.0, 1e-10)]:
        B, leak = buffer_halfwidth(lam, T, delta)
        assert leak <= delta
        # direct sum of the same per-distance bound: B is the smallest certified buffer
        d = np.arange(1, 20 * B + 200, dtype=float)
        q = displacement_tail(T, d)
        leak_at = lambda b: 2 * lam * q[b:].sum()
        assert leak_at(B) <= delta * (1 + 1e-9)
        assert B == 0 or leak_at(B - 1) > delta


def test_displacement_bound_dominates_simulation():
    T = 4.0
    batch = sample_paths(20_000, 0.0, T, 0, np.random.default_rng(3))
    for d in (3, 5, 8):
        hit = np.mean([p.sites().max() >= d for p in batch])
        assert hit <= displacement_tail(T, [d])[0]


def test_total_initial_count_is_poisson():
    cfg = EnvironmentConfig(1.0, 10, 1.0)
    env0 = sample_environment(cfg, 11)
    n_sites = 2 * (10 + env0.buffer_halfwidth) + 1
    counts = np.array([len(sample_environment(cfg, 11, r)) for r in range(10_000)])
    m, se = rngmod.mean_se(counts)
    assert abs(m - n_sites) <= 3 * se


def test_occupation_at_time_zero_matches_initial_counts():
    cfg = EnvironmentConfig(1.0, 6, 2.0)
    env = sample_environment(cfg, 5)
    init = env.initial_counts()
    for x in range(-6, 7):
        assert env.occupation(0.0, x) == init.get(x, 0)
        assert env.centered_occupation(0.0, x) == init.get(x, 0) - 1.0


def test_empty_environment():
    env = empty_environment(EnvironmentConfig(1.0, 5, 2.0))
    assert env.occupation(1.3, 2) == 0
    assert env.centered_occupation(1.3, 2) == -1.0
    S = WalkPath(0, [0.5, 1.5], [1, -1])
    assert env.path_integrals(PathBatch.from_paths([S]), 2.0)[0] == -2.0


def test_single_walk_following_polymer():
    lam, h = 0.25, 3.0
    S = WalkPath(0, [0.4, 1.1, 2.5], [1, 1, -1])
    env = environment_from_paths(EnvironmentConfig(lam, 5, h), [S])
    # one walker always on the polymer: integrand 1 - lam
    assert env.path_integrals(PathBatch.from_paths([S]), h)[0] == pytest.approx(h * (1 - lam), abs=1e-14)


def test_query_outside_window():
    env = sample_environment(EnvironmentConfig(1.0, 4, 1.0), 1)
    with pytest.raises(DomainError):
        env.occupation(0.5, 5)
    with pytest.raises(DomainError):
        env.occupation(1.5, 0)
    far = WalkPath(0, [0.1, 0.2, 0.3, 0.4, 0.5], [1, 1, 1, 1, 1])
    with pytest.raises(WindowError):
        env.path_integrals(PathBatch.from_paths([far]), 1.0)


def test_path_integral_exact_against_merge_oracle():
    gen = np.random.default_rng(2024)
    for trial in range(20):
        T = float(gen.uniform(0.5, 3.0))
        n = int(gen.integers(0, 11))
        walks = _random_walks(gen, n, T)
        lam = float(gen.uniform(0.2, 2.0))
        env = environment_from_paths(EnvironmentConfig(lam, 8, T), walks)
        t0 = float(gen.uniform(0, 0.3 * T))
        k = gen.poisson(T - t0)
        times = np.sort(gen.uniform(t0, T, k))
        S = WalkPath(0, times, (2 * gen.integers(0, 2, k) - 1).astype(np.int8), t0)
        got = env.path_integrals(PathBatch.from_paths([S]), T)[0]
        assert abs(got - _merge_oracle(walks, S, lam, t0, T)) < 1e-12


def test_path_integral_riemann_cross_check():
    # a 1e-5 Riemann sum carries O(h) error per discontinuity, far above 1e-12
    gen = np.random.default_rng(7)
    T, h = 1.0, 1e-5
    for _ in range(5):
        walks = _random_walks(gen, 6, T, spread=1)
        env = environment_from_paths(EnvironmentConfig(1.0, 8, T), walks)
        S = WalkPath(0, *_jumps(gen, T))
        exact = env.path_integrals(PathBatch.from_paths([S]), T)[0]
        grid = (np.arange(int(T / h)) + 0.5) * h
        pos = S.position(grid)
        count = sum((w.position(grid) == pos).astype(float) for w in walks)
        riemann = h * np.sum(count - 1.0)
        n_events = sum(w.times.size for w in walks) + S.times.size
        assert abs(riemann - exact) <= n_events * h * 8


def test_path_integral_mean_zero_over_environments():
    cfg = EnvironmentConfig(1.0, 12, 2.0)
    S = PathBatch.from_paths([WalkPath(0, [0.3, 0.9, 1.4], [1, 1, -1])])
    vals = np.array([sample_environment(cfg, 3, r).path_integrals(S, 2.0)[0] for r in range(4000)])
    m, se = rngmod.mean_se(vals)
    assert abs(m) <= 3 * se


def test_occupation_marginal_poisson_variance_ratio():
    occ = occupation_samples(2.0, [(1.0, 0)], 100_000, seed=9)[:, 0].astype(float)
    n = occ.size
    ratio = occ.var(ddof=1) / occ.mean()
    # delta-method SE of the variance/mean ratio for Poisson(2): sqrt((2 + 2 mu) / (mu n)) approx
    se = math.sqrt((2.0 + 1.0 / 2.0 * 2) / n) * 1.0
    assert abs(ratio - 1.0) <= 3 * se


def test_occupation_mean_full_environments():
    cfg = EnvironmentConfig(1.5, 5, 1.0)
    vals = np.array([sample_environment(cfg, 21, r).occupation(0.7, 3) for r in range(20_000)])
    m, se = rngmod.mean_se(vals)
    assert abs(m - 1.5) <= 3 * se


def test_occupation_mean_skeleton_sampler():
    occ = occupation_samples(1.5, [(0.7, 3)], 100_000, seed=4)[:, 0]
    m, se = rngmod.mean_se(occ)
    assert abs(m - 1.5) <= 3 * se


@pytest.mark.parametrize("frac", [0.0, 0.5, 1.0])
def test_stationarity_chi_square(frac):
    lam, T = 1.0, 4.0
    cfg = EnvironmentConfig(lam, 2, T)
    t = frac * T
    occ = np.array([sample_environment(cfg, 77, r).occupation(t, 0) for r in range(10_000)])
    kmax = 5
    obs = np.array([np.sum(occ == k) for k in range(kmax)] + [np.sum(occ >= kmax)])
    p = stats.poisson.pmf(np.arange(kmax), lam)
    exp = occ.size * np.append(p, 1 - p.sum())
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_determinism_same_seed():
    cfg = EnvironmentConfig(1.0, 5, 3.0)
    a = json.dumps(environment_to_dict(sample_environment(cfg, 99, 2)))
    b = json.dumps(environment_to_dict(sample_environment(cfg, 99, 2)))
    c = json.dumps(environment_to_dict(sample_environment(cfg, 99, 3)))
    assert a == b
    assert a != c


def test_snapshot_roundtrip_bit_identical(tmp_path):
    times = [0.0, 0.37, 1.0, 2.5]
    sites = list(range(-5, 6))
    for r in range(20):
        cfg = EnvironmentConfig(1.0 + 0.1 * r, 5, 2.5)
        env = sample_environment(cfg, 1234, r)
        path = tmp_path / f"env{r}.json"
        save_snapshot(env, path)
        back = load_snapshot(path)
        assert np.array_equal(back.walks.times, env.walks.times)
        for t in times:
            assert np.array_equal(back.occupation(t, sites), env.occupation(t, sites))


def test_snapshot_truncated_file(tmp_path):
    env = sample_environment(EnvironmentConfig(1.0, 3, 1.0), 1)
    path = tmp_path / "env.json"
    save_snapshot(env, path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(SnapshotError, match="line 1, column"):
        load_snapshot(path)


def test_snapshot_field_diagnostics():
    env = sample_environment(EnvironmentConfig(1.0, 3, 1.0), 1)
    data = environment_to_dict(env)
    bad = dict(data, extra=1)
    with pytest.raises(SnapshotError, match="extra"):
        environment_from_dict(bad)
    bad = dict(data)
    del bad["horizon"]
    with pytest.raises(SnapshotError, match="horizon"):
        environment_from_dict(bad)
    bad = json.loads(json.dumps(data))
    bad["walks"][0]["jumps"] = [[0.5, 2]]
    with pytest.raises(SnapshotError, match=r"walks\[0\]"):
        environment_from_dict(bad)


def test_snapshot_times_with_fifteen_digits():
    env = sample_environment(EnvironmentConfig(1.0, 3, 2.0), 8)
    data = environment_to_dict(env)
    for w in data["walks"]:
        w["jumps"] = [[float(f"{t:.15g}"), s] for t, s in w["jumps"]]
    back = environment_from_dict(data)
    # 15 significant digits carry a relative error up to 5e-15, i.e. several ulp
    assert np.allclose(back.walks.times, env.walks.times, rtol=5e-15, atol=0)
    # the writer itself uses shortest round-trip repr, which is exact
    exact = environment_from_dict(json.loads(json.dumps(environment_to_dict(env))))
    assert np.array_equal(exact.walks.times, env.walks.times)


def test_field_pairing_zero_function():
    env = sample_environment(EnvironmentConfig(1.0, 20, 50.0), 3)
    assert field_pairing(env, zero_function(), 0.2) == 0.0


def test_field_pairing_support_check():
    env = sample_environment(EnvironmentConfig(1.0, 3, 10.0), 3)
    with pytest.raises(DomainError):
        field_pairing(env, unit_bump(), 0.1)


def _pairing_oracle(env, phi, eps):
    # per site: integrate the time factor exactly over constancy intervals of the occupation
    t_lo, t_hi, x_lo, x_hi = phi.support
    total = 0.0
    for x in range(int(math.floor(x_lo / eps)), int(math.ceil(x_hi / eps)) + 1):
        sx = float(phi.space_factor(eps * x))
        if sx == 0.0:
            continue
        a, b = t_lo / eps**2, t_hi / eps**2
        events = sorted({a, b} | {float(s) for s in env.walks.times if a < s < b})
        for u, v in zip(events, events[1:]):
            c = env.centered_occupation(0.5 * (u + v), x)
            total += c * sx * float(phi.time_integral(eps**2 * u, eps**2 * v))
    return phi.amplitude * eps**0.5 * total


def test_field_pairing_matches_interval_oracle():
    phi = standard_bump()
    eps = 0.2
    env = sample_environment(EnvironmentConfig(1.0, 4, 0.5 / eps**2), 17)
    assert field_pairing(env, phi, eps) == pytest.approx(_pairing_oracle(env, phi, eps), abs=1e-11)


def test_bump_pairing_grid_matches_pointwise_pairing():
    eps = 0.1
    base = unit_bump().scaled(0.5)
    env = sample_environment(EnvironmentConfig(1.0, 25, 2.0 / eps**2), 5)
    ts = np.array([0.0, 0.3, 1.0])
    xs = np.array([-1.0, 0.0, 0.55, 1.2])
    grid = bump_pairing_grid(env, base, eps, ts, xs)
    for i, dt in enumerate(ts):
        for j, dx in enumerate(xs):
            direct = field_pairing(env, base.shifted(dt, dx), eps)
            assert grid[i, j] == pytest.approx(direct, abs=1e-12)


def test_field_pairing_mean_zero():
    phi = standard_bump()
    eps = 0.2
    cfg = EnvironmentConfig(1.0, 4, 0.5 / eps**2)
    vals = np.array([field_pairing(sample_environment(cfg, 31, r), phi, eps) for r in range(3000)])
    m, se = rngmod.mean_se(vals)
    assert abs(m) <= 3 * se


@given(st.integers(0, 2**32), st.floats(0.3, 3.0))
@settings(max_examples=25, deadline=None)
def test_walk_positions_consistent(seed, T):
    batch = sample_paths(5, 0.0, T, 0, np.random.default_rng(seed))
    lo, hi = batch.extent()
    for p in batch:
        sites = p.sites()
        assert lo <= sites.min() and sites.max() <= hi
        assert p.position(T) == sites[-1]
        assert np.all(np.diff(p.times) > 0)
