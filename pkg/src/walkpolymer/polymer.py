"""Polymer partition functions in the walk environment.

Quenched: ``Z = E_S[exp(beta * int xi~(s, S_s) ds)]`` for a fixed environment,
estimated over polymer paths with the exact path integral.

Annealed: integrating out the Poisson field gives

    E[Z] = E_S[exp(lam * beta * int_0^T (v_S(t, S_t) - 1) dt)],

where ``v_S`` solves the lattice equation ``d_s v = 1/2 Lap v + beta 1{S_s = y} v``,
``v(0) = 1``. Between polymer jumps the equation has constant coefficients,
so ``w = v - 1`` is propagated exactly in the eigenbasis of the segment
operator, and its time integral along the polymer is also exact.
"""
from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy import integrate, linalg

from . import rng as rngmod
from .environment import (Environment, EnvironmentConfig, buffer_halfwidth, escape_probability,
                          sample_environment)
from .errors import CapabilityError, DomainError, WindowError
from .lattice_kernels import rw_kernel
from .paths import PathBatch, WalkPath, sample_paths

MAX_CHAOS_ORDER = 6
POLYMER_LEAK = 1e-9
V_TOLERANCE = 1e-8


@dataclass(frozen=True)
class PolymerConfig:
    """Coupling and time window of the polymer (microscopic units)."""

    beta: float
    horizon: float
    t0: float = 0.0
    x0: int = 0
    eps: float | None = None

    def __post_init__(self):
        if not self.horizon > self.t0 >= 0:
            raise DomainError("need 0 <= t0 < horizon")

    @classmethod
    def scaled(cls, beta: float, eps: float, t: float = 0.0, x: float = 0.0) -> "PolymerConfig":
        """Intermediate-disorder scaling: beta -> eps^{3/2} beta, T = eps^{-2}.

        The macroscopic start ``(t, x)`` maps to ``(t / eps^2, x / eps)``.
        """
        if not 0 < eps <= 1:
            raise DomainError("eps must lie in (0, 1]")
        site = x / eps
        if abs(site - round(site)) > 1e-9:
            raise DomainError("x is not on the eps-lattice")
        return cls(beta * eps**1.5, eps**-2, t * eps**-2, int(round(site)), eps)

    @property
    def duration(self) -> float:
        return self.horizon - self.t0


@dataclass(frozen=True)
class ChaosTerm:
    order: int
    value: float
    se: float = 0.0


def polymer_margin(duration: float, leak: float = POLYMER_LEAK) -> int:
    """Distance a polymer path exceeds with probability at most ``leak``."""
    m = 1
    while escape_probability(duration, m) > leak:
        m = m + 1 if m < 16 else int(m * 1.25) + 1
    # refine downwards to the smallest certified value
    while m > 1 and escape_probability(duration, m - 1) <= leak:
        m -= 1
    return m


def required_window(cfg: PolymerConfig, leak: float = POLYMER_LEAK) -> int:
    return abs(cfg.x0) + polymer_margin(cfg.duration, leak)


def environment_config_for(cfg: PolymerConfig, lam: float, leak: float = POLYMER_LEAK,
                           delta: float = 1e-8) -> EnvironmentConfig:
    """Environment window large enough for the polymer with certified escape <= leak."""
    return EnvironmentConfig(lam, required_window(cfg, leak), cfg.horizon, delta)


def _check_window(env: Environment, cfg: PolymerConfig, leak: float = POLYMER_LEAK):
    if cfg.horizon > env.horizon:
        raise WindowError("polymer horizon exceeds the environment horizon")
    room = env.window_halfwidth - abs(cfg.x0)
    p = escape_probability(cfg.duration, room + 1)
    if p > leak:
        raise WindowError(
            f"environment window too small: polymer escape probability {p:.3g} exceeds {leak:.1g}; "
            f"need window_halfwidth >= {required_window(cfg, leak)}", leak=p)


def sample_polymers(cfg: PolymerConfig, n: int, gen: np.random.Generator) -> PathBatch:
    return sample_paths(n, cfg.t0, cfg.horizon, cfg.x0, gen)


def sample_polymer(cfg: PolymerConfig, seed: int, index: int = 0) -> WalkPath:
    return sample_polymers(cfg, 1, rngmod.stream(seed, rngmod.TAGS["polymer"], index)).path(0)


def polymer_actions(env: Environment, cfg: PolymerConfig, replicas: int, seed: int,
                    stream_index: int = 0) -> np.ndarray:
    """Exact int xi~(s, S_s) ds for ``replicas`` polymer paths against ``env``."""
    _check_window(env, cfg)
    gen = rngmod.stream(seed, rngmod.TAGS["polymer"], stream_index)
    batch = sample_polymers(cfg, replicas, gen)
    return env.path_integrals(batch, cfg.horizon)


def quenched_partition(env: Environment, cfg: PolymerConfig, replicas: int, seed: int,
                       stream_index: int = 0) -> tuple[float, float]:
    """MC estimate (and SE) of the quenched partition function."""
    if cfg.beta == 0:
        return 1.0, 0.0
    H = polymer_actions(env, cfg, replicas, seed, stream_index)
    w = np.exp(cfg.beta * H)
    if replicas == 1:
        return float(w[0]), float("nan")
    return rngmod.mean_se(w)


def chaos_terms(env: Environment, cfg: PolymerConfig, k_max: int, replicas: int, seed: int,
                stream_index: int = 0) -> list[ChaosTerm]:
    """Moment-form chaos terms beta^k/k! E_S[H^k], k = 1..k_max, on shared paths."""
    if k_max > MAX_CHAOS_ORDER:
        raise CapabilityError(f"chaos order {k_max} exceeds {MAX_CHAOS_ORDER}")
    if cfg.beta == 0:
        return [ChaosTerm(k, 0.0, 0.0) for k in range(1, k_max + 1)]
    H = polymer_actions(env, cfg, replicas, seed, stream_index)
    out = []
    for k in range(1, k_max + 1):
        vals = (cfg.beta * H) ** k / math.factorial(k)
        m, se = rngmod.mean_se(vals)
        out.append(ChaosTerm(k, m, se))
    return out


def chaos_term(env: Environment, cfg: PolymerConfig, k: int, time_samples: int, seed: int,
               method: str = "moment") -> ChaosTerm:
    """k-th chaos term; ``method="simplex"`` samples the iterated-integral form (k <= 2)."""
    if k < 1:
        raise DomainError("chaos order must be >= 1")
    if k > MAX_CHAOS_ORDER:
        raise CapabilityError(f"chaos order {k} exceeds {MAX_CHAOS_ORDER}")
    if method == "moment":
        return chaos_terms(env, cfg, k, time_samples, seed)[k - 1]
    if method == "simplex":
        return _simplex_chaos(env, cfg, k, time_samples, seed)
    raise DomainError(f"unknown method {method!r}")


def _simplex_chaos(env: Environment, cfg: PolymerConfig, k: int, samples: int, seed: int) -> ChaosTerm:
    # beta^k int_{t0 < s1 < .. < sk < T} sum_x prod P xi~ with times sampled uniformly
    if k > 2:
        raise CapabilityError("simplex form is implemented for k <= 2 only")
    if cfg.beta == 0:
        return ChaosTerm(k, 0.0, 0.0)
    _check_window(env, cfg)
    gen = rngmod.stream(seed, rngmod.TAGS["chaos"], k)
    L = env.window_halfwidth
    xs = np.arange(-L, L + 1)
    D = cfg.duration
    vals = np.empty(samples)
    for i in range(samples):
        if k == 1:
            s = cfg.t0 + D * gen.random()
            a = rw_kernel(s - cfg.t0, xs - cfg.x0) * env.centered_occupation(np.full(xs.size, s), xs)
            vals[i] = D * a.sum()
        else:
            u = np.sort(gen.random(2)) * D + cfg.t0
            a = rw_kernel(u[0] - cfg.t0, xs - cfg.x0) * env.centered_occupation(np.full(xs.size, u[0]), xs)
            kern = rw_kernel(u[1] - u[0], np.arange(-2 * L, 2 * L + 1))
            b = np.convolve(a, kern)[2 * L: 4 * L + 1]
            vals[i] = 0.5 * D * D * np.sum(b * env.centered_occupation(np.full(xs.size, u[1]), xs))
    m, se = rngmod.mean_se(vals * cfg.beta**k)
    return ChaosTerm(k, m, se)


def truncated_series(env: Environment, cfg: PolymerConfig, m: int, replicas: int, seed: int,
                     stream_index: int = 0) -> float:
    """1 + sum_{k <= m} Z^(k) (moment form, shared paths)."""
    if m == 0 or cfg.beta == 0:
        return 1.0
    return 1.0 + sum(t.value for t in chaos_terms(env, cfg, m, replicas, seed, stream_index))


# ---------------------------------------------------------------------------
# v_S solver


def _phi1(z):
    # (e^z - 1) / z
    z = np.asarray(z, dtype=float)
    small = np.abs(z) < 1e-5
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 + z / 2.0 + z * z / 6.0, np.expm1(zs) / zs)


@nb.njit(cache=True, nogil=True)
def _phis(z, h, p1, p2):
    # p1 = h (e^z - 1)/z, p2 = h^2 (e^z - 1 - z)/z^2 with z = lam h
    for i in range(z.size):
        zi = z[i]
        if abs(zi) < 1e-3:
            p1[i] = h * (1.0 + zi / 2.0 + zi * zi / 6.0 + zi * zi * zi / 24.0)
            p2[i] = h * h * (0.5 + zi / 6.0 + zi * zi / 24.0 + zi * zi * zi / 120.0)
        else:
            e = math.expm1(zi)
            p1[i] = h * e / zi
            p2[i] = h * h * (e - zi) / (zi * zi)


@nb.njit(cache=True, nogil=True)
def _propagate(hs, keys, lams, Qs, gs, rows, n):
    # exact w-propagation over segments; returns sum of int w(t, S_t) dt
    w = np.zeros(n)
    p1 = np.empty(n)
    p2 = np.empty(n)
    total = 0.0
    for j in range(hs.size):
        k = keys[j]
        h = hs[j]
        lam = lams[k]
        Q = Qs[k]
        g = gs[k]
        c = np.dot(w, Q)
        _phis(lam * h, h, p1, p2)
        acc = 0.0
        for i in range(n):
            acc += rows[k, i] * (p1[i] * c[i] + p2[i] * g[i])
            c[i] = math.exp(lam[i] * h) * c[i] + p1[i] * g[i]
        total += acc
        w = np.dot(Q, c)
    return total


@nb.njit(cache=True, nogil=True)
def _linear_response(hs, idx, lam, Q, beta):
    n = lam.size
    c = np.zeros(n)
    p1 = np.empty(n)
    p2 = np.empty(n)
    total = 0.0
    for j in range(hs.size):
        h = hs[j]
        row = Q[idx[j]]
        _phis(lam * h, h, p1, p2)
        acc = 0.0
        for i in range(n):
            g = beta * row[i]
            acc += row[i] * (p1[i] * c[i] + p2[i] * g)
            c[i] = math.exp(lam[i] * h) * c[i] + p1[i] * g
        total += acc
    return total


class VFieldSolver:
    """Exact propagation of w = v - 1 on the lattice ``[lo, hi]`` with w = 0 outside.

    Segment operators ``1/2 Lap + beta * sum_y e_y e_y^T`` are diagonalised once
    per potential configuration and cached.
    """

    def __init__(self, beta: float, lo: int, hi: int, cache_size: int = 512):
        if hi < lo:
            raise DomainError("empty lattice")
        self.beta = float(beta)
        self.lo, self.hi = int(lo), int(hi)
        self.n = self.hi - self.lo + 1
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size
        lam, Q = linalg.eigh_tridiagonal(np.full(self.n, -1.0), np.full(self.n - 1, 0.5))
        self.free = (lam, np.ascontiguousarray(Q))

    def _eig(self, key: tuple[int, ...]):
        hit = self._cache.get(key)
        if hit is not None:
            self._cache.move_to_end(key)
            return hit
        diag = np.full(self.n, -1.0)
        for y in key:
            diag[y] += self.beta
        lam, Q = linalg.eigh_tridiagonal(diag, np.full(self.n - 1, 0.5))
        rows = Q[list(key), :].sum(axis=0)
        val = (lam, np.ascontiguousarray(Q), self.beta * rows, rows)
        self._cache[key] = val
        if len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)
        return val

    def _segments(self, paths: list[WalkPath], horizon: float):
        """Durations and sorted lattice-index tuples of the merged constancy segments."""
        if len(paths) == 1:
            p = paths[0]
            t = p.times[p.times < horizon]
            edges = np.concatenate(([0.0], t, [horizon]))
            sites = p.sites()[: t.size + 1]
            keys = [(int(s) - self.lo,) for s in sites]
        else:
            t = np.unique(np.concatenate([p.times[p.times < horizon] for p in paths]))
            edges = np.concatenate(([0.0], t, [horizon]))
            cols = [p.position(edges[:-1]) for p in paths]
            keys = [tuple(sorted(int(c[i]) - self.lo for c in cols)) for i in range(edges.size - 1)]
        hs = np.diff(edges)
        if keys:
            lo_i = min(k[0] for k in keys)
            hi_i = max(k[-1] for k in keys)
            if lo_i < 0 or hi_i >= self.n:
                raise WindowError("polymer leaves the v-field lattice")
        return hs, keys

    def integrate_many(self, groups, horizon: float) -> np.ndarray:
        """``integrate`` for a list of path groups, sharing one eigen table."""
        segs = [self._segments([g] if isinstance(g, WalkPath) else list(g), horizon) for g in groups]
        out = np.empty(len(groups))
        budget = max(1, int(2e8 // (8 * self.n * self.n)))  # cap table memory near 200 MB
        i = 0
        while i < len(groups):
            table: dict = {}
            j = i
            while j < len(groups):
                new = {k for k in segs[j][1] if k not in table}
                if table and len(table) + len(new) > budget:
                    break
                for k in new:
                    table[k] = len(table)
                j += 1
            keys = list(table)
            eig = [self._eig(k) for k in keys]
            lams = np.stack([e[0] for e in eig])
            Qs = np.stack([e[1] for e in eig])
            gs = np.stack([e[2] for e in eig])
            rows = np.stack([e[3] for e in eig])
            for q in range(i, j):
                hs, ks = segs[q]
                kidx = np.array([table[k] for k in ks], dtype=np.int64)
                out[q] = _propagate(hs, kidx, lams, Qs, gs, rows, self.n)
            i = j
        return out

    def integrate(self, paths, horizon: float, record: bool = False):
        """Return sum_i int_0^T w(t, S^i_t) dt for the given path(s).

        With ``record=True`` also returns the per-segment states needed to
        evaluate w anywhere.
        """
        if isinstance(paths, WalkPath):
            paths = [paths]
        if not record:
            return float(self.integrate_many([paths], horizon)[0])
        hs, keys = self._segments(paths, horizon)
        w = np.zeros(self.n)
        total = 0.0
        states = []
        a = 0.0
        p1 = np.empty(self.n)
        p2 = np.empty(self.n)
        for h, key in zip(hs, keys):
            lam, Q, g, rows = self._eig(key)
            c = Q.T @ w
            _phis(lam * h, h, p1, p2)
            total += float(rows @ (p1 * c + p2 * g))
            states.append((a, a + h, key, c))
            w = Q @ (np.exp(lam * h) * c + p1 * g)
            a += h
        return total, states, w

    def linear_response(self, path: WalkPath, horizon: float) -> float:
        """int_0^T w1(t, S_t) dt for w1' = 1/2 Lap w1 + beta e_{S_t}.

        First-order part of ``integrate``; used as a control variate.
        """
        hs, keys = self._segments([path], horizon)
        idx = np.array([k[0] for k in keys], dtype=np.int64)
        lam, Q = self.free
        return float(_linear_response(hs, idx, lam, Q, self.beta))


def v_margin(beta: float, horizon: float, tol: float = V_TOLERANCE) -> int:
    """Lattice margin beyond the polymer range that certifies |w error| <= tol.

    Freezing w at the boundary changes v only on walks that travel the margin
    before the horizon; such walks carry weight at most exp(max(beta, 0) T) + 1.
    """
    weight = math.exp(min(max(beta, 0.0) * horizon, 700.0)) + 1.0
    m = 1
    while weight * escape_probability(horizon, m) > tol:
        m = m + 1 if m < 16 else int(m * 1.25) + 1
    while m > 1 and weight * escape_probability(horizon, m - 1) <= tol:
        m -= 1
    return m


class VField:
    """Evaluator of v_S(s, y) for fixed polymer path(s)."""

    def __init__(self, polymer, beta: float, horizon: float, window: int | None = None,
                 tol: float = V_TOLERANCE):
        paths = [polymer] if isinstance(polymer, WalkPath) else list(polymer)
        lo = min(p.extent()[0] for p in paths)
        hi = max(p.extent()[1] for p in paths)
        m = v_margin(beta, horizon, tol)
        if window is None:
            L_lo, L_hi = lo - m, hi + m
        else:
            L_lo, L_hi = -int(window), int(window)
            if lo - L_lo < m or L_hi - hi < m:
                need = max(abs(lo), abs(hi)) + m
                raise WindowError(f"v-field truncation certificate violated; need window >= {need}")
        self.beta, self.horizon, self.paths = float(beta), float(horizon), paths
        self.solver = VFieldSolver(beta, L_lo, L_hi)
        self.total, self._states, self._final = self.solver.integrate(paths, horizon, record=True)
        self._starts = np.array([s[0] for s in self._states])

    def __call__(self, s: float, y: int) -> float:
        if not 0 <= s <= self.horizon:
            raise DomainError("time outside [0, horizon]")
        idx = int(y) - self.solver.lo
        if idx < 0 or idx >= self.solver.n:
            return 1.0
        j = max(0, int(np.searchsorted(self._starts, s, side="right")) - 1)
        a, b, key, c = self._states[j]
        lam, Q, g, _ = self.solver._eig(key)
        z = lam * (s - a)
        return float(1.0 + Q[idx, :] @ (np.exp(z) * c + (s - a) * _phi1(z) * g))

    def path_integral(self) -> float:
        """sum over paths of int_0^T (v(t, S_t) - 1) dt."""
        return self.total


def v_field(polymer, beta: float, horizon: float, window: int | None = None) -> VField:
    return VField(polymer, beta, horizon, window)


def annealed_linear_mean(beta: float, lam: float, horizon: float) -> float:
    """E_S of the linear control variate: lam beta^2 int_0^T (T - u) P_{2u}(0) du."""
    f = lambda u: (horizon - u) * rw_kernel(2.0 * u, 0)
    val, _ = integrate.quad(f, 0.0, horizon, limit=200, epsabs=1e-13, epsrel=1e-12)
    return lam * beta * beta * val


@dataclass
class AnnealedResult:
    estimate: float
    se: float
    plain_estimate: float
    plain_se: float
    exponents: np.ndarray


def annealed_partition(beta: float, lam: float, horizon: float, S_replicas: int, seed: int,
                       control_variate: bool = True, detail: bool = False, stream_index: int = 0):
    """E[Z] through the annealed identity, MC over polymer paths.

    With ``control_variate`` the linear-response part of the exponent, whose
    mean is known in closed form, is used as a regression control.
    """
    if beta == 0 or lam == 0:
        res = AnnealedResult(1.0, 0.0, 1.0, 0.0, np.zeros(S_replicas))
        return res if detail else (1.0, 0.0)
    gen = rngmod.stream(seed, rngmod.TAGS["annealed"], stream_index)
    batch = sample_paths(S_replicas, 0.0, horizon, 0, gen)
    lo, hi = batch.extent()
    m = v_margin(beta, horizon)
    solver = VFieldSolver(beta, lo - m, hi + m)
    paths = list(batch)
    X = lam * beta * solver.integrate_many(paths, horizon)
    Y = np.empty(S_replicas)
    if control_variate:
        for i, p in enumerate(paths):
            Y[i] = lam * beta * solver.linear_response(p, horizon)
    W = np.exp(X)
    plain, plain_se = rngmod.mean_se(W)
    est, se = plain, plain_se
    if control_variate and S_replicas > 2:
        EY = annealed_linear_mean(beta, lam, horizon)
        Yc = Y - EY
        var = np.var(Y, ddof=1)
        b = np.cov(W, Y)[0, 1] / var if var > 0 else 0.0
        est, se = rngmod.mean_se(W - b * Yc)
    res = AnnealedResult(est, se, plain, plain_se, X)
    return res if detail else (est, se)


def annealed_second_moment(beta: float, lam: float, horizon: float, replicas: int, seed: int,
                           stream_index: int = 0) -> tuple[float, float]:
    """E[Z^2] through the two-replica annealed identity.

    E[Z^2] = E_{S1,S2}[exp(lam beta int (v(t,S1_t) + v(t,S2_t) - 2) dt)] where v
    carries the potential of both paths.
    """
    if beta == 0 or lam == 0:
        return 1.0, 0.0
    gen = rngmod.stream(seed, rngmod.TAGS["annealed"], 1000 + stream_index)
    b1 = sample_paths(replicas, 0.0, horizon, 0, gen)
    b2 = sample_paths(replicas, 0.0, horizon, 0, gen)
    lo = min(b1.extent()[0], b2.extent()[0])
    hi = max(b1.extent()[1], b2.extent()[1])
    m = v_margin(2 * beta, horizon)
    solver = VFieldSolver(beta, lo - m, hi + m, cache_size=4096)
    groups = [(b1.path(i), b2.path(i)) for i in range(replicas)]
    W = np.exp(lam * beta * solver.integrate_many(groups, horizon))
    return rngmod.mean_se(W)


def pascal_gap(polymer: WalkPath, beta: float, lam: float, horizon: float) -> float:
    """lam beta int v_0(t, 0) dt - lam beta int v_S(t, S_t) dt, both on one lattice."""
    if beta == 0:
        return 0.0
    lo, hi = polymer.extent()
    lo, hi = min(lo, 0), max(hi, 0)
    m = v_margin(beta, horizon)
    solver = VFieldSolver(beta, lo - m, hi + m)
    still = WalkPath.constant(0)
    return float(lam * beta * (solver.integrate(still, horizon) - solver.integrate(polymer, horizon)))


# ---------------------------------------------------------------------------
# local time and direct double Monte Carlo


def local_times(batch: PathBatch, horizon: float, site: int = 0) -> np.ndarray:
    """Time each path of ``batch`` spends at ``site`` up to ``horizon``."""
    out = np.zeros(len(batch))
    _local_times(batch.x0, batch.t0, batch.offsets, batch.times, batch.steps, float(horizon), site, out)
    return out


@nb.njit(cache=True)
def _local_times(x0, t0, offsets, times, steps, horizon, site, out):
    for i in range(x0.size):
        x = x0[i]
        a = t0[i]
        acc = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            b = min(times[j], horizon)
            if x == site:
                acc += b - a
            a = b
            x += steps[j]
            if a >= horizon:
                break
        if a < horizon and x == site:
            acc += horizon - a
        out[i] = acc


def local_time_stats(t: float, replicas: int, seed: int, a: float = 1.0) -> dict:
    """MC mean of L_t / sqrt(t) and of exp(a L_t / sqrt(t)); L_t is the time at 0."""
    if t <= 0:
        raise DomainError("t must be positive")
    gen = rngmod.stream(seed, rngmod.TAGS["localtime"], 0)
    batch = sample_paths(replicas, 0.0, t, 0, gen)
    r = local_times(batch, t) / math.sqrt(t)
    mean, se = rngmod.mean_se(r)
    mgf, mgf_se = rngmod.mean_se(np.exp(a * r))
    exact, _ = integrate.quad(lambda s: rw_kernel(s, 0), 0.0, t, limit=200)
    return {"t": t, "mean": mean, "se": se, "mgf": mgf, "mgf_se": mgf_se,
            "exact_mean": exact / math.sqrt(t)}


@nb.njit(cache=True, nogil=True)
def _double_mc_chunk(gen, n, lam, R, horizon, out):
    max_j = 64
    ptimes = np.empty(max_j)
    psites = np.empty(max_j + 1, dtype=np.int64)
    for i in range(n):
        # polymer path
        npj = 0
        s = 0.0
        x = 0
        psites[0] = 0
        while True:
            s += gen.standard_exponential()
            if s >= horizon:
                break
            if npj + 1 >= ptimes.size:
                ptimes = np.concatenate((ptimes, np.empty(ptimes.size)))
                psites = np.concatenate((psites, np.empty(psites.size, dtype=np.int64)))
            x += 1 if gen.random() < 0.5 else -1
            ptimes[npj] = s
            npj += 1
            psites[npj] = x
        overlap = 0.0
        for y in range(-R, R + 1):
            k = gen.poisson(lam)
            for _ in range(k):
                # walk against polymer: merge the two jump sequences
                wx = y
                ws = 0.0
                wnext = gen.standard_exponential()
                pj = 0
                cur = 0.0
                while cur < horizon:
                    pnext = ptimes[pj] if pj < npj else horizon
                    nxt = min(pnext, wnext, horizon)
                    if wx == psites[pj]:
                        overlap += nxt - cur
                    cur = nxt
                    if cur >= horizon:
                        break
                    if wnext <= pnext:
                        wx += 1 if gen.random() < 0.5 else -1
                        wnext = cur + gen.standard_exponential()
                    else:
                        pj += 1
        out[i] = overlap - lam * horizon


DOUBLE_MC_CHUNK = 1024


def double_mc_actions(lam: float, horizon: float, pairs: int, seed: int, delta: float = 1e-8,
                      threads: int | None = None) -> np.ndarray:
    """Action int xi~(s, S_s) ds for independent (environment, polymer) pairs.

    Brute force: every environment walker is simulated jump by jump and its
    overlap time with the polymer is accumulated.
    """
    cfg = PolymerConfig(0.0, horizon)
    L = required_window(cfg)
    B, _ = buffer_halfwidth(lam, horizon, delta)
    bounds = rngmod.chunk_bounds(pairs, DOUBLE_MC_CHUNK)

    def work(i):
        a, b = bounds[i]
        out = np.empty(b - a)
        _double_mc_chunk(rngmod.stream(seed, rngmod.TAGS["double"], i), b - a, float(lam), L + B,
                         float(horizon), out)
        return out

    return np.concatenate(rngmod.map_ordered(work, len(bounds), threads))


def double_mc_partition(beta: float, lam: float, horizon: float, pairs: int, seed: int) -> tuple[float, float]:
    """E_xi E_S[exp(beta H)] by direct simulation of both randomness sources."""
    H = double_mc_actions(lam, horizon, pairs, seed)
    return rngmod.mean_se(np.exp(beta * H))
