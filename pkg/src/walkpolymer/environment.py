"""Poisson field of independent rate-1 walks on Z and exact queries against it.

An environment places Poisson(lambda) walkers on every site of
``[-L - B, L + B]`` and runs each for time ``T``. The buffer ``B`` is the
smallest integer for which the expected number of un-simulated walkers (those
starting beyond the buffer) that reach ``[-L, L]`` before ``T`` is at most
``delta``; that expectation is bounded with the reflection principle and a
Chernoff bound on the displacement (or the jump count, whichever is smaller).

Occupation queries use a per-site event index with cumulative occupation
integrals, so both ``xi(t, x)`` and ``int xi(s, x) ds`` are exact.
"""
from __future__ import annotations

import json
import math
import threading
from dataclasses import dataclass
from functools import lru_cache

import numba as nb
import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DomainError, SnapshotError, WindowError
from .paths import PathBatch, WalkPath, sample_paths
from .testfunctions import Bump, GenericTestFunction

MAX_BUFFER = 10**6


@dataclass(frozen=True)
class EnvironmentConfig:
    lam: float
    window_halfwidth: int
    horizon: float
    leak_tolerance: float = 1e-8

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if int(self.window_halfwidth) != self.window_halfwidth or self.window_halfwidth < 1:
            raise ConfigError("window_halfwidth must be an integer >= 1")
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise ConfigError("horizon must be positive")
        if not 0 < self.leak_tolerance < 1:
            raise ConfigError("leak_tolerance must lie in (0, 1)")


# ---------------------------------------------------------------------------
# buffer certificate


def displacement_tail(horizon: float, d) -> np.ndarray:
    """Bound on P(max_{s <= T} S_s >= d) for a rate-1 walk started at 0.

    Minimum of 2 P(S_T >= d) (reflection, skip-free walk) with the Chernoff
    bound on S_T, and the Chernoff bound on the jump count P(N_T >= d).
    """
    d = np.asarray(d, dtype=float)
    T = float(horizon)
    rate = d * np.arcsinh(d / T) - (np.sqrt(T * T + d * d) - T)
    log_refl = math.log(2.0) - rate
    with np.errstate(divide="ignore"):
        log_jump = np.where(d > T, -T + d * (1.0 + np.log(T / np.maximum(d, 1e-300))), 0.0)
    return np.exp(np.minimum(0.0, np.minimum(log_refl, log_jump)))


@lru_cache(maxsize=256)
def buffer_halfwidth(lam: float, horizon: float, delta: float) -> tuple[int, float]:
    """Smallest buffer B with expected entering outside walkers <= delta.

    Returns ``(B, leak)`` where ``leak`` is the certified bound actually met.
    Walkers start at distance ``d = B + 1, B + 2, ...`` on each side.
    """
    if delta < 1e-300:
        raise ConfigError("leak tolerance too small to certify (underflow)")
    # grow the candidate range until the bound is far below delta
    dmax = 64
    while True:
        d = np.arange(1, dmax + 1, dtype=float)
        q = displacement_tail(horizon, d)
        if q[-1] * 2 * lam * 1e6 < delta * 1e-6 or dmax > 4 * MAX_BUFFER:
            break
        dmax *= 2
    if dmax > 4 * MAX_BUFFER:
        raise ConfigError("buffer computation overflow: tolerance unattainable")
    # tail sums sum_{d > B} q(d); terms beyond dmax decay faster than geometrically
    tail = np.concatenate((np.cumsum(q[::-1])[::-1], [0.0]))
    ratio = q[-1] / q[-2] if q[-2] > 0 else 0.0
    remainder = q[-1] * ratio / (1.0 - ratio) if ratio < 1 else math.inf
    leaks = 2.0 * lam * (tail + remainder)  # leaks[B] = bound for buffer B
    ok = np.nonzero(leaks <= delta)[0]
    if ok.size == 0:
        raise ConfigError("buffer computation overflow: tolerance unattainable")
    B = int(ok[0])
    if B > MAX_BUFFER:
        raise ConfigError("buffer computation overflow: buffer exceeds supported size")
    return B, float(leaks[B])


def escape_probability(horizon: float, distance: int) -> float:
    """Bound on P(a walk moves at least ``distance`` away in either direction)."""
    if distance <= 0:
        return 1.0
    return float(min(1.0, 2.0 * displacement_tail(horizon, distance)))


# ---------------------------------------------------------------------------
# numba kernels on the event index


@nb.njit(cache=True, nogil=True)
def _cum_occupation(site, t, site_min, block_of, bstart, bend, ev_time, occ, cum):
    # returns (occupancy at t, int_0^t occupancy)
    k = site - site_min
    if k < 0 or k >= block_of.size:
        return 0.0, 0.0
    b = block_of[k]
    if b < 0:
        return 0.0, 0.0
    lo = bstart[b]
    hi = bend[b]
    j = lo + np.searchsorted(ev_time[lo:hi], t, side="right") - 1
    if j < lo:
        return 0.0, 0.0
    return occ[j], cum[j] + occ[j] * (t - ev_time[j])


@nb.njit(cache=True, nogil=True)
def _path_integrals(x0, t0, offsets, times, steps, t_end, lam,
                    site_min, block_of, bstart, bend, ev_time, occ, cum, out):
    for i in range(x0.size):
        x = x0[i]
        a = t0[i]
        total = 0.0
        for j in range(offsets[i], offsets[i + 1]):
            b = times[j]
            if b > t_end:
                break
            total += (_cum_occupation(x, b, site_min, block_of, bstart, bend, ev_time, occ, cum)[1]
                      - _cum_occupation(x, a, site_min, block_of, bstart, bend, ev_time, occ, cum)[1])
            a = b
            x += steps[j]
        if t_end > a:
            total += (_cum_occupation(x, t_end, site_min, block_of, bstart, bend, ev_time, occ, cum)[1]
                      - _cum_occupation(x, a, site_min, block_of, bstart, bend, ev_time, occ, cum)[1])
        out[i] = total - lam * (t_end - t0[i])


@nb.njit(cache=True)
def _block_integrals(bstart, bend, ev_time, occ):
    # int_0^{ev_time[j]} occupancy, accumulated separately within each site block
    cum = np.zeros(ev_time.size)
    for b in range(bstart.size):
        acc = 0.0
        for j in range(bstart[b], bend[b]):
            if j > bstart[b]:
                acc += occ[j - 1] * (ev_time[j] - ev_time[j - 1])
            cum[j] = acc
    return cum


class _EventIndex:
    """Per-site sorted event times with occupancy and cumulative integral."""

    def __init__(self, sites, starts, ends, horizon):
        keep_end = ends < horizon
        ev_site = np.concatenate((sites, sites[keep_end]))
        ev_time = np.concatenate((starts, ends[keep_end]))
        ev_delta = np.concatenate((np.ones(sites.size), -np.ones(int(keep_end.sum()))))
        order = np.lexsort((-ev_delta, ev_time, ev_site))
        ev_site, ev_time, ev_delta = ev_site[order], ev_time[order], ev_delta[order]
        if ev_site.size == 0:
            self.site_min = 0
            self.block_of = np.zeros(0, dtype=np.int64)
            self.bstart = self.bend = np.zeros(0, dtype=np.int64)
            self.ev_time = self.occ = self.cum = np.zeros(0)
            return
        usites, first = np.unique(ev_site, return_index=True)
        bstart = first.astype(np.int64)
        bend = np.concatenate((first[1:], [ev_site.size])).astype(np.int64)
        block_id = np.repeat(np.arange(usites.size), bend - bstart)
        gc = np.cumsum(ev_delta)
        base = np.concatenate(([0.0], gc))[bstart]
        occ = gc - base[block_id]
        cum = _block_integrals(bstart, bend, ev_time, occ)
        site_min = int(usites[0])
        block_of = np.full(int(usites[-1]) - site_min + 1, -1, dtype=np.int64)
        block_of[usites - site_min] = np.arange(usites.size)
        self.site_min = site_min
        self.block_of = block_of
        self.bstart, self.bend = bstart, bend
        self.ev_time = np.ascontiguousarray(ev_time)
        self.occ = np.rint(occ)
        self.cum = cum

    def args(self):
        return (self.site_min, self.block_of, self.bstart, self.bend, self.ev_time, self.occ, self.cum)


class Environment:
    """A realised walk field on ``[0, T] x [-L - B, L + B]``; immutable."""

    def __init__(self, config: EnvironmentConfig, walks: PathBatch, buffer_halfwidth: int,
                 leak: float, seed: int | None = None):
        self.config = config
        self.walks = walks
        self.buffer_halfwidth = int(buffer_halfwidth)
        self.leak = float(leak)
        self.seed = seed
        self._index = None
        self._intervals = None
        self._lock = threading.Lock()
        for arr in (walks.x0, walks.offsets, walks.times, walks.steps, walks.t0):
            arr.setflags(write=False)

    # -- basic attributes
    @property
    def lam(self) -> float:
        return self.config.lam

    @property
    def horizon(self) -> float:
        return self.config.horizon

    @property
    def window_halfwidth(self) -> int:
        return self.config.window_halfwidth

    def __len__(self) -> int:
        return len(self.walks)

    def initial_counts(self) -> dict[int, int]:
        sites, counts = np.unique(self.walks.x0, return_counts=True)
        return {int(s): int(c) for s, c in zip(sites, counts)}

    # -- derived structures
    def intervals(self):
        """(site, start, end) of every constancy interval of every walk."""
        if self._intervals is None:
            with self._lock:
                if self._intervals is None:
                    self._intervals = _walk_intervals(self.walks, self.horizon)
        return self._intervals

    @property
    def index(self) -> _EventIndex:
        if self._index is None:
            with self._lock:
                if self._index is None:
                    if self._intervals is None:
                        self._intervals = _walk_intervals(self.walks, self.horizon)
                    self._index = _EventIndex(*self._intervals, self.horizon)
        return self._index

    # -- queries
    def _check_point(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x)
        if np.any(t < 0) or np.any(t > self.horizon):
            raise DomainError("query time outside [0, T]")
        if np.any(np.abs(x) > self.window_halfwidth):
            raise DomainError("query site outside the certified window")

    def occupation(self, t, x):
        """Number of walkers at site ``x`` at time ``t`` (vectorised)."""
        self._check_point(t, x)
        t_arr, x_arr = np.broadcast_arrays(np.asarray(t, dtype=float), np.asarray(x, dtype=np.int64))
        out = np.empty(t_arr.shape, dtype=np.int64)
        args = self.index.args()
        flat_t, flat_x, flat_o = t_arr.ravel(), x_arr.ravel(), out.reshape(-1)
        for i in range(flat_t.size):
            flat_o[i] = int(_cum_occupation(int(flat_x[i]), float(flat_t[i]), *args)[0])
        return out if out.ndim else int(out)

    def centered_occupation(self, t, x):
        return self.occupation(t, x) - self.lam

    def occupation_integral(self, x: int, a: float, b: float) -> float:
        """int_a^b xi(s, x) ds."""
        self._check_point([a, b], x)
        args = self.index.args()
        return float(_cum_occupation(int(x), b, *args)[1] - _cum_occupation(int(x), a, *args)[1])

    def _check_paths(self, batch: PathBatch, t_end: float):
        if len(batch) == 0:
            return
        if np.any(batch.t0 < 0) or t_end > self.horizon or np.any(batch.t0 > t_end):
            raise WindowError("polymer time window outside [0, T]")
        lo, hi = batch.extent()
        if lo < -self.window_halfwidth or hi > self.window_halfwidth:
            raise WindowError("polymer leaves the certified window")

    def path_integrals(self, batch: PathBatch, t_end: float) -> np.ndarray:
        """Exact int_{t0}^{t_end} xi~(s, S_s) ds for every path of ``batch``."""
        self._check_paths(batch, t_end)
        out = np.empty(len(batch))
        _path_integrals(batch.x0, batch.t0, batch.offsets, batch.times, batch.steps,
                        float(t_end), float(self.lam), *self.index.args(), out)
        return out


def _walk_intervals(walks: PathBatch, horizon: float):
    n = len(walks)
    counts = np.diff(walks.offsets)
    owner = np.repeat(np.arange(n), counts)
    cs = np.cumsum(walks.steps, dtype=np.int64)
    start_cs = np.concatenate(([0], cs))[walks.offsets[:-1]]
    pos = walks.x0[owner] + cs - start_cs[owner]
    m = walks.times.size
    nxt = np.empty(m)
    if m:
        nxt[:-1] = walks.times[1:]
        last = walks.offsets[1:] - 1
        last = last[counts > 0]
        nxt[last] = horizon
    first_end = np.full(n, float(horizon))
    has = counts > 0
    first_end[has] = walks.times[walks.offsets[:-1][has]]
    sites = np.concatenate((walks.x0, pos)).astype(np.int64)
    starts = np.concatenate((np.zeros(n), walks.times))
    ends = np.concatenate((np.asarray(first_end, dtype=float), nxt))
    return sites, starts, ends


def sample_environment(config: EnvironmentConfig, seed: int, replica: int = 0) -> Environment:
    """Sample the walk field; deterministic in ``(seed, replica)``."""
    B, leak = buffer_halfwidth(config.lam, config.horizon, config.leak_tolerance)
    R = config.window_halfwidth + B
    gen = rngmod.stream(seed, rngmod.TAGS["env"], replica)
    counts = gen.poisson(config.lam, size=2 * R + 1)
    x0 = np.repeat(np.arange(-R, R + 1), counts)
    walks = sample_paths(x0.size, 0.0, config.horizon, x0, gen)
    return Environment(config, walks, B, leak, seed)


def empty_environment(config: EnvironmentConfig) -> Environment:
    B, leak = buffer_halfwidth(config.lam, config.horizon, config.leak_tolerance)
    return Environment(config, PathBatch.from_paths([]), B, leak, None)


def environment_from_paths(config: EnvironmentConfig, paths, buffer_halfwidth: int | None = None) -> Environment:
    """Environment from explicit walk paths (tests, snapshots)."""
    if buffer_halfwidth is None:
        buffer_halfwidth, leak = buffer_halfwidth_for(config)
    else:
        leak = float("nan")
    return Environment(config, PathBatch.from_paths(paths), buffer_halfwidth, leak, None)


def buffer_halfwidth_for(config: EnvironmentConfig) -> tuple[int, float]:
    return buffer_halfwidth(config.lam, config.horizon, config.leak_tolerance)


# ---------------------------------------------------------------------------
# pairing with test functions


def _check_support(env: Environment, support, eps: float):
    t_lo, t_hi, x_lo, x_hi = support
    if t_lo < 0 or t_hi > eps**2 * env.horizon * (1 + 1e-12):
        raise WindowError("test function time support outside the simulated horizon")
    if max(abs(x_lo), abs(x_hi)) > eps * env.window_halfwidth * (1 + 1e-12):
        raise WindowError("test function space support outside the certified window")


def field_pairing(env: Environment, phi, eps: float) -> float:
    """eps^{5/2} sum_x int phi(eps^2 t, eps x) xi~(t, x) dt for the given environment."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    if getattr(phi, "is_zero", False):
        return 0.0
    _check_support(env, phi.support, eps)
    sites, starts, ends = env.intervals()
    t_lo, t_hi, x_lo, x_hi = phi.support
    y_lo, y_hi = math.ceil(x_lo / eps - 1e-9), math.floor(x_hi / eps + 1e-9)
    grid = np.arange(y_lo, y_hi + 1)
    sel = (sites >= y_lo) & (sites <= y_hi) & (ends > t_lo / eps**2) & (starts < t_hi / eps**2)
    s, a, b = sites[sel], starts[sel], ends[sel]
    if isinstance(phi, Bump):
        w = phi.space_factor(eps * s) * phi.time_integral(eps**2 * a, eps**2 * b)
        mean = env.lam * np.sum(phi.space_factor(eps * grid)) * phi.time_integral(t_lo, t_hi)
        total = np.sum(w) - mean
        return float(phi.amplitude * eps**0.5 * total)
    # generic phi: Gauss-Legendre on every constancy interval, split into short panels
    nodes, weights = np.polynomial.legendre.leggauss(10)
    panel = (t_hi - t_lo) / 32.0

    def integral(y, ta, tb):
        # ta, tb macroscopic; returns int_ta^tb phi(s, eps*y) ds
        ta, tb = max(ta, t_lo), min(tb, t_hi)
        if tb <= ta:
            return 0.0
        k = max(1, int(math.ceil((tb - ta) / panel)))
        edges = np.linspace(ta, tb, k + 1)
        lo, hi = edges[:-1, None], edges[1:, None]
        ss = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        return float(np.sum(0.5 * (hi - lo) * weights * phi(ss, eps * y)))

    total = sum(integral(int(y), eps**2 * aa, eps**2 * bb) for y, aa, bb in zip(s, a, b))
    mean = env.lam * sum(integral(int(y), t_lo, t_hi) for y in grid)
    return float(eps**0.5 * (total - mean))


@nb.njit(cache=True)
def _bump_cdf_scalar(u):
    if u <= -1.0:
        return 0.0
    if u >= 1.0:
        return 16.0 / 15.0
    return u - 2.0 * u**3 / 3.0 + u**5 / 5.0 + 8.0 / 15.0


@nb.njit(cache=True)
def _time_profiles(sites, centers, t_half, eps2, site_min, block_of, bstart, bend, ev_time, occ, out):
    # out[i, c] = int xi(s, sites[i]) * b((eps2 s - centers[c]) / t_half) eps2 ds (macroscopic time)
    for i in range(sites.size):
        k = sites[i] - site_min
        if k < 0 or k >= block_of.size or block_of[k] < 0:
            for c in range(centers.size):
                out[i, c] = 0.0
            continue
        b = block_of[k]
        lo, hi = bstart[b], bend[b]
        for c in range(centers.size):
            w_lo = (centers[c] - t_half) / eps2
            w_hi = (centers[c] + t_half) / eps2
            j = lo + np.searchsorted(ev_time[lo:hi], w_lo, side="right") - 1
            total = 0.0
            a = w_lo
            if j < lo:
                j = lo
                a = ev_time[lo]
            while j < hi and a < w_hi:
                e = ev_time[j + 1] if j + 1 < hi else w_hi
                if e > w_hi:
                    e = w_hi
                if e > a and occ[j] != 0.0:
                    total += occ[j] * (_bump_cdf_scalar((eps2 * e - centers[c]) / t_half)
                                       - _bump_cdf_scalar((eps2 * a - centers[c]) / t_half))
                a = e
                j += 1
            out[i, c] = t_half * total


def bump_pairing_grid(env: Environment, phi: Bump, eps: float, t_shifts, x_shifts) -> np.ndarray:
    """``field_pairing`` of every shifted copy ``phi.shifted(dt, dx)`` at once.

    Returns an array of shape (len(t_shifts), len(x_shifts)).
    """
    t_shifts = np.asarray(t_shifts, dtype=float)
    x_shifts = np.asarray(x_shifts, dtype=float)
    t_lo, t_hi, x_lo, x_hi = phi.support
    if t_shifts.size == 0 or x_shifts.size == 0:
        return np.zeros((t_shifts.size, x_shifts.size))
    _check_support(env, (t_lo + t_shifts.min(), t_hi + t_shifts.max(), x_lo + x_shifts.min(),
                         x_hi + x_shifts.max()), eps)
    y_lo = math.ceil((x_lo + x_shifts.min()) / eps - 1e-9)
    y_hi = math.floor((x_hi + x_shifts.max()) / eps + 1e-9)
    sites = np.arange(y_lo, y_hi + 1, dtype=np.int64)
    centers = phi.t_center + t_shifts
    prof = np.empty((sites.size, centers.size))
    idx = env.index
    _time_profiles(sites, centers, phi.t_half, eps**2, idx.site_min, idx.block_of, idx.bstart, idx.bend,
                   idx.ev_time, idx.occ, prof)
    space = phi.space_factor(eps * sites[None, :] - x_shifts[:, None])  # (n_x, n_sites)
    raw = (space @ prof).T
    mass_t = phi.time_integral(t_lo, t_hi)
    mean = env.lam * mass_t * space.sum(axis=1)
    return phi.amplitude * eps**0.5 * (raw - mean[None, :])


# ---------------------------------------------------------------------------
# ensemble samplers that never build full environments

_G1 = 16.0 / 15.0


@nb.njit(cache=True, nogil=True)
def _bump_cdf(u):
    if u <= -1.0:
        return 0.0
    if u >= 1.0:
        return _G1
    return u - 2.0 * u**3 / 3.0 + u**5 / 5.0 + 8.0 / 15.0


@nb.njit(cache=True, nogil=True)
def _pairing_chunk(gen, n_env, lam, site_lo, site_hi, horizon, ys_lo, ys_hi,
                   eps, tc, th, xc, xh, leap, out):
    e2 = eps * eps
    for e in range(n_env):
        tot = 0.0
        for y in range(site_lo, site_hi + 1):
            k = gen.poisson(lam)
            for _ in range(k):
                s = 0.0
                x = y
                while True:
                    if x < ys_lo or x > ys_hi:
                        D = ys_lo - x if x < ys_lo else x - ys_hi
                        if leap and D >= 2:
                            # the walk needs at least D jumps to reach the support:
                            # jump D lands after a Gamma(D) time at a binomial position
                            tau = gen.standard_gamma(float(D))
                            if s + tau >= horizon:
                                break
                            s += tau
                            x += 2 * gen.binomial(D, 0.5) - D
                            continue
                        h = gen.standard_exponential()
                        if s + h >= horizon:
                            break
                        s += h
                        x += 1 if gen.random() < 0.5 else -1
                    else:
                        h = gen.standard_exponential()
                        s1 = s + h
                        if s1 > horizon:
                            s1 = horizon
                        u = (eps * x - xc) / xh
                        if -1.0 < u < 1.0:
                            bx = (1.0 - u * u) ** 2
                            tot += bx * th * (_bump_cdf((e2 * s1 - tc) / th) - _bump_cdf((e2 * s - tc) / th))
                        if s + h >= horizon:
                            break
                        s = s1
                        x += 1 if gen.random() < 0.5 else -1
        out[e] = tot


@dataclass(frozen=True)
class PairingGeometry:
    horizon: float
    window_halfwidth: int
    buffer_halfwidth: int
    leak: float
    ys_lo: int
    ys_hi: int


def pairing_geometry(phi: Bump, eps: float, lam: float, delta: float = 1e-8) -> PairingGeometry:
    t_lo, t_hi, x_lo, x_hi = phi.support
    if t_lo < 0:
        raise WindowError("test function must be supported in t >= 0")
    horizon = t_hi / eps**2
    L = max(1, int(math.ceil(max(abs(x_lo), abs(x_hi)) / eps)))
    B, leak = buffer_halfwidth(lam, horizon, delta)
    ys_lo = int(math.ceil(x_lo / eps - 1e-9))
    ys_hi = int(math.floor(x_hi / eps + 1e-9))
    return PairingGeometry(horizon, L, B, leak, ys_lo, ys_hi)


PAIRING_CHUNK = 32


def pairing_samples(phi: Bump, eps: float, lam: float, n: int, seed: int,
                    delta: float = 1e-8, leap: bool = True, threads: int | None = None,
                    stream_offset: int = 0) -> np.ndarray:
    """``n`` independent draws of the pairing, each from a fresh environment.

    Walkers that are at distance ``D >= 2`` from the spatial support are
    advanced by the exact law of their ``D``-th jump (Gamma time, binomial
    position), which they need before they can touch the support.
    """
    if getattr(phi, "is_zero", False) or phi.amplitude == 0:
        return np.zeros(n)
    geo = pairing_geometry(phi, eps, lam, delta)
    R = geo.window_halfwidth + geo.buffer_halfwidth
    chunks = rngmod.chunk_bounds(n, PAIRING_CHUNK)

    def work(i):
        a, b = chunks[i]
        gen = rngmod.stream(seed, rngmod.TAGS["pairing"], stream_offset, i)
        out = np.empty(b - a)
        _pairing_chunk(gen, b - a, float(lam), -R, R, float(geo.horizon), geo.ys_lo, geo.ys_hi,
                       float(eps), phi.t_center, phi.t_half, phi.x_center, phi.x_half, leap, out)
        return out

    raw = np.concatenate(rngmod.map_ordered(work, len(chunks), threads)) if chunks else np.zeros(0)
    grid = np.arange(geo.ys_lo, geo.ys_hi + 1)
    t_lo, t_hi = phi.support[:2]
    mean = lam * np.sum(phi.space_factor(eps * grid)) * phi.time_integral(t_lo, t_hi)
    return phi.amplitude * eps**0.5 * (raw - mean)


def constant_field_pairing(phi, eps: float, value: float = 1.0) -> float:
    """Pairing of the lattice field identically equal to ``value`` with phi."""
    t_lo, t_hi, x_lo, x_hi = phi.support
    grid = np.arange(math.ceil(x_lo / eps - 1e-9), math.floor(x_hi / eps + 1e-9) + 1)
    if isinstance(phi, Bump):
        s = np.sum(phi.space_factor(eps * grid)) * phi.time_integral(t_lo, t_hi) * phi.amplitude
    else:
        nodes, weights = np.polynomial.legendre.leggauss(40)
        ts = 0.5 * (t_hi - t_lo) * nodes + 0.5 * (t_hi + t_lo)
        s = sum(0.5 * (t_hi - t_lo) * np.sum(weights * phi(ts, eps * y)) for y in grid)
    return float(value * eps**0.5 * s)


def occupation_samples(lam: float, points, replicas: int, seed: int, delta: float = 1e-8,
                       chunk: int = 4096, threads: int | None = None, tag: str = "corr") -> np.ndarray:
    """Occupations xi(t_i, x_i) in ``replicas`` independent environments.

    Only the walk skeleton at the query times is sampled: between consecutive
    times the displacement of a walker is a difference of two independent
    Poisson(dt/2) variables, which is its exact law.
    Returns an integer array of shape ``(replicas, m)``.
    """
    pts = [(float(t), int(x)) for t, x in points]
    if not pts:
        raise DomainError("need at least one point")
    if any(t < 0 for t, _ in pts):
        raise DomainError("times must be nonnegative")
    times = sorted({t for t, _ in pts})
    xs = [x for _, x in pts]
    B, _ = buffer_halfwidth(lam, max(max(times), 1e-12), delta)
    lo, hi = min(xs) - B, max(xs) + B
    sites = np.arange(lo, hi + 1)
    bounds = rngmod.chunk_bounds(replicas, chunk)

    def work(ci):
        a, b = bounds[ci]
        R = b - a
        gen = rngmod.stream(seed, rngmod.TAGS[tag], ci)
        counts = gen.poisson(lam, size=(R, sites.size))
        rep = np.repeat(np.arange(R), counts.sum(axis=1))
        pos = np.repeat(np.tile(sites, R), counts.ravel())
        out = np.zeros((R, len(pts)), dtype=np.int64)
        now = 0.0
        for t in times:
            dt = t - now
            if dt > 0:
                pos = pos + gen.poisson(dt / 2.0, pos.size) - gen.poisson(dt / 2.0, pos.size)
            now = t
            for j, (tj, xj) in enumerate(pts):
                if tj == t:
                    out[:, j] = np.bincount(rep[pos == xj], minlength=R)
        return out

    return np.concatenate(rngmod.map_ordered(work, len(bounds), threads), axis=0)


# ---------------------------------------------------------------------------
# snapshots


def environment_to_dict(env: Environment) -> dict:
    walks = []
    for p in env.walks:
        walks.append({"x0": p.x0, "jumps": [[float(t), int(s)] for t, s in zip(p.times, p.steps)]})
    return {
        "lambda": env.lam,
        "window_halfwidth": env.window_halfwidth,
        "buffer_halfwidth": env.buffer_halfwidth,
        "horizon": env.horizon,
        "leak_tolerance": env.config.leak_tolerance,
        "seed": env.seed,
        "walks": walks,
    }


def save_snapshot(env: Environment, path) -> None:
    """Write the environment as JSON; floats use shortest round-trip repr."""
    with open(path, "w") as fh:
        json.dump(environment_to_dict(env), fh)


def _field(obj, key, kind, where):
    if key not in obj:
        raise SnapshotError(f"{where}: missing field '{key}'")
    val = obj[key]
    if kind is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise SnapshotError(f"{where}.{key}: expected integer, got {type(val).__name__}")
    if kind is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise SnapshotError(f"{where}.{key}: expected number, got {type(val).__name__}")
    return val


def environment_from_dict(data: dict) -> Environment:
    if not isinstance(data, dict):
        raise SnapshotError("snapshot root must be an object")
    allowed = {"lambda", "window_halfwidth", "buffer_halfwidth", "horizon", "leak_tolerance", "seed", "walks"}
    extra = set(data) - allowed
    if extra:
        raise SnapshotError(f"unknown snapshot field(s): {sorted(extra)}")
    try:
        cfg = EnvironmentConfig(
            float(_field(data, "lambda", float, "$")),
            int(_field(data, "window_halfwidth", int, "$")),
            float(_field(data, "horizon", float, "$")),
            float(data.get("leak_tolerance", 1e-8)),
        )
    except ConfigError as exc:
        raise SnapshotError(f"$: {exc}") from None
    B = int(_field(data, "buffer_halfwidth", int, "$"))
    walks_raw = _field(data, "walks", list, "$")
    if not isinstance(walks_raw, list):
        raise SnapshotError("$.walks: expected array")
    R = cfg.window_halfwidth + B
    paths = []
    for i, w in enumerate(walks_raw):
        where = f"$.walks[{i}]"
        if not isinstance(w, dict):
            raise SnapshotError(f"{where}: expected object")
        x0 = _field(w, "x0", int, where)
        if abs(x0) > R:
            raise SnapshotError(f"{where}.x0: start site outside the buffered window")
        jumps = w.get("jumps")
        if not isinstance(jumps, list):
            raise SnapshotError(f"{where}.jumps: expected array")
        try:
            arr = np.array(jumps, dtype=float).reshape(-1, 2) if jumps else np.zeros((0, 2))
        except (ValueError, TypeError):
            raise SnapshotError(f"{where}.jumps: expected [[time, step], ...]") from None
        if arr.size and (arr[:, 0].max() > cfg.horizon or arr[:, 0].min() <= 0):
            raise SnapshotError(f"{where}.jumps: jump time outside (0, horizon]")
        try:
            paths.append(WalkPath(x0, arr[:, 0], arr[:, 1].astype(np.int8)))
        except DomainError as exc:
            raise SnapshotError(f"{where}.jumps: {exc}") from None
        if arr.size and np.any(arr[:, 1] != arr[:, 1].astype(np.int8)):
            raise SnapshotError(f"{where}.jumps: steps must be +1 or -1")
    seed = data.get("seed")
    B_expected, leak = buffer_halfwidth_for(cfg)
    return Environment(cfg, PathBatch.from_paths(paths), B, leak if B >= B_expected else float("nan"), seed)


def load_snapshot(path) -> Environment:
    with open(path) as fh:
        text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SnapshotError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return environment_from_dict(data)
