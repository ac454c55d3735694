"""Continuum objects: the heat-kernel-covariance Gaussian field on a grid,
the Picard series of the SPDE ``du = 1/2 u'' dt + beta sqrt(lam) u Xi`` and
Feynman-Kac moments over Brownian paths.

The field is represented by its cell averages. All kernel weights that touch
the integrable ``|t - s|^{-1/2}`` singularity are exact cell integrals (error
functions in space, square-root substitution in time).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from functools import lru_cache

import numpy as np
from scipy import integrate, linalg, signal, special

from . import rng as rngmod
from .errors import CapabilityError, DomainError, NumericalError
from .lattice_kernels import cont_kernel

MAX_CELLS = 40_000
MAX_SERIES_ORDER = 6
JITTER_LADDER = (0.0, 1e-12, 1e-10, 1e-8)
DOUBLE_INTEGRAL_BOUND = 8.0 / (3.0 * math.sqrt(2.0 * math.pi))  # sup_B V(B) at t = 1
DOUBLE_INTEGRAL_MEAN = 4.0 / (3.0 * math.sqrt(math.pi))  # E V(B) at t = 1
CROSS_INTEGRAL_MEAN = 2.0 / (3.0 * math.sqrt(math.pi))  # E V(B1, B2) at t = 1

_SQ2PI = math.sqrt(2.0 * math.pi)


def _gl(n: int, a: float = 0.0, b: float = 1.0):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _heat(var, z):
    var = np.asarray(var, dtype=float)
    return np.exp(-0.5 * np.square(z) / var) / np.sqrt(2.0 * np.pi * var)


# ---------------------------------------------------------------- grid & field

@dataclass(frozen=True)
class GridSpec:
    """Uniform space-time cells on ``[0, t_max] x [x_min, x_max]``."""

    t_max: float = 1.0
    nt: int = 64
    x_min: float = -4.0
    x_max: float = 4.0
    nx: int = 128

    def __post_init__(self):
        if self.nt < 2 or self.nx < 2:
            raise DomainError("need at least 2 cells per axis")
        if not (self.t_max > 0 and self.x_max > self.x_min):
            raise DomainError("empty grid domain")

    @property
    def dt(self) -> float:
        return self.t_max / self.nt

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / self.nx

    @property
    def size(self) -> int:
        return self.nt * self.nx

    @property
    def times(self) -> np.ndarray:
        """Time nodes ``0, dt, ..., t_max`` (cell edges)."""
        return np.linspace(0.0, self.t_max, self.nt + 1)

    @property
    def centers(self) -> np.ndarray:
        return self.x_min + self.dx * (np.arange(self.nx) + 0.5)

    def refined(self) -> "GridSpec":
        return GridSpec(self.t_max, 2 * self.nt, self.x_min, self.x_max, 2 * self.nx)

    def cell(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.size:
            raise DomainError(f"cell {index} outside the grid")
        return divmod(int(index), self.nx)


def _space_overlap(tau, d, h):
    """int over two width-h intervals at offset d of p_tau(x - y): second difference of
    G(z) = z Phi(z / sqrt tau) + sqrt(tau) phi(z / sqrt tau)."""
    tau = np.asarray(tau, dtype=float)
    s = np.sqrt(tau)

    def G(z):
        with np.errstate(divide="ignore", invalid="ignore"):
            u = np.where(s > 0, z / np.where(s > 0, s, 1.0), np.sign(z) * np.inf)
        return z * special.ndtr(u) + s * np.exp(-0.5 * np.square(np.where(np.isfinite(u), u, 0.0))) / _SQ2PI * np.isfinite(u)

    return G(d + h) - 2.0 * G(d) + G(d - h)


_COV_NODES = 48


def _time_pieces(di: int, dt: float):
    """(a, b, rising) pieces of the triangular overlap density of |t - s|."""
    D = di * dt
    if di == 0:
        return [(0.0, dt, None)]
    return [(D - dt, D, True), (D, D + dt, False)]


def _cell_cov_raw(di: int, dj, dt: float, dx: float) -> np.ndarray:
    """int_{cell} int_{cell'} p_{|t-s|}(x - y) for time offset di, space offsets dj (no normalisation)."""
    dj = np.atleast_1d(np.asarray(dj, dtype=float))
    d = dj * dx
    q, wq = _gl(_COV_NODES)
    total = np.zeros(d.size)
    D = di * dt
    for a, b, rising in _time_pieces(di, dt):
        if a == 0.0:
            tau = b * q * q  # tau = b u^2 absorbs the sqrt(tau) kink at 0
            jac = 2.0 * b * q * wq
        else:
            tau = a + (b - a) * q
            jac = (b - a) * wq
        if rising is None:
            weight = 2.0 * (dt - tau)
        elif rising:
            weight = tau - D + dt
        else:
            weight = D + dt - tau
        S = _space_overlap(tau[:, None], d[None, :], dx)
        total += np.sum((jac * weight)[:, None] * S, axis=0)
    return total


@lru_cache(maxsize=8)
def covariance_table(spec: GridSpec) -> np.ndarray:
    """Cell-average covariance indexed by (|time offset|, |space offset|)."""
    out = np.empty((spec.nt, spec.nx))
    dj = np.arange(spec.nx)
    for di in range(spec.nt):
        out[di] = _cell_cov_raw(di, dj, spec.dt, spec.dx)
    out /= (spec.dt * spec.dx) ** 2
    out.setflags(write=False)
    return out


def cell_covariance(spec: GridSpec, cell_a, cell_b) -> float:
    """Covariance of the field averages over two cells (flat indices or (i, j) pairs)."""
    ia, ja = spec.cell(cell_a) if np.ndim(cell_a) == 0 else tuple(cell_a)
    ib, jb = spec.cell(cell_b) if np.ndim(cell_b) == 0 else tuple(cell_b)
    for i, j in ((ia, ja), (ib, jb)):
        if not (0 <= i < spec.nt and 0 <= j < spec.nx):
            raise DomainError(f"cell ({i}, {j}) outside the grid")
    return float(_cell_cov_raw(abs(ia - ib), [abs(ja - jb)], spec.dt, spec.dx)[0] / (spec.dt * spec.dx) ** 2)


def cell_covariance_reference(spec: GridSpec, di: int, dj: int, tol: float = 1e-12) -> float:
    """Adaptive-quadrature version of ``cell_covariance`` (inner space integral as a
    single Phi-difference integrated by ``quad``)."""
    dt, h = spec.dt, spec.dx
    d = abs(dj) * h
    D = abs(di) * dt

    def space(tau):
        if tau <= 0:
            return h if dj == 0 else 0.0
        s = math.sqrt(tau)
        f = lambda x: special.ndtr((x - d) / s) - special.ndtr((x - d - h) / s)
        return integrate.quad(f, 0.0, h, epsabs=tol * h, epsrel=tol, limit=200)[0]

    def dens(tau):
        return max(dt - abs(tau - D), 0.0) if di else 2.0 * (dt - tau)

    total = 0.0
    lo = max(D - dt, 0.0)
    for a, b in ((lo, D), (D, D + dt)) if di else ((0.0, dt),):
        if b <= a:
            continue
        if a == 0.0:
            g = lambda u, b=b: 2.0 * u * dens(u * u) * space(u * u)
            val = integrate.quad(g, 0.0, math.sqrt(b), epsabs=tol, epsrel=tol, limit=200)[0]
        else:
            val = integrate.quad(lambda tau: dens(tau) * space(tau), a, b, epsabs=tol, epsrel=tol, limit=200)[0]
        total += val
    return total / (dt * h) ** 2


def covariance_matrix(spec: GridSpec) -> np.ndarray:
    if spec.size > MAX_CELLS:
        raise CapabilityError(f"{spec.size} cells exceed the dense limit {MAX_CELLS}")
    tab = covariance_table(spec)
    nt, nx = spec.nt, spec.nx
    blocks = [linalg.toeplitz(tab[d]) for d in range(nt)]
    C = np.empty((spec.size, spec.size))
    for a in range(nt):
        for b in range(nt):
            C[a * nx:(a + 1) * nx, b * nx:(b + 1) * nx] = blocks[abs(a - b)]
    return C


_FACTORS: dict = {}


def covariance_factor(spec: GridSpec) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of the cell covariance and the jitter used (cached)."""
    hit = _FACTORS.get(spec)
    if hit is not None:
        return hit
    _FACTORS.clear()  # one factor at a time keeps memory bounded
    scale = float(covariance_table(spec)[0, 0])
    for level in JITTER_LADDER:
        A = covariance_matrix(spec)
        if level:
            A[np.diag_indices_from(A)] += level * scale
        try:
            L = linalg.cholesky(A, lower=True, overwrite_a=True, check_finite=False)
            break
        except linalg.LinAlgError:
            del A
    else:
        C = covariance_matrix(spec)
        ev = linalg.eigvalsh(C, subset_by_index=[0, min(4, C.shape[0] - 1)]) if C.shape[0] <= 4096 else []
        raise NumericalError(f"covariance not factorisable after jitter {JITTER_LADDER[-1]:g}; "
                             f"smallest eigenvalues {list(np.round(ev, 16))}, trace/dim {scale:.3g}")
    L.setflags(write=False)
    _FACTORS[spec] = (L, level)
    return L, level


@dataclass(frozen=True, eq=False)
class FieldGrid:
    """Cell averages of the field. ``xi`` has shape (nt, nx) or (n, nt, nx)."""

    spec: GridSpec
    xi: np.ndarray
    cov_factor: np.ndarray = dc_field(repr=False)
    seed: int | None = None
    jitter: float = 0.0

    @property
    def batched(self) -> bool:
        return self.xi.ndim == 3

    def __len__(self) -> int:
        return self.xi.shape[0] if self.batched else 1

    def member(self, i: int) -> "FieldGrid":
        if not self.batched:
            raise DomainError("not a batch")
        return FieldGrid(self.spec, self.xi[i], self.cov_factor, self.seed, self.jitter)

    def with_values(self, xi) -> "FieldGrid":
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-2:] != (self.spec.nt, self.spec.nx):
            raise DomainError("field shape does not match the grid")
        return FieldGrid(self.spec, xi, self.cov_factor, self.seed, self.jitter)


FIELD_CHUNK = 256


def sample_fields(spec: GridSpec, n: int, seed: int, threads: int | None = None) -> FieldGrid:
    """``n`` independent field samples; chunk ``c`` draws from stream (seed, field, c)."""
    L, jitter = covariance_factor(spec)
    bounds = rngmod.chunk_bounds(n, FIELD_CHUNK)

    def work(c):
        a, b = bounds[c]
        z = rngmod.stream(seed, rngmod.TAGS["field"], c).standard_normal((b - a, spec.size))
        return z @ L.T

    xi = np.concatenate(rngmod.map_ordered(work, len(bounds), threads)) if bounds else np.zeros((0, spec.size))
    return FieldGrid(spec, xi.reshape(n, spec.nt, spec.nx), L, seed, jitter)


def sample_field(spec: GridSpec, seed: int) -> FieldGrid:
    """One field sample; the first member of ``sample_fields(spec, n, seed)`` up to BLAS rounding."""
    batch = sample_fields(spec, 1, seed, threads=1)
    return batch.member(0)


# ---------------------------------------------------------------- Picard series

def _cell_mass(tau, d, h):
    """int over a width-h cell centred at offset d of p_tau."""
    s = np.sqrt(tau)
    return special.ndtr((d + 0.5 * h) / s) - special.ndtr((d - 0.5 * h) / s)


_SERIES_NODES = 32


def kernel_weights(dt: float, dx: float, lags, offsets) -> tuple[np.ndarray, np.ndarray]:
    """Exact cell integrals of the heat kernel for the linear-in-time scheme.

    For time lag k >= 1 and space offset d (evaluation point minus cell centre):
    ``W0 = int_{(k-1)dt}^{k dt} m(tau) dtau`` and ``W1 = int m(tau) (k dt - tau)/dt dtau``
    with ``m(tau)`` the heat-kernel mass of the cell.
    """
    lags = np.atleast_1d(np.asarray(lags, dtype=int))
    d = np.atleast_1d(np.asarray(offsets, dtype=float))
    q, wq = _gl(_SERIES_NODES)
    W0 = np.empty((lags.size, d.size))
    W1 = np.empty((lags.size, d.size))
    for r, k in enumerate(lags):
        if k < 1:
            raise DomainError("lags start at 1")
        if k == 1:
            tau = dt * q * q
            jac = 2.0 * dt * q * wq
        else:
            tau = dt * (k - 1 + q)
            jac = dt * wq
        M = _cell_mass(tau[:, None], d[None, :], dx)
        W0[r] = jac @ M
        W1[r] = (jac * (k * dt - tau) / dt) @ M
    return W0, W1


@lru_cache(maxsize=8)
def _grid_weights(spec: GridSpec):
    offs = spec.dx * np.arange(-(spec.nx - 1), spec.nx)
    W0, W1 = kernel_weights(spec.dt, spec.dx, np.arange(1, spec.nt + 1), offs)
    # prepend lag 0 (zero) so that index = lag
    z = np.zeros((1, offs.size))
    return np.vstack([z, W0]), np.vstack([z, W1])


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values at time nodes (nt + 1) and cell centres (nx); optional leading batch axis."""

    spec: GridSpec
    values: np.ndarray

    def node(self, t: float) -> int:
        k = t / self.spec.dt
        if abs(k - round(k)) > 1e-9 or not 0 <= round(k) <= self.spec.nt:
            raise DomainError(f"t = {t} is not a time node")
        return int(round(k))

    def at(self, t: float, x: float):
        """Value at a time node and a cell centre."""
        j = (x - self.spec.x_min) / self.spec.dx - 0.5
        if abs(j - round(j)) > 1e-9 or not 0 <= round(j) < self.spec.nx:
            raise DomainError(f"x = {x} is not a cell centre")
        return self.values[..., self.node(t), int(round(j))]


def _causal_convolve(spec: GridSpec, xi: np.ndarray, u: np.ndarray) -> np.ndarray:
    """sum over cells (i < k) of kernel weights times xi * (linear-in-time u)."""
    W0, W1 = _grid_weights(spec)
    g0 = xi * u[..., :-1, :]
    g1 = xi * (u[..., 1:, :] - u[..., :-1, :])
    # pad so that output time index k collects input times i with lag k - i
    axes = (-2, -1)
    c0 = signal.fftconvolve(g0, np.broadcast_to(W0, g0.shape[:-2] + W0.shape), axes=axes) if g0.ndim == 3 else \
        signal.fftconvolve(g0, W0, axes=axes)
    c1 = signal.fftconvolve(g1, np.broadcast_to(W1, g1.shape[:-2] + W1.shape), axes=axes) if g1.ndim == 3 else \
        signal.fftconvolve(g1, W1, axes=axes)
    nx = spec.nx
    out = (c0 + c1)[..., : spec.nt + 1, nx - 1: 2 * nx - 1]
    return out


def _check_order(m: int):
    if m < 0:
        raise DomainError("order must be nonnegative")
    if m > MAX_SERIES_ORDER:
        raise CapabilityError(f"series order {m} exceeds {MAX_SERIES_ORDER}")


SERIES_CHUNK = 64


def _terms(field: FieldGrid, m_max: int, beta: float, lam: float) -> list[np.ndarray]:
    _check_order(m_max)
    spec = field.spec
    shape = field.xi.shape[:-2] + (spec.nt + 1, spec.nx)
    terms = [np.ones(shape)] + [np.zeros(shape) for _ in range(m_max)]
    coef = beta * math.sqrt(lam)
    if coef == 0.0 or m_max == 0:
        return terms
    if not field.batched:
        for m in range(1, m_max + 1):
            terms[m] = coef * _causal_convolve(spec, field.xi, terms[m - 1])
        return terms
    # chunks bound the FFT work arrays
    for a in range(0, shape[0], SERIES_CHUNK):
        sl = slice(a, a + SERIES_CHUNK)
        for m in range(1, m_max + 1):
            terms[m][sl] = coef * _causal_convolve(spec, field.xi[sl], terms[m - 1][sl])
    return terms


def series_term(field: FieldGrid, m: int, beta: float, lam: float) -> GridFunction:
    """m-th Picard term ``u_m = beta sqrt(lam) int p * (Xi u_{m-1})``, ``u_0 = 1``."""
    return GridFunction(field.spec, _terms(field, m, beta, lam)[m])


@dataclass(frozen=True, eq=False)
class SeriesSolution:
    spec: GridSpec
    terms: list  # arrays, order 0..m_max
    field: FieldGrid
    beta: float
    lam: float

    @property
    def partial_sums(self) -> list[np.ndarray]:
        return list(np.cumsum(np.stack(self.terms), axis=0))

    @property
    def values(self) -> np.ndarray:
        return np.sum(self.terms, axis=0)

    def grid_function(self) -> GridFunction:
        return GridFunction(self.spec, self.values)

    def term_norms(self) -> np.ndarray:
        """Mean absolute value of each term over the grid (and batch)."""
        return np.array([float(np.mean(np.abs(t))) for t in self.terms])

    def term_at(self, m: int, t: float, x: float):
        """m-th term at a time node and arbitrary x, with exact weights at x."""
        spec = self.spec
        k = GridFunction(spec, self.terms[0]).node(t)
        if m == 0:
            return np.ones(self.field.xi.shape[:-2]) if self.field.batched else 1.0
        if k == 0:
            return np.zeros(self.field.xi.shape[:-2]) if self.field.batched else 0.0
        lags = k - np.arange(k)
        W0, W1 = kernel_weights(spec.dt, spec.dx, lags, x - spec.centers)
        prev = self.terms[m - 1]
        xi = self.field.xi[..., :k, :]
        g0 = xi * prev[..., :k, :]
        g1 = xi * (prev[..., 1: k + 1, :] - prev[..., :k, :])
        val = self.beta * math.sqrt(self.lam) * (np.sum(g0 * W0, axis=(-2, -1)) + np.sum(g1 * W1, axis=(-2, -1)))
        return val

    def at(self, t: float, x: float):
        return sum(self.term_at(m, t, x) for m in range(len(self.terms)))


def series_solution(field: FieldGrid, m_max: int, beta: float, lam: float) -> SeriesSolution:
    """Partial sums ``1 + sum_{m <= m_max} u_m`` with the individual terms retained."""
    return SeriesSolution(field.spec, _terms(field, m_max, beta, lam), field, beta, lam)


def order1_weights(spec: GridSpec, t: float, x: float) -> np.ndarray:
    """Cell weights w with ``u_1(t, x) = beta sqrt(lam) <w, Xi>``."""
    k = GridFunction(spec, np.zeros((spec.nt + 1, spec.nx))).node(t)
    w = np.zeros((spec.nt, spec.nx))
    if k:
        W0, _ = kernel_weights(spec.dt, spec.dx, k - np.arange(k), x - spec.centers)
        w[:k] = W0
    return w


def order1_grid_variance(spec: GridSpec, t: float, x: float, beta: float, lam: float) -> float:
    """Exact variance of the grid u_1(t, x): beta^2 lam w^T C w."""
    w = order1_weights(spec, t, x).ravel()
    C = covariance_matrix(spec)
    return float(beta**2 * lam * w @ C @ w)


def order1_variance_closed(beta: float, lam: float, t: float) -> float:
    """beta^2 lam * 2 int_0^t u p_{2u}(0) du = beta^2 lam * 2 t^{3/2} / (3 sqrt(pi))."""
    return beta**2 * lam * CROSS_INTEGRAL_MEAN * t**1.5


def order1_variance_reference(beta: float, lam: float, t: float = 1.0, nodes: int = 64) -> float:
    """Quadrature of E[u_1(t, x)^2] = beta^2 lam int int dr ds int int dy dy' p p p.

    The two space integrals collapse by the Gaussian semigroup to
    ``p_{(t-r) + (t-s) + |r-s|}(0)``; the remaining time square is split along the
    diagonal and integrated with a square-root grading towards the corner r = s = t.
    """
    q, wq = _gl(nodes)
    # r < s half; coordinates a = t - s in [0, t], b = s - r in [0, t - a]
    total = 0.0
    A = t * q * q  # grading near a = 0 where the kernel peaks
    jA = 2.0 * t * q * wq
    for a, ja in zip(A, jA):
        B = (t - a) * q * q
        jb = 2.0 * (t - a) * q * wq
        var = a + (a + B) + B  # (t - s) + (t - r) + (s - r)
        total += ja * np.sum(jb * _heat(var, 0.0))
    return float(2.0 * beta**2 * lam * total)


def space_semigroup_check(t: float, r: float, s: float) -> tuple[float, float]:
    """Space part of the order-1 variance at fixed (r, s): 2-D quadrature vs semigroup."""
    a, b, c = t - r, t - s, abs(r - s)
    f = lambda y2, y1: cont_kernel(a, y1) * cont_kernel(b, y2) * cont_kernel(c, y1 - y2)
    L = 12.0 * math.sqrt(max(a, b, c))
    num = integrate.dblquad(f, -L, L, -L, L, epsabs=1e-12, epsrel=1e-10)[0]
    return num, float(_heat(a + b + c, 0.0))


# ---------------------------------------------------------------- mollified field

def mollifier_weights(spec: GridSpec, eps: float, eps_prime: float, t: float, x: float,
                      mass_tol: float = 1e-10) -> np.ndarray:
    """Cell integrals of (1/eps') 1{0 <= t - s <= eps'} p_eps(x - y)."""
    if eps <= 0 or eps_prime <= 0:
        raise DomainError("mollifier widths must be positive")
    if t - eps_prime < -1e-12 or t > spec.t_max + 1e-12:
        raise DomainError("time window [t - eps', t] leaves the grid")
    edges_t = spec.times
    overlap = np.clip(np.minimum(edges_t[1:], t) - np.maximum(edges_t[:-1], t - eps_prime), 0.0, None)
    edges_x = spec.x_min + spec.dx * np.arange(spec.nx + 1)
    cdf = special.ndtr((edges_x - x) / math.sqrt(eps))
    if cdf[0] > mass_tol or 1.0 - cdf[-1] > mass_tol:
        raise DomainError("spatial mollifier mass outside the grid exceeds tolerance")
    space = np.diff(cdf)
    return np.outer(overlap / eps_prime, space)


def mollified_field_value(field, eps: float, eps_prime: float, t: float, x: float):
    """Pairing of the cell field with the one-sided mollifier at (t, x).

    ``field`` may be a FieldGrid or a plain (…, nt, nx) array on ``field.spec``.
    """
    if isinstance(field, FieldGrid):
        spec, xi = field.spec, field.xi
    else:
        spec, xi = field
        xi = np.asarray(xi, dtype=float)
    # cells carry averages; the pairing integrates the piecewise-constant field
    w = mollifier_weights(spec, eps, eps_prime, t, x)
    return np.sum(xi * w, axis=(-2, -1))


def mollified_variance_reference(eps: float, eps_prime: float) -> float:
    """<phi, phi>_H = (2 / eps'^2) int_0^{eps'} (eps' - tau) p_{2 eps + tau}(0) dtau."""
    f = lambda tau: (eps_prime - tau) * float(_heat(2.0 * eps + tau, 0.0))
    return 2.0 / eps_prime**2 * integrate.quad(f, 0.0, eps_prime, epsabs=1e-14, epsrel=1e-12)[0]


# ---------------------------------------------------------------- Brownian paths

@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Brownian values on the uniform grid ``times`` (values[0] = 0)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.values.shape or self.times.size < 2:
            raise DomainError("times and values must match and have >= 2 points")
        if self.values[0] != 0.0:
            raise DomainError("path must start at 0")

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def resolution(self) -> int:
        return self.times.size - 1


def sample_brownian_paths(n_paths: int, t: float, resolution: int, seed: int, stream_index: int = 0) -> np.ndarray:
    """Array (n_paths, resolution + 1) of Brownian values on a uniform grid."""
    if t <= 0:
        raise DomainError("t must be positive")
    gen = rngmod.stream(seed, rngmod.TAGS["brownian"], stream_index)
    inc = gen.standard_normal((n_paths, resolution)) * math.sqrt(t / resolution)
    return np.concatenate([np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)


def sample_brownian_path(t: float, resolution: int, seed: int, index: int = 0) -> BrownianPath:
    vals = sample_brownian_paths(1, t, resolution, seed, index)[0]
    return BrownianPath(np.linspace(0.0, t, resolution + 1), vals)


def refine(path: BrownianPath, gen: np.random.Generator) -> BrownianPath:
    """Double the resolution by Brownian-bridge midpoints."""
    v = path.values
    h = path.times[1] - path.times[0]
    mid = 0.5 * (v[:-1] + v[1:]) + gen.standard_normal(v.size - 1) * math.sqrt(h / 4.0)
    out = np.empty(2 * v.size - 1)
    out[0::2] = v
    out[1::2] = mid
    return BrownianPath(np.linspace(0.0, path.horizon, out.size), out)


# Conditional expectation of the double integral given the grid values: each
# cell carries an independent Brownian bridge, so every cell pair reduces to a
# smooth 2-D integral of a Gaussian kernel with shifted mean and variance.

_DIAG_NODES = 16
_NEAR_NODES = 12
_FAR_NODES = 4
ROW_CHUNK = 128  # paths per vectorised block; the far-pair array is rows x (4n)^2 / 2


def _smoothstep_rule(n: int):
    """Nodes on [0, 1] clustered at both ends: x = 3X^2 - 2X^3."""
    X, w = _gl(n)
    return 3 * X**2 - 2 * X**3, 6 * X * (1 - X) * w


def _diag_cells(B: np.ndarray, h: float) -> np.ndarray:
    """sum_i int int_{cell i^2} E[p_{|r-s|}(B_r - B_s) | grid], per path."""
    q, wq = _gl(_DIAG_NODES)
    mu = np.diff(B, axis=-1) / h
    # tau = h q^2; variance tau (2 - tau/h); the q in the Jacobian cancels the 1/sqrt(tau)
    var_n = 2.0 - q * q
    pref = 4.0 * h**1.5 * (1.0 - q * q) * wq / np.sqrt(2.0 * np.pi * var_n)
    expo = -0.5 * h * np.square(mu[..., None]) * (q**4 / (q * q * var_n))
    return np.sum(pref * np.exp(expo), axis=(-2, -1))


def _pair_sum(B1, B2, h, i_idx, j_idx, x, wx, y, wy):
    """sum over listed cell pairs (i in path 1, j in path 2) of
    h^2 int int p_{|r-s| + v_i(x) + v_j(y)}(m_j(y) - m_i(x)) dx dy."""
    d1 = np.diff(B1, axis=-1)
    d2 = np.diff(B2, axis=-1)
    m1 = B1[..., i_idx, None] + d1[..., i_idx, None] * x  # (..., P, nx)
    m2 = B2[..., j_idx, None] + d2[..., j_idx, None] * y
    v1 = h * x * (1 - x)
    v2 = h * y * (1 - y)
    tau = np.abs(h * ((j_idx - i_idx)[:, None, None] + y[None, None, :] - x[None, :, None]))
    var = tau + v1[None, :, None] + v2[None, None, :]
    diff = m2[..., :, None, :] - m1[..., :, :, None]
    val = np.exp(-0.5 * np.square(diff) / var) / np.sqrt(2.0 * np.pi * var)
    return h * h * np.einsum("...pab,a,b->...", val, wx, wy)


def _near_pairs_cross(B1, B2, h, n):
    x, w = _smoothstep_rule(_NEAR_NODES)
    i = np.concatenate([np.arange(n), np.arange(n - 1), np.arange(1, n)])
    j = np.concatenate([np.arange(n), np.arange(1, n), np.arange(n - 1)])
    return _pair_sum(B1, B2, h, i, j, x, w, x, w)


def _far_pairs(B1, B2, h, n, symmetric):
    """Pairs with |i - j| >= 2 through a global GL node matrix."""
    xg, wg = _gl(_FAR_NODES)
    cells = np.arange(n)
    d1 = np.diff(B1, axis=-1)
    d2 = np.diff(B2, axis=-1)
    t_nodes = (h * (cells[:, None] + xg[None, :])).ravel()
    var_nodes = np.tile(h * xg * (1 - xg), n)
    w_nodes = np.tile(h * wg, n)
    cell_of = np.repeat(cells, xg.size)
    m1 = (B1[..., :-1, None] + d1[..., :, None] * xg).reshape(B1.shape[:-1] + (-1,))
    m2 = (B2[..., :-1, None] + d2[..., :, None] * xg).reshape(B2.shape[:-1] + (-1,))
    gap = cell_of[None, :] - cell_of[:, None]
    mask = (gap >= 2) if symmetric else (np.abs(gap) >= 2)
    ia, ib = np.nonzero(mask)
    var = np.abs(t_nodes[ib] - t_nodes[ia]) + var_nodes[ia] + var_nodes[ib]
    ww = w_nodes[ia] * w_nodes[ib]
    diff = m2[..., ib] - m1[..., ia]
    val = np.exp(-0.5 * np.square(diff) / var) / np.sqrt(2.0 * np.pi * var)
    s = val @ ww
    return 2.0 * s if symmetric else s


def _adjacent_self(B, h, n):
    x, w = _smoothstep_rule(_NEAR_NODES)
    i = np.arange(n - 1)
    return 2.0 * _pair_sum(B, B, h, i, i + 1, x, w, x, w)


def double_integrals(values: np.ndarray, t: float) -> np.ndarray:
    """Conditional expectation of V(B) = int_0^t int_0^t p_{|r-s|}(B_r - B_s) given the
    grid values (rows of ``values``)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] - 1
    if n < 4:
        raise DomainError("need at least 4 cells")
    h = t / n
    if values.ndim == 2 and values.shape[0] > ROW_CHUNK:
        return np.concatenate([double_integrals(values[a:a + ROW_CHUNK], t)
                               for a in range(0, values.shape[0], ROW_CHUNK)])
    return _diag_cells(values, h) + _adjacent_self(values, h, n) + _far_pairs(values, values, h, n, True)


def cross_double_integrals(v1: np.ndarray, v2: np.ndarray, t: float) -> np.ndarray:
    """Conditional expectation of int int p_{|r-s|}(B1_r - B2_s) dr ds given both grids."""
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    n = v1.shape[-1] - 1
    h = t / n
    if v1.ndim == 2 and v1.shape[0] > ROW_CHUNK:
        return np.concatenate([cross_double_integrals(v1[a:a + ROW_CHUNK], v2[a:a + ROW_CHUNK], t)
                               for a in range(0, v1.shape[0], ROW_CHUNK)])
    return _near_pairs_cross(v1, v2, h, n) + _far_pairs(v1, v2, h, n, False)


MIN_RESOLUTION = 64


def brownian_double_integral(path: BrownianPath) -> float:
    """V(B) for one path (conditional expectation given its grid values)."""
    if path.resolution < MIN_RESOLUTION:
        raise DomainError(f"path resolution must be >= {MIN_RESOLUTION}")
    return float(double_integrals(path.values[None, :], path.horizon)[0])


def double_integral_mean(t: float) -> float:
    return DOUBLE_INTEGRAL_MEAN * t**1.5


def double_integral_bound(t: float) -> float:
    return DOUBLE_INTEGRAL_BOUND * t**1.5


FK_CHUNK = 128


def fk_samples(p: int, t: float, replicas: int, resolution: int, seed: int,
               threads: int | None = None) -> np.ndarray:
    """Per-replica exponent integrals: V(B) for p = 1, V11 + V22 + 2 V12 for p = 2."""
    if p not in (1, 2):
        raise DomainError("p must be 1 or 2")
    if resolution < MIN_RESOLUTION:
        raise DomainError(f"resolution must be >= {MIN_RESOLUTION}")
    bounds = rngmod.chunk_bounds(replicas, FK_CHUNK)

    def work(c):
        a, b = bounds[c]
        if p == 1:
            W = sample_brownian_paths(b - a, t, resolution, seed, c)
            return double_integrals(W, t)
        W = sample_brownian_paths(2 * (b - a), t, resolution, seed, c)
        W1, W2 = W[: b - a], W[b - a:]
        return double_integrals(W1, t) + double_integrals(W2, t) + 2.0 * cross_double_integrals(W1, W2, t)

    return np.concatenate(rngmod.map_ordered(work, len(bounds), threads))


def fk_exponent_mean(p: int, t: float) -> float:
    return (DOUBLE_INTEGRAL_MEAN if p == 1 else 2 * DOUBLE_INTEGRAL_MEAN + 2 * CROSS_INTEGRAL_MEAN) * t**1.5


def fk_moment(p: int, beta: float, lam: float, t: float, path_replicas: int, resolution: int,
              seed: int, threads: int | None = None) -> tuple[float, float]:
    """E[u(t, x)^p] = E[exp(beta^2 lam / 2 * S)], S the p-path double integral.

    Uses the exact mean of S as a control variate:
    ``1 + a E[S] + mean(e^{aS} - 1 - aS)``.
    """
    if beta == 0 or lam == 0:
        return 1.0, 0.0
    a = 0.5 * beta**2 * lam
    S = fk_samples(p, t, path_replicas, resolution, seed, threads)
    m, se = rngmod.mean_se(np.expm1(a * S) - a * S)
    return 1.0 + a * fk_exponent_mean(p, t) + m, se
