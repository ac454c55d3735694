"""Transition kernels of the rate-1 simple random walk on Z and of Brownian motion.

The walk kernel is ``P_t(x) = exp(-t) I_|x|(t)``; it is evaluated with the
exponentially scaled Bessel function from scipy. Two independent oracles are
kept alongside: Gauss-Legendre quadrature of the Fourier integral and a
log-domain power series. Gradients follow the convention

    D_1^k P = 2^{-k0} (second central difference)^{k0} (forward difference)^{k1} P,

which uses the generator identity ``d/dt P_t = 1/2 * Laplacian P_t`` instead of
time differencing. Continuum derivatives come from Hermite polynomials.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import hermite_e
from scipy import special

from .errors import CapabilityError, DomainError

MAX_GRADIENT_WEIGHT = 4
_LATTICE_TOL = 1e-9


@dataclass(frozen=True)
class GradientIndex:
    """Mixed derivative order: ``k0`` time derivatives, ``k1`` space differences."""

    k0: int = 0
    k1: int = 0

    def __post_init__(self):
        if self.k0 < 0 or self.k1 < 0:
            raise DomainError("gradient orders must be nonnegative")
        if self.weight > MAX_GRADIENT_WEIGHT:
            raise CapabilityError(f"|k| = {self.weight} exceeds supported {MAX_GRADIENT_WEIGHT}")

    @property
    def weight(self) -> int:
        return 2 * self.k0 + self.k1

    @classmethod
    def coerce(cls, k) -> "GradientIndex":
        if isinstance(k, GradientIndex):
            return k
        return cls(int(k[0]), int(k[1]))


def _check_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(t < 0) or np.any(~np.isfinite(t)):
        raise DomainError("walk kernel needs finite t >= 0")
    return t


def rw_kernel(t, x):
    """P_t(x): probability that the walk started at 0 sits at x at time t.

    Vectorised over broadcastable ``t`` and integer ``x``.
    """
    t = _check_time(t)
    x = np.abs(np.asarray(x))
    if x.dtype.kind == "f":
        if np.any(np.abs(x - np.rint(x)) > _LATTICE_TOL):
            raise DomainError("lattice site must be an integer")
        x = np.rint(x)
    out = special.ive(x.astype(float), t)
    return out if out.ndim else float(out)


def log_rw_kernel(t: float, x: int) -> float:
    """log P_t(x), usable where P_t(x) underflows double precision."""
    t = float(_check_time(t))
    n = abs(int(x))
    if t == 0.0:
        return 0.0 if n == 0 else -math.inf
    val = special.ive(n, t)
    if val > 1e-280:
        return math.log(val)
    return _log_bessel_series(t, n)


def _log_bessel_series(t: float, n: int) -> float:
    # log of exp(-t) sum_k (t/2)^{2k+n} / (k! (k+n)!), summed around its peak term
    half = math.log(t / 2.0)
    # the term index with the largest contribution
    k_peak = max(0, int((-n + math.sqrt(n * n + t * t)) / 2.0))
    span = int(10 + 10 * math.sqrt(k_peak + 1.0) + 2 * math.sqrt(t))
    k = np.arange(max(0, k_peak - span), k_peak + span + 1, dtype=float)
    logs = (2 * k + n) * half - special.gammaln(k + 1) - special.gammaln(k + n + 1)
    return float(-t + special.logsumexp(logs))


def bessel_series_kernel(t: float, x: int) -> float:
    """Oracle: P_t(x) from the power series of I_|x|, summed in log space."""
    t = float(_check_time(t))
    n = abs(int(x))
    if t == 0.0:
        return 1.0 if n == 0 else 0.0
    return math.exp(_log_bessel_series(t, n))


@lru_cache(maxsize=8)
def _gl(n: int):
    return np.polynomial.legendre.leggauss(n)


def fourier_kernel(t: float, x: int, tol: float = 1e-14) -> float:
    """Oracle: P_t(x) = (1/pi) int_0^pi cos(x theta) exp(-t(1 - cos theta)) dtheta.

    Composite 20-point Gauss-Legendre; panel count doubles until two successive
    values agree to ``tol``.
    """
    t = float(_check_time(t))
    x = abs(int(x))
    nodes, weights = _gl(20)
    panels = 4 + x // 2 + int(math.sqrt(t))
    prev = None
    for _ in range(14):
        edges = np.linspace(0.0, math.pi, panels + 1)
        a, b = edges[:-1, None], edges[1:, None]
        th = 0.5 * (b - a) * nodes[None, :] + 0.5 * (a + b)
        f = np.cos(x * th) * np.exp(-t * (1.0 - np.cos(th)))
        val = float(np.sum(0.5 * (b - a) * weights[None, :] * f) / math.pi)
        if prev is not None and abs(val - prev) <= tol:
            return val
        prev = val
        panels *= 2
    return prev


def cont_kernel(t, x):
    """Heat kernel p_t(x) = (2 pi t)^{-1/2} exp(-x^2 / 2t), t > 0."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0) or np.any(~np.isfinite(t)):
        raise DomainError("heat kernel needs t > 0")
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x / t) / np.sqrt(2.0 * np.pi * t)
    return out if out.ndim else float(out)


def rescaled_rw_kernel(eps: float, t, x):
    """P^eps_t(x) = eps^{-1} P_{t/eps^2}(x/eps) on the lattice eps*Z; zero for t < 0."""
    if not eps > 0:
        raise DomainError("eps must be positive")
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    site = x / eps
    if np.any(np.abs(site - np.rint(site)) > 1e-7 * np.maximum(1.0, np.abs(site))):
        raise DomainError("x is not on the eps-lattice")
    tm = np.where(t < 0, 0.0, t / eps**2)
    val = special.ive(np.abs(np.rint(site)), tm) / eps
    out = np.where(t < 0, 0.0, val)
    return out if out.ndim else float(out)


def truncation_radius(t: float) -> int:
    """Radius beyond which P_t carries negligible mass (see ``kernel_tail_bound``)."""
    return int(math.ceil(t + 8.0 * math.sqrt(t + 1.0) + 16.0))


def kernel_tail_bound(t: float, radius: int) -> float:
    """Upper bound on P(|S_t| > radius) from the Chernoff bound on the jump count."""
    r = radius + 1
    if r <= t:
        return 1.0
    if t == 0:
        return 0.0
    # P(N_t >= r) <= exp(-t) (e t / r)^r
    return float(min(1.0, math.exp(-t + r * (1.0 + math.log(t / r)))))


def kernel_mass(t: float) -> tuple[float, float]:
    """(sum_{|x| <= x_max(t)} P_t(x), certified bound on the neglected mass)."""
    r = truncation_radius(t)
    xs = np.arange(-r, r + 1)
    vals = rw_kernel(t, xs)
    # pairwise summation, small terms first
    total = float(np.sum(np.sort(vals)))
    return total, kernel_tail_bound(t, r)


def chapman_kolmogorov_sum(t: float, s: float, x: int) -> float:
    """sum_y P_t(y) P_s(x - y) over a window certified by ``truncation_radius``."""
    r = truncation_radius(max(t, s)) + abs(int(x))
    y = np.arange(-r, r + 1)
    return float(np.sum(rw_kernel(t, y) * rw_kernel(s, x - y)))


@lru_cache(maxsize=64)
def _stencil(k0: int, k1: int) -> tuple[tuple[int, ...], tuple[float, ...]]:
    # offsets and coefficients of 2^{-k0} (central 2nd diff)^{k0} (forward diff)^{k1}
    coef = {0: 1.0}
    for _ in range(k1):
        new: dict[int, float] = {}
        for off, c in coef.items():
            new[off + 1] = new.get(off + 1, 0.0) + c
            new[off] = new.get(off, 0.0) - c
        coef = new
    for _ in range(k0):
        new = {}
        for off, c in coef.items():
            for d, w in ((-1, 0.5), (0, -1.0), (1, 0.5)):
                new[off + d] = new.get(off + d, 0.0) + w * c
        coef = new
    offs = tuple(sorted(coef))
    return offs, tuple(coef[o] for o in offs)


def rw_gradient(t: float, x: int, k) -> float:
    """D_1^k P_t(x) with time derivatives replaced by the walk generator."""
    k = GradientIndex.coerce(k)
    offs, coefs = _stencil(k.k0, k.k1)
    vals = rw_kernel(t, int(x) + np.asarray(offs))
    # largest terms last keeps cancellation error small
    terms = np.asarray(coefs) * vals
    return float(np.sum(terms[np.argsort(np.abs(terms))]))


def cont_gradient(t: float, x: float, k) -> float:
    """D^k p_t(x) = 2^{-k0} d^{2k0+k1}/dx^{2k0+k1} p_t(x) (heat equation)."""
    k = GradientIndex.coerce(k)
    n = 2 * k.k0 + k.k1
    c = np.zeros(n + 1)
    c[n] = 1.0
    z = x / math.sqrt(t)
    he = hermite_e.hermeval(z, c)
    return float((-1) ** n * t ** (-n / 2.0) * he * cont_kernel(t, x) / 2.0**k.k0)


def discrete_gradient(field, k, eps: float, at, time_step: float | None = None) -> float:
    """Mixed discrete gradient D_eps^k of ``field(t, x)`` at ``at = (t, x)``.

    Space: forward differences ``(g(x + eps) - g(x)) / eps``. Time: if ``field``
    has a ``generator_time_derivative`` attribute (walk kernels do), the exact
    generator identity is used; otherwise a centred difference with
    ``time_step`` is applied.
    """
    k = GradientIndex.coerce(k)
    if not eps > 0:
        raise DomainError("eps must be positive")
    t, x = float(at[0]), float(at[1])

    def space_part(tt: float) -> float:
        offs, coefs = _stencil(0, k.k1)
        total = 0.0
        for o, c in zip(offs, coefs):
            total += c * field(tt, x + o * eps)
        return total / eps**k.k1

    if k.k0 == 0:
        return float(space_part(t))
    if getattr(field, "generator_time_derivative", False):
        offs, coefs = _stencil(k.k0, k.k1)
        total = 0.0
        for o, c in zip(offs, coefs):
            total += c * field(t, x + o * eps)
        return float(total / eps ** (2 * k.k0 + k.k1))
    if time_step is None or time_step <= 0:
        raise DomainError("time derivative of a general field needs time_step > 0")
    # centred differences in time, applied k0 times
    h = time_step
    w = np.array([1.0])
    for _ in range(k.k0):
        w = np.convolve(w, [-0.5, 0.0, 0.5])
    offs = np.arange(len(w)) - (len(w) - 1) // 2
    total = 0.0
    for o, c in zip(offs, w):
        if c != 0.0:
            tt = t + o * h
            if tt < 0:
                raise DomainError("time stencil reaches negative times")
            total += c * space_part(tt)
    return float(total / h**k.k0)


class WalkKernelField:
    """The rescaled walk kernel as a field ``(t, x) -> P^eps_t(x)``.

    Its time derivative is exactly ``eps^{-2}/2`` times the second difference,
    which ``discrete_gradient`` uses when this flag is present.
    """

    generator_time_derivative = True

    def __init__(self, eps: float = 1.0):
        self.eps = eps

    def __call__(self, t, x):
        return rescaled_rw_kernel(self.eps, t, x)


def llt_scaled_error(t: float, x: int, k) -> float:
    """(sqrt(t) + |x|)^{|k|+1} |D_1^k P_t(x) - D^k p_t(x)|, for t >= 1."""
    if t < 1:
        raise DomainError("local limit diagnostic requires t >= 1")
    k = GradientIndex.coerce(k)
    diff = rw_gradient(t, x, k) - cont_gradient(t, x, k)
    return float((math.sqrt(t) + abs(x)) ** (k.weight + 1) * abs(diff))


def llt_table(ts, xs, ks) -> list[dict]:
    """Rows (t, x, k0, k1, scaled_error) over the product of the inputs."""
    rows = []
    for kk in ks:
        k = GradientIndex.coerce(kk)
        for t in ts:
            for x in xs:
                rows.append(
                    {"t": float(t), "x": int(x), "k0": k.k0, "k1": k.k1,
                     "scaled_error": llt_scaled_error(t, x, k)}
                )
    return rows
