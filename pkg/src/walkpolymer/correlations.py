"""Moments of the centred occupation field.

For a Poisson system of independent walkers the joint cumulant of
``xi(t_1, x_1), ..., xi(t_m, x_m)`` equals ``lambda`` times the probability that
one walker visits all the points, i.e. ``lambda * chain_product``. Moments of
the centred field are then sums over set partitions with no singleton block.
"""
from __future__ import annotations

from functools import lru_cache
from typing import Iterator, Sequence

import numpy as np

from . import rng as rngmod
from .environment import buffer_halfwidth, occupation_samples
from .errors import CapabilityError, DomainError
from .lattice_kernels import rw_kernel

MAX_EXACT_POINTS = 8
MAX_TOUCHARD_ORDER = 12


def _sorted_points(points) -> list[tuple[float, int]]:
    pts = [(float(t), int(x)) for t, x in points]
    if any(t < 0 for t, _ in pts):
        raise DomainError("times must be nonnegative")
    # stable sort keeps the input order for equal times
    return sorted(pts, key=lambda p: p[0])


def chain_product(points) -> float:
    """Product of walk kernels along the time-ordered chain of points."""
    pts = _sorted_points(points)
    if not pts:
        raise DomainError("need at least one point")
    val = 1.0
    for (t1, x1), (t2, x2) in zip(pts[:-1], pts[1:]):
        val *= rw_kernel(t2 - t1, x2 - x1)
        if val == 0.0:
            return 0.0
    return float(val)


@lru_cache(maxsize=None)
def centered_poisson_polynomial(n: int) -> tuple[int, ...]:
    """Integer coefficients (constant term first) of E[(N - x)^n], N ~ Poisson(x).

    Uses mu_{n+1} = x (n mu_{n-1} + d mu_n / dx).
    """
    if n < 0:
        raise DomainError("order must be nonnegative")
    mus = [[1], [0]]
    for k in range(1, n):
        prev, cur = mus[k - 1], mus[k]
        deriv = [i * c for i, c in enumerate(cur)][1:]
        inner = [0] * max(len(prev), len(deriv))
        for i, c in enumerate(prev):
            inner[i] += k * c
        for i, c in enumerate(deriv):
            inner[i] += c
        mus.append([0] + inner)
    poly = mus[n]
    while len(poly) > 1 and poly[-1] == 0:
        poly = poly[:-1]
    return tuple(poly)


def centered_poisson_moment(mean: float, n: int) -> float:
    """E[(N - mean)^n] for N ~ Poisson(mean)."""
    if mean < 0:
        raise DomainError("Poisson mean must be nonnegative")
    if n > MAX_TOUCHARD_ORDER:
        raise CapabilityError(f"order {n} exceeds supported {MAX_TOUCHARD_ORDER}")
    coeffs = centered_poisson_polynomial(int(n))
    val = 0.0
    for c in reversed(coeffs):
        val = val * mean + c
    return float(val)


def partitions_without_singletons(m: int) -> Iterator[list[list[int]]]:
    """Set partitions of ``range(m)`` with every block of size >= 2.

    Restricted growth strings, pruned as soon as a singleton can no longer be
    filled by the remaining elements.
    """
    if m == 0:
        yield []
        return
    labels = [0] * m
    sizes = [0] * m

    def rec(i: int, nblocks: int):
        remaining = m - i
        singles = sum(1 for b in range(nblocks) if sizes[b] == 1)
        if singles > remaining:
            return
        if i == m:
            blocks: list[list[int]] = [[] for _ in range(nblocks)]
            for j, lab in enumerate(labels):
                blocks[lab].append(j)
            yield blocks
            return
        for b in range(nblocks + 1):
            labels[i] = b
            sizes[b] += 1
            yield from rec(i + 1, max(nblocks, b + 1))
            sizes[b] -= 1

    yield from rec(0, 0)


def exact_correlation(points, lam: float, return_terms: bool = False):
    """E[prod_i xi~(t_i, x_i)] via the partition sum of lambda * chain products."""
    pts = [(float(t), int(x)) for t, x in points]
    m = len(pts)
    if m == 0:
        raise DomainError("need at least one point")
    if m > MAX_EXACT_POINTS:
        raise CapabilityError(f"{m} points exceed the exact limit {MAX_EXACT_POINTS}; use mc_correlation")
    if lam <= 0:
        raise DomainError("lambda must be positive")
    cache: dict[tuple[int, ...], float] = {}
    terms = []
    total = 0.0
    for blocks in partitions_without_singletons(m):
        val = 1.0
        for blk in blocks:
            key = tuple(blk)
            if key not in cache:
                cache[key] = lam * chain_product([pts[i] for i in blk])
            val *= cache[key]
        total += val
        if return_terms:
            terms.append({"blocks": [list(b) for b in blocks], "value": val})
    if return_terms:
        return total, terms
    return total


def mc_correlation(points, lam: float, replicas: int, seed: int, delta: float = 1e-8,
                   threads: int | None = None) -> tuple[float, float]:
    """Monte Carlo mean and standard error of prod_i xi~(t_i, x_i)."""
    if replicas < 100:
        raise DomainError("need at least 100 replicas")
    occ = occupation_samples(lam, points, replicas, seed, delta=delta, threads=threads)
    prod = np.prod(occ - lam, axis=1)
    return rngmod.mean_se(prod)


def coincidence_moment(points, n: int, lam: float = 1.0) -> float:
    """Centred n-th moment of the number of walkers passing through every point."""
    return centered_poisson_moment(lam * chain_product(points), n)


def coincidence_counts(points, lam: float, replicas: int, seed: int, delta: float = 1e-8,
                       chunk: int = 8192, threads: int | None = None) -> np.ndarray:
    """Per environment, the number of walkers that visit all ``points``."""
    pts = _sorted_points(points)
    xs = [x for _, x in pts]
    B, _ = buffer_halfwidth(lam, max(pts[-1][0], 1e-12), delta)
    sites = np.arange(min(xs) - B, max(xs) + B + 1)
    bounds = rngmod.chunk_bounds(replicas, chunk)

    def work(ci):
        a, b = bounds[ci]
        R = b - a
        gen = rngmod.stream(seed, rngmod.TAGS["poisson"], ci)
        counts = gen.poisson(lam, size=(R, sites.size))
        rep = np.repeat(np.arange(R), counts.sum(axis=1))
        pos = np.repeat(np.tile(sites, R), counts.ravel())
        ok = np.ones(pos.size, dtype=bool)
        now = 0.0
        for t, x in pts:
            dt = t - now
            if dt > 0:
                pos = pos + gen.poisson(dt / 2.0, pos.size) - gen.poisson(dt / 2.0, pos.size)
            now = t
            ok &= pos == x
        return np.bincount(rep[ok], minlength=R)

    return np.concatenate(rngmod.map_ordered(work, len(bounds), threads))
