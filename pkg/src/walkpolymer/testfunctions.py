"""Compactly supported space-time test functions paired against the noise.

The workhorse is the separable polynomial bump

    phi(t, x) = A * b((t - tc) / th) * b((x - xc) / xh),   b(u) = (1 - u^2)^2 on |u| < 1,

whose time factor has the exact antiderivative u - 2u^3/3 + u^5/5.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

BUMP_MASS = 16.0 / 15.0  # integral of b over [-1, 1]
BUMP_SQ_MASS = 256.0 / 315.0  # integral of b^2
BUMP_SLOPE = 8.0 / (3.0 * math.sqrt(3.0))  # sup |b'|


def bump(u):
    u = np.asarray(u, dtype=float)
    return np.where(np.abs(u) < 1.0, (1.0 - u * u) ** 2, 0.0)


def bump_antiderivative(u):
    """G(u) = int_{-1}^{u} b, clipped to the support."""
    u = np.clip(np.asarray(u, dtype=float), -1.0, 1.0)
    return u - 2.0 * u**3 / 3.0 + u**5 / 5.0 + 8.0 / 15.0


@dataclass(frozen=True)
class Bump:
    amplitude: float = 1.0
    t_center: float = 1.0
    x_center: float = 0.0
    t_half: float = 1.0
    x_half: float = 1.0

    def __call__(self, t, x):
        return self.amplitude * self.time_factor(t) * self.space_factor(x)

    def time_factor(self, t):
        return bump((np.asarray(t, dtype=float) - self.t_center) / self.t_half)

    def space_factor(self, x):
        return bump((np.asarray(x, dtype=float) - self.x_center) / self.x_half)

    def time_integral(self, a, b):
        """int_a^b of the time factor (without amplitude), exact."""
        g = lambda s: bump_antiderivative((np.asarray(s, dtype=float) - self.t_center) / self.t_half)
        return self.t_half * (g(b) - g(a))

    @property
    def support(self) -> tuple[float, float, float, float]:
        return (self.t_center - self.t_half, self.t_center + self.t_half,
                self.x_center - self.x_half, self.x_center + self.x_half)

    def integral(self) -> float:
        return self.amplitude * self.t_half * self.x_half * BUMP_MASS**2

    def scaled(self, ell: float, z=(0.0, 0.0)) -> "Bump":
        """phi^ell_z(t, x) = ell^{-3} phi(ell^{-2}(t - t_z), ell^{-1}(x - x_z))."""
        return Bump(
            self.amplitude * ell**-3,
            z[0] + ell**2 * self.t_center,
            z[1] + ell * self.x_center,
            ell**2 * self.t_half,
            ell * self.x_half,
        )

    def shifted(self, dt: float = 0.0, dx: float = 0.0) -> "Bump":
        return replace(self, t_center=self.t_center + dt, x_center=self.x_center + dx)

    @property
    def is_zero(self) -> bool:
        return self.amplitude == 0.0


def admissible_bump() -> Bump:
    """Bump supported in the parabolic unit ball with C^1 size at most 1.

    Support |t| <= 1/4, |x| <= 1/2, so sqrt|t| + |x| <= 1. The C^1 size is
    sup|phi| + sup|d_x phi| = A (1 + 2 * sup|b'|), and A makes it equal to 1.
    """
    amp = 1.0 / (1.0 + 2.0 * BUMP_SLOPE)
    return Bump(amp, 0.0, 0.0, 0.25, 0.5)


def standard_bump() -> Bump:
    """The admissible bump moved to the time support [0, 1/2]."""
    return admissible_bump().shifted(dt=0.25)


def unit_bump() -> Bump:
    """Bump with unit half-widths, C^1 size 1, time support [0, 2].

    Used for scale families phi^ell with ell >= eps: its spatial support then
    always spans at least three lattice sites.
    """
    return Bump(1.0 / (1.0 + BUMP_SLOPE), 1.0, 0.0, 1.0, 1.0)


@dataclass(frozen=True)
class GenericTestFunction:
    """Arbitrary smooth ``f(t, x)`` with a declared rectangular support."""

    f: object
    support: tuple[float, float, float, float]
    is_zero: bool = False

    def __call__(self, t, x):
        return self.f(t, x)


def zero_function() -> GenericTestFunction:
    return GenericTestFunction(lambda t, x: np.zeros(np.broadcast(t, x).shape), (0.0, 0.0, 0.0, 0.0), True)
