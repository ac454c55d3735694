"""Continuous-time walk paths: single paths and struct-of-arrays batches."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError


@dataclass(frozen=True, eq=False)
class WalkPath:
    """A piecewise-constant lattice path: start site ``x0`` at time ``t0``
    followed by jumps of size ``steps[i]`` at strictly increasing ``times[i]``.
    The path is right-continuous: the position at a jump time is post-jump.
    """

    x0: int
    times: np.ndarray
    steps: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        steps = np.asarray(self.steps, dtype=np.int8)
        if times.shape != steps.shape or times.ndim != 1:
            raise DomainError("times and steps must be 1-d arrays of equal length")
        if times.size:
            if times[0] <= self.t0 or np.any(np.diff(times) <= 0):
                raise DomainError("jump times must be strictly increasing and after t0")
            if np.any((steps != 1) & (steps != -1)):
                raise DomainError("steps must be +1 or -1")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "x0", int(self.x0))

    @classmethod
    def constant(cls, x0: int = 0, t0: float = 0.0) -> "WalkPath":
        return cls(x0, np.zeros(0), np.zeros(0, dtype=np.int8), t0)

    @property
    def jumps(self) -> list[tuple[float, int]]:
        return [(float(t), int(s)) for t, s in zip(self.times, self.steps)]

    def position(self, t):
        """Site occupied at time(s) ``t``."""
        k = np.searchsorted(self.times, t, side="right")
        cs = np.concatenate(([0], np.cumsum(self.steps, dtype=np.int64)))
        out = self.x0 + cs[k]
        return out if np.ndim(out) else int(out)

    def sites(self) -> np.ndarray:
        """Sites visited, one per constancy interval."""
        return self.x0 + np.concatenate(([0], np.cumsum(self.steps, dtype=np.int64)))

    def extent(self) -> tuple[int, int]:
        s = self.sites()
        return int(s.min()), int(s.max())


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Many paths in compressed form: path ``i`` owns ``times[offsets[i]:offsets[i+1]]``."""

    x0: np.ndarray
    offsets: np.ndarray
    times: np.ndarray
    steps: np.ndarray
    t0: np.ndarray

    def __len__(self) -> int:
        return int(self.x0.size)

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    def path(self, i: int) -> WalkPath:
        a, b = self.offsets[i], self.offsets[i + 1]
        return WalkPath(int(self.x0[i]), self.times[a:b].copy(), self.steps[a:b].copy(), float(self.t0[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self.path(i)

    @classmethod
    def from_paths(cls, paths) -> "PathBatch":
        paths = list(paths)
        counts = np.array([p.times.size for p in paths], dtype=np.int64)
        offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        times = np.concatenate([p.times for p in paths]) if paths else np.zeros(0)
        steps = np.concatenate([p.steps for p in paths]) if paths else np.zeros(0, np.int8)
        return cls(
            np.array([p.x0 for p in paths], dtype=np.int64),
            offsets,
            np.asarray(times, dtype=float),
            np.asarray(steps, dtype=np.int8),
            np.array([p.t0 for p in paths], dtype=float),
        )

    def extent(self) -> tuple[int, int]:
        """Smallest and largest site visited by any path."""
        if len(self) == 0:
            return 0, -1
        seg = np.repeat(np.arange(len(self)), np.diff(self.offsets))
        cs = np.cumsum(self.steps, dtype=np.int64)
        # position after each jump = x0 + (cumsum within path)
        start_cs = np.concatenate(([0], cs))[self.offsets[:-1]]
        pos = self.x0[seg] + cs - start_cs[seg]
        lo = min(int(self.x0.min()), int(pos.min()) if pos.size else int(self.x0.min()))
        hi = max(int(self.x0.max()), int(pos.max()) if pos.size else int(self.x0.max()))
        return lo, hi


def sample_paths(n: int, t0: float, horizon: float, x0, rng: np.random.Generator) -> PathBatch:
    """``n`` independent rate-1 walks on ``(t0, horizon]`` started at ``x0``."""
    if horizon < t0:
        raise DomainError("horizon must not precede the start time")
    x0 = np.broadcast_to(np.asarray(x0, dtype=np.int64), (n,)).copy()
    counts = rng.poisson(horizon - t0, size=n)
    total = int(counts.sum())
    u = rng.uniform(t0, horizon, size=total)
    owner = np.repeat(np.arange(n), counts)
    order = np.lexsort((u, owner))
    times = u[order]
    steps = (2 * rng.integers(0, 2, size=total) - 1).astype(np.int8)
    offsets = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    # zero-probability ties would break strict monotonicity; redraw defensively
    if total > 1:
        same = (np.diff(times) <= 0) & (owner[1:] == owner[:-1])
        if np.any(same):
            return sample_paths(n, t0, horizon, x0, rng)
    return PathBatch(x0, offsets, times, steps, np.full(n, float(t0)))
