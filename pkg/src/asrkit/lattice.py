"""Geometry of the pentanomial tree in (level, node-index) coordinates.

A node at level n (1-based) carries an integer index zeta in
[0, 2n(n-1)].  The normalized spread it represents is
Z = zeta/n - (n-1); the five branches move zeta to zeta + n*j for
j in 0..4, which reproduces the spread update Z' = (n/(n+1))(Z + j - 2)
exactly in rational arithmetic.  Node counts grow quadratically per
level, cubically for the whole tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "zeta_range",
    "level_size",
    "child",
    "z_of",
    "zeta_of",
    "total_nodes",
    "zeta_bracket",
    "QGrid",
]


def zeta_range(n: int) -> tuple:
    """Inclusive node-index interval [0, 2n(n-1)] at level n."""
    if n < 1:
        raise ValueError(f"level must be >= 1, got {n}")
    return 0, 2 * n * (n - 1)


def level_size(n: int) -> int:
    return 2 * n * (n - 1) + 1


def child(n: int, zeta: int, j: int) -> tuple:
    """Child node reached from (n, zeta) along branch j in 0..4."""
    lo, hi = zeta_range(n)
    if not lo <= zeta <= hi:
        raise ValueError(f"zeta={zeta} outside [{lo}, {hi}] at level {n}")
    if not 0 <= j <= 4:
        raise ValueError(f"branch index must be in 0..4, got {j}")
    return n + 1, zeta + n * j


def z_of(n: int, zeta: int) -> float:
    """Normalized spread Z represented by node (n, zeta)."""
    return zeta / n - (n - 1)


def zeta_of(n: int, z: float) -> float:
    """Real-valued node coordinate of spread Z at level n (inverse of z_of)."""
    return n * (z + (n - 1))


def total_nodes(horizon: int) -> int:
    """Number of nodes over levels 1..horizon: N + 2(N^3 - N)/3."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    return horizon + 2 * (horizon**3 - horizon) // 3


def zeta_bracket(n: int, z: float) -> tuple:
    """Clamped interpolation bracket (lo, hi, weight) for spread z at level n.

    Off-lattice spreads are clamped to the edge nodes; on-lattice values
    return weight 0 against the exact node.
    """
    zr = zeta_of(n, z)
    _, top = zeta_range(n)
    if zr <= 0.0:
        return 0, 0, 0.0
    if zr >= top:
        return top, top, 0.0
    lo = int(np.floor(zr))
    hi = min(lo + 1, top)
    return lo, hi, zr - lo


@dataclass(frozen=True)
class QGrid:
    """Uniform inventory grid on [0, nominal] with num_steps intervals."""

    nominal: float
    num_steps: int

    def __post_init__(self):
        if self.num_steps < 2:
            raise ValueError("q grid needs at least 2 steps")
        if self.nominal <= 0:
            raise ValueError("nominal must be positive")

    @property
    def step(self) -> float:
        return self.nominal / self.num_steps

    @property
    def values(self) -> np.ndarray:
        return np.linspace(0.0, self.nominal, self.num_steps + 1)

    def index_of(self, q: float) -> int:
        """Nearest grid index for an on-grid inventory value."""
        i = int(round(q / self.step))
        return min(max(i, 0), self.num_steps)
