"""Finite-dimensional real coordinate space with block structure.

Points carry a block layout (contiguous coordinate ranges, one per block)
and support the standard inner product plus a probability-weighted norm
where block l is scaled by 1/p_l.  All values are immutable after
construction and every operation is a pure function, so everything here is
safe to share across threads.

The ambient space is deliberately finite-dimensional: weak and strong
convergence coincide there, which makes every convergence claim checkable
by a norm computation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

# Documented tolerances (not magic numbers): absolute tolerance on convex
# weight sums, and relative tolerance for algebraic identity checks.
WEIGHT_SUM_TOL = 1e-12
IDENTITY_RTOL = 1e-10


class DimensionMismatch(ValueError):
    """Operands live in different spaces or layouts."""


@dataclass(frozen=True)
class BlockLayout:
    """Partition of an n-dimensional space into m contiguous blocks."""

    block_sizes: tuple[int, ...]

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.block_sizes)
        if len(sizes) < 1:
            raise ValueError("layout needs at least one block")
        if any(s < 1 for s in sizes):
            raise ValueError("every block size must be >= 1")
        object.__setattr__(self, "block_sizes", sizes)

    @property
    def n_blocks(self) -> int:
        return len(self.block_sizes)

    @property
    def dim(self) -> int:
        return sum(self.block_sizes)

    @property
    def offsets(self) -> tuple[int, ...]:
        """Prefix sums: strictly increasing, ending at dim."""
        out, acc = [], 0
        for s in self.block_sizes:
            acc += s
            out.append(acc)
        return tuple(out)

    def slices(self) -> list[slice]:
        out, start = [], 0
        for s in self.block_sizes:
            out.append(slice(start, start + s))
            start += s
        return out

    def block(self, coords: np.ndarray, l: int) -> np.ndarray:
        return coords[self.slices()[l]]

    @classmethod
    def flat(cls, dim: int) -> "BlockLayout":
        """Single-block layout for unblocked problems."""
        return cls((int(dim),))

    @classmethod
    def scalar_blocks(cls, dim: int) -> "BlockLayout":
        """One block per coordinate."""
        return cls((1,) * int(dim))


@dataclass(frozen=True, eq=False)
class Point:
    """Immutable point: a coordinate vector plus its block layout."""

    coords: np.ndarray
    layout: BlockLayout

    def __post_init__(self):
        c = np.array(self.coords, dtype=float)
        if c.ndim != 1:
            raise ValueError("coords must be a flat vector")
        if c.shape[0] != self.layout.dim:
            raise DimensionMismatch(
                f"coords length {c.shape[0]} != layout dimension {self.layout.dim}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coords must be finite (no NaN/Inf)")
        c.flags.writeable = False
        object.__setattr__(self, "coords", c)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    def __array__(self, dtype=None, copy=None):
        if dtype is None:
            return self.coords
        return self.coords.astype(dtype)

    def block(self, l: int) -> np.ndarray:
        return self.layout.block(self.coords, l)


@dataclass(frozen=True)
class WeightedNorm:
    """Block norm |||y|||^2 = sum_l ||y_l||^2 / p_l with probabilities p_l."""

    probs: tuple[float, ...]

    def __post_init__(self):
        p = tuple(float(v) for v in self.probs)
        if len(p) < 1:
            raise ValueError("need at least one block probability")
        if any(not (0.0 < v <= 1.0) for v in p):
            raise ValueError("block probabilities must lie in (0, 1]")
        object.__setattr__(self, "probs", p)

    @property
    def n_blocks(self) -> int:
        return len(self.probs)

    @property
    def p0(self) -> float:
        return min(self.probs)

    def coordinate_weights(self, layout: BlockLayout) -> np.ndarray:
        """Per-coordinate 1/p_l vector for vectorized norm evaluation."""
        if layout.n_blocks != self.n_blocks:
            raise DimensionMismatch("layout block count != probability count")
        return np.repeat(1.0 / np.asarray(self.probs), layout.block_sizes)


def _same_layout(x: Point, y: Point):
    if x.layout != y.layout:
        raise DimensionMismatch("points have different layouts")


def inner(x: Point, y: Point) -> float:
    """Standard dot product of two points in the same space."""
    _same_layout(x, y)
    return float(np.dot(x.coords, y.coords))


def norm(x: Point) -> float:
    return float(np.linalg.norm(x.coords))


def weighted_inner(x: Point, y: Point, w: WeightedNorm) -> float:
    """Block-weighted inner product sum_l <x_l, y_l> / p_l."""
    _same_layout(x, y)
    cw = w.coordinate_weights(x.layout)
    return float(np.dot(x.coords * cw, y.coords))


def weighted_norm_sq(y: Point, w: WeightedNorm) -> float:
    """Squared block-weighted norm sum_l ||y_l||^2 / p_l."""
    cw = w.coordinate_weights(y.layout)
    return float(np.dot(y.coords * cw, y.coords))


def combine_rows(weights: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Weighted row combination; the single arithmetic path shared with the
    iteration engines so mixed states match convex_combine bitwise."""
    return weights @ coords


def convex_combine(weights: Sequence[float], points: Sequence[Point]) -> Point:
    """Convex combination sum_j w_j x_j of same-layout points."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or len(points) != w.shape[0]:
        raise ValueError("one weight per point required")
    if w.shape[0] == 0:
        raise ValueError("empty combination")
    if np.any(w < 0):
        raise ValueError("weights must be nonnegative")
    if abs(float(w.sum()) - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights must sum to 1 within {WEIGHT_SUM_TOL}")
    layout = points[0].layout
    for p in points[1:]:
        if p.layout != layout:
            raise DimensionMismatch("points have different layouts")
    stacked = np.stack([p.coords for p in points])
    return Point(combine_rows(w, stacked), layout)
