"""Boxes, cube partitions and finite configurations.

A box is anchored at the origin, ``[0, L_1) x ... x [0, L_d)``, and cubes are
indexed from the lower corner.  A cube with index ``r`` is the half-open set
``{x : a r_i <= x_i < a (r_i + 1)}``, so a point lying exactly on the upper face
of a cube belongs to the next one.
"""

from __future__ import annotations

import itertools
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

DIVISIBILITY_RTOL = 1e-12


@dataclass(frozen=True)
class Box:
    sides: tuple[float, ...]

    def __post_init__(self):
        sides = tuple(float(s) for s in np.atleast_1d(self.sides))
        if not sides:
            raise ValueError("box needs at least one side")
        if any(not np.isfinite(s) or s <= 0 for s in sides):
            raise ValueError(f"box sides must be positive and finite, got {sides}")
        object.__setattr__(self, "sides", sides)

    @classmethod
    def cube(cls, length: float, d: int = 1) -> "Box":
        return cls((float(length),) * d)

    @property
    def dimension(self) -> int:
        return len(self.sides)

    @property
    def volume(self) -> float:
        return float(np.prod(self.sides))

    def contains(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        return np.all((pts >= 0.0) & (pts < np.asarray(self.sides)), axis=1)


class Configuration:
    """A finite set of distinct points in R^d, stored as an ``(n, d)`` array.

    The stored order is incidental; every quantity computed from a
    configuration is invariant under permutation of its points.
    """

    __slots__ = ("_points",)

    def __init__(self, points=(), d: int | None = None):
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            pts = np.zeros((0, d if d is not None else 1))
        elif pts.ndim == 1:
            # a flat list is a list of 1-d points unless d says otherwise
            pts = pts.reshape(-1, 1) if d in (None, 1) else pts.reshape(-1, d)
        if pts.ndim != 2:
            raise ValueError("points must be an (n, d) array")
        if d is not None and pts.shape[1] != d:
            raise ValueError(f"expected dimension {d}, got {pts.shape[1]}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if len(pts) > 1 and len(np.unique(pts, axis=0)) != len(pts):
            raise ValueError("configuration points must be pairwise distinct")
        pts = pts.copy()
        pts.setflags(write=False)
        self._points = pts

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def dimension(self) -> int:
        return self._points.shape[1]

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self):
        return iter(self._points)

    def __repr__(self) -> str:
        return f"Configuration({self._points.tolist()})"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Configuration):
            return NotImplemented
        a = self._points[np.lexsort(self._points.T[::-1])]
        b = other._points[np.lexsort(other._points.T[::-1])]
        return a.shape == b.shape and bool(np.all(a == b))

    def __hash__(self):
        a = self._points[np.lexsort(self._points.T[::-1])]
        return hash(a.tobytes())

    def union(self, other: "Configuration") -> "Configuration":
        if len(self) == 0:
            return other
        if len(other) == 0:
            return self
        return Configuration(np.vstack([self._points, other._points]))

    def intersects(self, other: "Configuration") -> bool:
        if len(self) == 0 or len(other) == 0:
            return False
        eq = np.all(self._points[:, None, :] == other._points[None, :, :], axis=-1)
        return bool(eq.any())


def as_configuration(config, d: int | None = None) -> Configuration:
    if isinstance(config, Configuration):
        if d is not None and len(config) and config.dimension != d:
            raise ValueError(f"expected dimension {d}, got {config.dimension}")
        return config
    return Configuration(config, d=d)


@dataclass(frozen=True)
class CubePartition:
    """The grid of cubes with edge ``a`` tiling a box."""

    box: Box
    a: float
    shape: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        a = float(self.a)
        if not np.isfinite(a) or a <= 0:
            raise ValueError(f"cube edge must be positive, got {a}")
        shape = []
        for axis, side in enumerate(self.box.sides):
            ratio = side / a
            k = int(round(ratio))
            if k < 1 or abs(ratio - k) > DIVISIBILITY_RTOL * max(1.0, ratio):
                raise ValueError(
                    f"box side {side} on axis {axis} is not an integer multiple of a={a}")
            shape.append(k)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "shape", tuple(shape))

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def n_cubes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cube_volume(self) -> float:
        return self.a ** self.dimension

    def cube_index(self, point) -> tuple[int, ...]:
        pt = np.asarray(point, dtype=float).reshape(self.dimension)
        if not self.box.contains(pt)[0]:
            raise ValueError(f"point {pt.tolist()} lies outside the box")
        return tuple(int(i) for i in self._raw_index(pt[None, :])[0])

    def _raw_index(self, pts: np.ndarray) -> np.ndarray:
        idx = np.floor(pts / self.a).astype(np.int64)
        # x < L can still round to L/a in floating point
        return np.minimum(np.maximum(idx, 0), np.asarray(self.shape) - 1)

    def flat_index(self, pts: np.ndarray) -> np.ndarray:
        """Flat cube index for an array of points of shape ``(..., d)``."""
        pts = np.asarray(pts, dtype=float)
        lead = pts.shape[:-1]
        raw = self._raw_index(pts.reshape(-1, self.dimension))
        flat = np.ravel_multi_index(tuple(raw.T), self.shape) if raw.size else np.zeros(0, np.int64)
        return np.asarray(flat, dtype=np.int64).reshape(lead)

    def unravel(self, flat) -> tuple[int, ...]:
        return tuple(int(i) for i in np.unravel_index(int(flat), self.shape))

    def cube_lower_corners(self) -> np.ndarray:
        """Lower corners of all cubes, ordered by flat index, shape ``(N, d)``."""
        grids = np.indices(self.shape).reshape(self.dimension, -1).T
        return grids * self.a

    def indices(self) -> Iterable[tuple[int, ...]]:
        return itertools.product(*(range(k) for k in self.shape))


def build_partition(box: Box, a: float) -> CubePartition:
    return CubePartition(box, a)


def compatible(a_coarse: float, a_fine: float) -> bool:
    """True when ``a_coarse / a_fine`` is a positive integer."""
    if a_fine <= 0 or a_coarse <= 0:
        return False
    ratio = a_coarse / a_fine
    k = round(ratio)
    return k >= 1 and abs(ratio - k) <= DIVISIBILITY_RTOL * max(1.0, ratio)


def check_compatible_sequence(a_list: Sequence[float]) -> None:
    """Reject edge lists that are not strictly decreasing and pairwise compatible."""
    for prev, nxt in zip(a_list, a_list[1:]):
        if not nxt < prev:
            raise ValueError(f"edges must be strictly decreasing: {prev} then {nxt}")
        if not compatible(prev, nxt):
            raise ValueError(f"edges {prev} and {nxt} are not compatible ({prev}/{nxt} is not an integer)")


def _checked_points(config, part: CubePartition) -> np.ndarray:
    conf = as_configuration(config, part.dimension)
    pts = conf.points
    if len(pts):
        inside = part.box.contains(pts)
        if not inside.all():
            bad = pts[~inside][0]
            raise ValueError(f"point {bad.tolist()} lies outside the box")
    return pts


def occupancy(config, part: CubePartition) -> dict[tuple[int, ...], int]:
    """Number of points in each occupied cube; empty cubes are absent."""
    pts = _checked_points(config, part)
    if not len(pts):
        return {}
    raw = part._raw_index(pts)
    return dict(Counter(tuple(int(i) for i in row) for row in raw))


def is_dilute(config, part: CubePartition) -> bool:
    """True iff no cube holds more than one point."""
    return all(c <= 1 for c in occupancy(config, part).values())


def dense_cubes(config, part: CubePartition) -> frozenset[tuple[int, ...]]:
    """Cubes holding at least two points."""
    return frozenset(k for k, c in occupancy(config, part).items() if c >= 2)


def chi_minus(config, part: CubePartition, cube: tuple[int, ...]) -> int:
    return int(occupancy(config, part).get(tuple(cube), 0) <= 1)


def chi_plus(config, part: CubePartition, cube: tuple[int, ...]) -> int:
    return 1 - chi_minus(config, part, cube)


def pattern_indicator(config, part: CubePartition, dense_set) -> int:
    """Product of chi_plus over ``dense_set`` and chi_minus over every other cube.

    Summed over all subsets of cubes this equals one for every configuration.
    """
    return int(dense_cubes(config, part) == frozenset(tuple(c) for c in dense_set))


# Batched helpers used by the integrators -------------------------------------

def batch_max_occupancy(flat: np.ndarray) -> np.ndarray:
    """Largest cube occupancy per row of an ``(M, n)`` array of flat indices."""
    M, n = flat.shape
    if n == 0:
        return np.zeros(M, dtype=np.int64)
    s = np.sort(flat, axis=1)
    best = np.ones(M, dtype=np.int64)
    run = np.ones(M, dtype=np.int64)
    for k in range(1, n):
        same = s[:, k] == s[:, k - 1]
        run = np.where(same, run + 1, 1)
        best = np.maximum(best, run)
    return best


def batch_dilute(flat: np.ndarray) -> np.ndarray:
    return batch_max_occupancy(flat) <= 1


def batch_dense_mask(flat: np.ndarray, n_cubes: int) -> np.ndarray:
    """Boolean ``(M, n_cubes)`` mask of cubes holding two or more points."""
    M, n = flat.shape
    counts = np.zeros((M, n_cubes), dtype=np.int64)
    rows = np.repeat(np.arange(M), n)
    np.add.at(counts, (rows, flat.ravel()), 1)
    return counts >= 2
