"""Grid-time paths on a finite metric space and measures on them.

A continuous path into a finite space is constant, so path space is modelled
by paths observed on a uniform time grid, with the uniform metric taken as the
maximum over grid times. Pushforward along a map acts coordinatewise.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from ._validation import check_positive, check_weights
from .metric_core import FiniteMetricSpace, MetricMap


@dataclass(frozen=True)
class TimeGrid:
    """Times ``t_k = k T / m`` for ``k = 0..m``.

    ``m = 0`` is allowed and observes the initial position only.
    """

    T: float
    m: int

    def __post_init__(self):
        check_positive("T", self.T)
        if int(self.m) != self.m or self.m < 0:
            raise ValueError(f"steps must be a nonnegative integer, got {self.m!r}")
        object.__setattr__(self, "m", int(self.m))

    @property
    def times(self):
        return np.arange(self.m + 1) * (self.T / self.m) if self.m else np.zeros(1)

    @property
    def step(self):
        return self.T / self.m if self.m else 0.0

    def __len__(self):
        return self.m + 1


@dataclass(frozen=True, eq=False)
class GridPath:
    space: FiniteMetricSpace
    grid: TimeGrid
    values: tuple

    def __post_init__(self):
        v = tuple(int(x) for x in self.values)
        if len(v) != len(self.grid):
            raise ValueError(f"path has {len(v)} values for a grid of {len(self.grid)} times")
        if any(x < 0 or x >= len(self.space) for x in v):
            raise ValueError("path visits an index outside the ambient space")
        object.__setattr__(self, "values", v)

    def __eq__(self, other):
        if not isinstance(other, GridPath):
            return NotImplemented
        return self.values == other.values and self.grid == other.grid and self.space == other.space

    def __hash__(self):
        return hash(self.values)


def _check_same(a_space, a_grid, b_space, b_grid):
    if a_grid != b_grid:
        raise ValueError(f"grid mismatch: {a_grid} vs {b_grid}")
    if a_space != b_space:
        raise ValueError("paths live on different ambient spaces")


def uniform_metric(v, w):
    """``max_k d(v(t_k), w(t_k))``."""
    _check_same(v.space, v.grid, w.space, w.grid)
    d = v.space.dist
    return float(max(d[a, b] for a, b in zip(v.values, w.values)))


def constant_path(x, space, grid):
    if not 0 <= x < len(space):
        raise ValueError(f"point {x} not in space")
    return GridPath(space, grid, (x,) * len(grid))


def pushforward_path(f, v):
    if v.space != f.source:
        raise ValueError("path does not live on the map's source")
    return GridPath(f.target, v.grid, tuple(f.assignment[x] for x in v.values))


def set_distance(v, paths):
    paths = list(paths)
    if not paths:
        raise ValueError("distance to an empty set of paths")
    return min(uniform_metric(v, w) for w in paths)


def path_distance_matrix(space, a, b):
    """Uniform-metric distances between rows of two index arrays."""
    a = np.asarray(a, dtype=np.intp)
    b = np.asarray(b, dtype=np.intp)
    out = np.zeros((len(a), len(b)))
    for k in range(a.shape[1]):
        np.maximum(out, space.dist[a[:, k][:, None], b[:, k][None, :]], out=out)
    return out


class GridPathMeasure:
    """Finitely supported probability measure on grid paths.

    Atoms are stored as an integer array of shape ``(atoms, m + 1)``. Weights
    given as ``Fraction``/``int`` are kept exact; otherwise they are floats
    summing to one within 1e-12. Repeated paths are merged on construction.
    """

    def __init__(self, space, grid, paths, weights):
        self.space = space
        self.grid = grid
        arr = np.asarray(paths, dtype=np.intp)
        if arr.ndim == 1 and len(grid) == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[1] != len(grid):
            raise ValueError(f"paths must have shape (atoms, {len(grid)}), got {arr.shape}")
        if arr.size and (arr.min() < 0 or arr.max() >= len(space)):
            raise ValueError("path visits an index outside the ambient space")
        w = check_weights(weights)
        if len(w) != len(arr):
            raise ValueError(f"{len(w)} weights for {len(arr)} atoms")
        self.paths, self.weights = _merge(arr, w)
        self.paths.setflags(write=False)

    @classmethod
    def dirac(cls, path):
        return cls(path.space, path.grid, [path.values], [Fraction(1)])

    @classmethod
    def empirical(cls, space, grid, paths):
        arr = np.asarray(paths, dtype=np.intp)
        uniq, counts = np.unique(arr, axis=0, return_counts=True)
        return cls(space, grid, uniq, counts / counts.sum())

    @property
    def exact(self):
        return self.weights.dtype == object

    @property
    def float_weights(self):
        return self.weights.astype(float)

    def __len__(self):
        return len(self.paths)

    @property
    def atoms(self):
        for row, w in zip(self.paths, self.weights):
            yield GridPath(self.space, self.grid, tuple(row.tolist())), w

    def __eq__(self, other):
        """Equality as atom sets after merging (weights compared exactly)."""
        if not isinstance(other, GridPathMeasure):
            return NotImplemented
        if self.grid != other.grid or self.space != other.space or len(self) != len(other):
            return False
        a = dict(zip(map(tuple, self.paths.tolist()), self.weights.tolist()))
        b = dict(zip(map(tuple, other.paths.tolist()), other.weights.tolist()))
        return a == b

    __hash__ = None

    def __repr__(self):
        return f"GridPathMeasure(atoms={len(self)}, m={self.grid.m}, exact={self.exact})"


def _merge(paths, weights):
    uniq, inverse = np.unique(paths, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    if len(uniq) == len(paths):
        order = np.lexsort(paths.T[::-1])
        return paths[order].copy(), weights[order]
    if weights.dtype == object:
        merged = [Fraction(0)] * len(uniq)
        for k, w in zip(inverse, weights):
            merged[k] += w
        return uniq, np.array(merged, dtype=object)
    return uniq, np.bincount(inverse, weights=weights, minlength=len(uniq))


def pushforward_measure(f, P):
    """``Φ_f* P``: map every atom coordinatewise, keep weights, merge equal paths."""
    if P.space != f.source:
        raise ValueError("measure does not live on the map's source")
    return GridPathMeasure(f.target, P.grid, f.array[P.paths], P.weights)


def enlargement(space, support, subset_mask, radius):
    """Closed enlargement ``{v in support : d_C(v, A) <= radius}`` of a subset of a support."""
    D = path_distance_matrix(space, support, support)
    return (D[:, np.asarray(subset_mask, dtype=bool)] <= radius).any(axis=1)
