"""Finite metric spaces, bijections between them, and the Lipschitz distance.

Every bijection between finite spaces is bi-Lipschitz, so the infimum over
bi-Lipschitz homeomorphisms is a minimum over permutations and can be found
exactly, by enumeration for small spaces and branch-and-bound beyond.
"""

from __future__ import annotations

import math
from fractions import Fraction
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import permutations
from typing import NamedTuple, Sequence

import numpy as np

from ._validation import TOL, check_distance_matrix, check_permutation


class FiniteMetricSpace:
    """A finite metric space given by labels and a distance matrix.

    The matrix is validated on construction (symmetry, zero diagonal,
    positivity off the diagonal, triangle inequality within 1e-12) and stored
    read-only; a space is immutable afterwards.
    """

    __slots__ = ("points", "dist")

    def __init__(self, dist, points=None):
        d = check_distance_matrix(dist)
        if points is None:
            points = range(d.shape[0])
        points = tuple(points)
        if len(points) != d.shape[0]:
            raise ValueError(f"{len(points)} labels for a {d.shape[0]}-point matrix")
        object.__setattr__(self, "dist", d)
        object.__setattr__(self, "points", points)

    def __setattr__(self, name, value):
        raise AttributeError("FiniteMetricSpace is immutable")

    def __len__(self):
        return len(self.points)

    def __eq__(self, other):
        if not isinstance(other, FiniteMetricSpace):
            return NotImplemented
        return self is other or (
            self.points == other.points and np.array_equal(self.dist, other.dist)
        )

    def __hash__(self):
        return hash((self.points, self.dist.tobytes()))

    def __repr__(self):
        return f"FiniteMetricSpace(n={len(self)}, diam={self.diameter:.4g})"

    @property
    def diameter(self):
        return float(self.dist.max()) if len(self) else 0.0

    @classmethod
    def cycle(cls, n, length=None):
        """Cycle graph C_n with shortest-path metric, edges of length `length / n`.

        With `length=None` every edge has unit length.
        """
        if n < 2:
            raise ValueError("a cycle needs at least two nodes")
        k = np.arange(n)
        hops = np.abs(k[:, None] - k[None, :])
        hops = np.minimum(hops, n - hops)
        edge = 1.0 if length is None else length / n
        return cls(hops * edge)

    def scaled(self, factor):
        return FiniteMetricSpace(self.dist * factor, self.points)

    def restrict(self, indices):
        idx = np.asarray(indices, dtype=int)
        return FiniteMetricSpace(self.dist[np.ix_(idx, idx)], [self.points[i] for i in idx])


@dataclass(frozen=True, eq=False)
class MetricMap:
    """A bijection ``source -> target``; point ``i`` goes to ``assignment[i]``."""

    source: FiniteMetricSpace
    target: FiniteMetricSpace
    assignment: tuple = field(default=())

    def __post_init__(self):
        if len(self.source) != len(self.target):
            raise ValueError(
                f"no bijection between spaces of sizes {len(self.source)} and {len(self.target)}"
            )
        object.__setattr__(
            self, "assignment", check_permutation(self.assignment, len(self.source))
        )

    def __call__(self, i):
        return self.assignment[i]

    def __eq__(self, other):
        if not isinstance(other, MetricMap):
            return NotImplemented
        return (
            self.assignment == other.assignment
            and self.source == other.source
            and self.target == other.target
        )

    def __hash__(self):
        return hash(self.assignment)

    @property
    def array(self):
        return np.asarray(self.assignment, dtype=int)

    @classmethod
    def identity(cls, space, target=None):
        return cls(space, space if target is None else target, tuple(range(len(space))))

    def inverse(self):
        inv = [0] * len(self.assignment)
        for i, j in enumerate(self.assignment):
            inv[j] = i
        return MetricMap(self.target, self.source, tuple(inv))

    def then(self, g):
        """Return ``g ∘ self``."""
        if g.source != self.target:
            raise ValueError("maps do not compose: target of the first is not the source of the second")
        return MetricMap(self.source, g.target, tuple(g.assignment[j] for j in self.assignment))

    @property
    def is_identity(self):
        return self.assignment == tuple(range(len(self.assignment)))


def compose(g, f):
    """``g ∘ f``."""
    return f.then(g)


def _pair_ratios(f):
    n = len(f.source)
    if n < 2:
        raise ValueError("dilation undefined below two points")
    iu, ju = np.triu_indices(n, 1)
    a = f.array
    return f.target.dist[a[iu], a[ju]] / f.source.dist[iu, ju]


def _defect(rmax, rmin):
    # dil f = rmax and dil f^-1 = 1/rmin; shared by every search path so that
    # exhaustive and branch-and-bound values tie bit-for-bit
    return abs(math.log(rmax)) + abs(math.log(rmin))


def dilation(f, exact=False):
    """Smallest Lipschitz constant of `f`: max of d(f x, f y) / d(x, y).

    With ``exact=True`` the ratios are formed as fractions of the stored
    distances, so identities such as ``dil f · dil f⁻¹ >= 1`` hold without
    rounding.
    """
    if not exact:
        return float(_pair_ratios(f).max())
    _pair_ratios(f)
    a = f.assignment
    n = len(a)
    return max(
        Fraction(float(f.target.dist[a[i], a[j]])) / Fraction(float(f.source.dist[i, j]))
        for i in range(n)
        for j in range(i + 1, n)
    )


def isometry_defect(f):
    """``|log dil f| + |log dil f^-1|``; `f` is an ε-isometry iff this is ≤ ε."""
    r = _pair_ratios(f)
    return _defect(float(r.max()), float(r.min()))


class LipschitzResult(NamedTuple):
    value: float
    witness: MetricMap | None
    method: str


def _exhaustive(X, Y):
    n = len(X)
    perms = np.array(list(permutations(range(n))), dtype=np.intp)
    iu, ju = np.triu_indices(n, 1)
    ratios = Y.dist[perms[:, iu], perms[:, ju]] / X.dist[iu, ju]
    rmax = ratios.max(axis=1).tolist()
    rmin = ratios.min(axis=1).tolist()
    best, best_k = math.inf, -1
    for k, (a, b) in enumerate(zip(rmax, rmin)):
        v = _defect(a, b)
        if v < best:
            best, best_k = v, k
    return best, tuple(int(j) for j in perms[best_k])


def _lower_bound(hi, lo):
    lhi, llo = math.log(hi), math.log(lo)
    return max(max(0.0, lhi) + max(0.0, -llo), lhi - llo)


def _branch(dx, dy, prefix):
    """Depth-first branch-and-bound below a fixed assignment prefix.

    Children are visited in increasing target index, so among equal values the
    lexicographically smallest complete assignment is the one retained.
    """
    n = len(dx)
    best = [math.inf, None]
    assign = list(prefix) + [-1] * (n - len(prefix))
    used = [False] * n
    for j in prefix:
        used[j] = True

    hi, lo = 0.0, math.inf
    for i in range(1, len(prefix)):
        for k in range(i):
            r = dy[assign[i]][assign[k]] / dx[i][k]
            hi = max(hi, r)
            lo = min(lo, r)
    if len(prefix) >= 2 and _lower_bound(hi, lo) >= best[0]:
        return best

    def recurse(i, hi, lo):
        if i == n:
            v = _defect(hi, lo)
            if v < best[0]:
                best[0], best[1] = v, tuple(assign)
            return
        row = dx[i]
        for j in range(n):
            if used[j]:
                continue
            h, l = hi, lo
            yrow = dy[j]
            for k in range(i):
                r = yrow[assign[k]] / row[k]
                if r > h:
                    h = r
                if r < l:
                    l = r
            if i >= 1 and _lower_bound(h, l) >= best[0]:
                continue
            assign[i] = j
            used[j] = True
            recurse(i + 1, h, l)
            used[j] = False
            assign[i] = -1

    recurse(len(prefix), hi, lo)
    return best


def _branch_job(args):
    return _branch(*args)


def _branch_and_bound(X, Y, jobs=1):
    dx = X.dist.tolist()
    dy = Y.dist.tolist()
    n = len(X)
    if jobs <= 1:
        v, a = _branch(dx, dy, ())
        return v, a
    tasks = [(dx, dy, (j,)) for j in range(n)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        results = list(pool.map(_branch_job, tasks))
    # reduction by (value, assignment) keeps the answer schedule-independent
    v, a = min((r for r in results if r[1] is not None), key=lambda r: (r[0], r[1]))
    return v, a


def lipschitz_distance(X, Y, jobs=1, exhaustive_limit=8):
    """Exact Lipschitz distance between two finite metric spaces.

    Parameters
    ----------
    X, Y : FiniteMetricSpace
    jobs : int
        Worker processes for the branch-and-bound search. The result does not
        depend on this value.
    exhaustive_limit : int
        Spaces with at most this many points are solved by enumerating all
        bijections; larger ones by branch-and-bound.

    Returns
    -------
    LipschitzResult
        ``(value, witness, method)``; ``value`` is ``inf`` and ``witness`` is
        ``None`` when the cardinalities differ.
    """
    if len(X) != len(Y):
        return LipschitzResult(math.inf, None, "cardinality")
    n = len(X)
    if n <= 1:
        return LipschitzResult(0.0, MetricMap.identity(X, Y), "trivial")
    if n <= exhaustive_limit:
        v, a = _exhaustive(X, Y)
        method = "exhaustive"
    else:
        v, a = _branch_and_bound(X, Y, jobs=jobs)
        method = "branch-and-bound"
    return LipschitzResult(v, MetricMap(X, Y, a), method)


def self_isometries(X, tol=0.0):
    """All distance-preserving permutations of `X`, in lexicographic order.

    Backtracking assigns points in index order; a candidate image must have the
    same sorted distance row and agree on every distance to already-assigned
    points. With the default ``tol=0`` every returned map has defect exactly 0.
    """
    n = len(X)
    d = X.dist
    rows = np.sort(d, axis=1)
    compatible = [
        [j for j in range(n) if np.allclose(rows[i], rows[j], rtol=0.0, atol=tol)]
        for i in range(n)
    ]
    found = []
    assign = [-1] * n
    used = [False] * n

    def recurse(i):
        if i == n:
            found.append(MetricMap(X, X, tuple(assign)))
            return
        for j in compatible[i]:
            if used[j]:
                continue
            if any(abs(d[i, k] - d[j, assign[k]]) > tol for k in range(i)):
                continue
            assign[i] = j
            used[j] = True
            recurse(i + 1)
            used[j] = False
        assign[i] = -1

    recurse(0)
    return found


@dataclass(frozen=True)
class CauchyInput:
    """A finite stretch of a Lipschitz-Cauchy sequence.

    ``links[i]`` maps ``spaces[i]`` onto ``spaces[i+1]`` with declared defect
    ``defects[i]``. ``tail_defect`` bounds the total defect of the links that
    were not supplied (0 means the sequence is taken as stationary from here).
    """

    spaces: Sequence[FiniteMetricSpace]
    links: Sequence[MetricMap] = ()
    defects: Sequence[float] = ()
    tail_defect: float = 0.0


@dataclass(frozen=True)
class CauchyLimit:
    space: FiniteMetricSpace
    maps: list
    eps: list
    measured_defects: list
    truncation: int
    tail_defect: float
    matrix_error_bound: float


def cauchy_limit(data: CauchyInput):
    """Limit space and coordinate maps of a Lipschitz-Cauchy sequence.

    Points of the limit are indexed by the points ``α`` of the first space.
    With ``x_α^j`` the image of ``α`` under the composed links, the limit
    distance ``r(α, β)`` is approximated by its value in the last supplied
    space. Since each ε-isometry changes every distance by a factor within
    ``[e^-ε, e^ε]``, the true limit lies within ``r · (e^τ - 1)`` of the
    approximation, ``τ`` being ``tail_defect``.

    The returned maps ``f_i : X_i -> X`` satisfy ``f_j ∘ f̃_ij = f_i`` exactly
    as permutations, and ``eps[i]`` is the declared tail sum of defects from
    link ``i`` on (plus ``tail_defect``).
    """
    spaces = list(data.spaces)
    links = list(data.links)
    defects = [float(e) for e in data.defects]
    if not spaces:
        raise ValueError("need at least one space")
    if len(links) != len(spaces) - 1 or len(defects) != len(links):
        raise ValueError("need one link and one declared defect between consecutive spaces")
    if data.tail_defect < 0 or any(e < 0 for e in defects):
        raise ValueError("defects must be nonnegative")
    n = len(spaces[0])
    for i, (space, link) in enumerate(zip(spaces, links)):
        if len(space) != n:
            raise ValueError("all spaces must have the same cardinality")
        if link.source != space or link.target != spaces[i + 1]:
            raise ValueError(f"link {i} does not map space {i} onto space {i + 1}")
        if n >= 2:
            actual = isometry_defect(link)
            if actual > defects[i] + TOL:
                raise ValueError(
                    f"link {i} has defect {actual:.6g}, above its declaration {defects[i]:.6g}"
                )

    # composed[i][alpha] is x_alpha^i, the image of alpha under links 0..i-1
    current = list(range(n))
    composed = [tuple(current)]
    for link in links:
        current = [link.assignment[x] for x in current]
        composed.append(tuple(current))

    last = spaces[-1]
    idx = np.asarray(composed[-1], dtype=int)
    limit = FiniteMetricSpace(last.dist[np.ix_(idx, idx)], spaces[0].points)

    maps = []
    for space, comp in zip(spaces, composed):
        coord = [0] * n
        for alpha, x in enumerate(comp):
            coord[x] = alpha
        maps.append(MetricMap(space, limit, tuple(coord)))

    tail = float(data.tail_defect)
    eps = [math.fsum(defects[i:]) + tail for i in range(len(spaces))]
    measured = [isometry_defect(m) if n >= 2 else 0.0 for m in maps]
    bound = limit.diameter * math.expm1(tail)
    return CauchyLimit(limit, maps, eps, measured, len(spaces), tail, bound)
