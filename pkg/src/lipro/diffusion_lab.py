"""Brownian and elliptic diffusions on discretised circles and flat tori.

Brownian paths are simulated with exact wrapped-Gaussian increments of the
continuous position, and each observation is snapped to the nearest node. The
elliptic family is a continuous-time random walk on a weighted cycle, sampled
exactly at the grid times through the matrix exponential of its generator.

The tightness side holds the dominating family
``φ(ξ, r) = C′ ξ^-(1+ν) exp(-r² / 4ξ)``, its calibration against the exact
circle kernel, and the modulus-of-continuity estimates it controls.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.linalg import expm
from statsmodels.stats.proportion import proportion_confint

from ._validation import check_positive
from .metric_core import FiniteMetricSpace
from .path_space import GridPathMeasure, TimeGrid

CHUNK = 4096
SERIES_CUTOFF = 1e-16


@dataclass(frozen=True)
class ManifoldFamilyParams:
    """Constants describing a family of manifolds.

    Parameters
    ----------
    n : int
        Dimension, 1 or 2.
    K : float
        Sectional curvature bound (0 for the flat families here).
    V, Vprime : float
        Lower and upper volume bounds.
    D : float
        Diameter bound.
    Lambda : float
        Ellipticity constant, at least 1.
    """

    n: int
    K: float
    V: float
    D: float
    Vprime: float
    Lambda: float = 1.0

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"only dimensions 1 and 2 are supported, got {self.n}")
        check_positive("D", self.D)
        check_positive("V", self.V)
        if self.V > self.Vprime:
            raise ValueError(f"V={self.V} exceeds V'={self.Vprime}")
        if self.Lambda < 1:
            raise ValueError(f"Lambda must be >= 1, got {self.Lambda}")
        if self.K < 0:
            raise ValueError("curvature bound must be nonnegative")

    @classmethod
    def circle(cls, L, Lambda=1.0):
        return cls(n=1, K=0.0, V=L, D=L / 2, Vprime=L, Lambda=Lambda)

    @classmethod
    def torus(cls, L1, L2, Lambda=1.0):
        area = L1 * L2
        return cls(n=2, K=0.0, V=area, D=0.5 * math.hypot(L1, L2), Vprime=area, Lambda=Lambda)


@dataclass(frozen=True)
class HeatKernelBound:
    """``φ(ξ, r) = C′ ξ^-(1+ν) exp(-r² / 4ξ)`` valid for ``0 < ξ <= tau``."""

    Cprime: float
    nu: float
    tau: float = math.inf

    def __post_init__(self):
        if self.nu <= 2:
            raise ValueError(f"nu must exceed 2, got {self.nu}")
        check_positive("Cprime", self.Cprime, strict=False)
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    def phi(self, xi, r):
        xi = np.asarray(xi, dtype=float)
        r = np.asarray(r, dtype=float)
        return self.Cprime * xi ** (-(1 + self.nu)) * np.exp(-(r**2) / (4 * xi))

    def ridge(self, r):
        """Maximiser in ``ξ`` of ``φ(ξ, r)``."""
        return r**2 / (4 * (1 + self.nu))

    def sup(self, lam, eps, D=math.inf):
        """``sup φ(ξ, r)`` over ``ξ in (0, lam]`` and ``eps < r <= D``.

        ``φ`` decreases in ``r``, so the sup sits at ``r = eps`` (not attained)
        and then at ``ξ = min(lam, ridge(eps))``. Empty ranges give 0.
        """
        if eps >= D or lam <= 0:
            return 0.0
        if eps <= 0:
            return math.inf
        return float(self.phi(min(lam, self.ridge(eps)), eps))


def _snap(pos, h, n):
    """Nearest node on a periodic lattice of spacing ``h``; ties go to the lower index."""
    scaled = pos / h
    k = np.floor(scaled).astype(np.intp)
    frac = scaled - k
    lo = k % n
    hi = (k + 1) % n
    return np.where(frac > 0.5, hi, np.where(frac < 0.5, lo, np.minimum(lo, hi)))


@dataclass(frozen=True, eq=False)
class CircleModel:
    """Circle of circumference ``L`` discretised by ``n`` equally spaced nodes.

    ``conductances[k]`` is the relative weight of the edge ``(k, k+1 mod n)``;
    every entry must lie in ``[1/Lambda, Lambda]``.
    """

    L: float
    n: int
    conductances: np.ndarray = None
    Lambda: float = 1.0
    space: FiniteMetricSpace = field(init=False, repr=False)

    def __post_init__(self):
        check_positive("L", self.L)
        if self.n < 3:
            raise ValueError("a circle model needs at least 3 nodes")
        if self.Lambda < 1:
            raise ValueError(f"Lambda must be >= 1, got {self.Lambda}")
        c = np.ones(self.n) if self.conductances is None else np.asarray(self.conductances, float)
        if c.shape != (self.n,):
            raise ValueError(f"need {self.n} edge conductances, got shape {c.shape}")
        lo, hi = 1 / self.Lambda, self.Lambda
        bad = np.flatnonzero((c < lo * (1 - 1e-12)) | (c > hi * (1 + 1e-12)))
        if bad.size:
            raise ValueError(f"edge {bad[0]} conductance {c[bad[0]]} outside [{lo}, {hi}]")
        c.setflags(write=False)
        object.__setattr__(self, "conductances", c)
        object.__setattr__(self, "space", FiniteMetricSpace.cycle(self.n, length=self.L))

    dim = 1

    @property
    def h(self):
        return self.L / self.n

    @property
    def positions(self):
        return np.arange(self.n) * self.h

    @property
    def node_measure(self):
        return np.full(self.n, self.h)

    @property
    def node_probs(self):
        return np.full(self.n, 1.0 / self.n)

    def generator(self):
        """Matrix of ``A = ½ M⁻¹ L_w`` with ``w_e = κ_e / h`` and ``M = h I``.

        Rows of ``-A`` are jump rates; with unit conductances the walk has
        variance rate 1, matching Brownian motion.
        """
        n, h = self.n, self.h
        w = self.conductances / h
        A = np.zeros((n, n))
        k = np.arange(n)
        nxt = (k + 1) % n
        A[k, nxt] -= w
        A[nxt, k] -= w
        A[k, k] += w + np.roll(w, 1)
        return 0.5 * A / h

    def _snap(self, pos):
        return _snap(pos[..., 0], self.h, self.n)

    def _start(self, nodes):
        return self.positions[nodes][:, None]

    def _wrap(self, pos):
        return np.mod(pos, self.L)


@dataclass(frozen=True, eq=False)
class TorusModel:
    """Flat torus ``[0, L1) x [0, L2)`` on an ``n1 x n2`` grid with the flat metric.

    Node ``(i, j)`` has index ``i * n2 + j``.
    """

    L1: float
    L2: float
    n1: int
    n2: int
    space: FiniteMetricSpace = field(init=False, repr=False)

    def __post_init__(self):
        check_positive("L1", self.L1)
        check_positive("L2", self.L2)
        if min(self.n1, self.n2) < 2:
            raise ValueError("each torus direction needs at least 2 nodes")
        i, j = np.divmod(np.arange(self.n1 * self.n2), self.n2)
        di = np.abs(i[:, None] - i[None, :])
        dj = np.abs(j[:, None] - j[None, :])
        dx = np.minimum(di, self.n1 - di) * (self.L1 / self.n1)
        dy = np.minimum(dj, self.n2 - dj) * (self.L2 / self.n2)
        object.__setattr__(self, "space", FiniteMetricSpace(np.hypot(dx, dy)))

    dim = 2

    @property
    def steps(self):
        return np.array([self.L1 / self.n1, self.L2 / self.n2])

    @property
    def positions(self):
        i, j = np.divmod(np.arange(self.n1 * self.n2), self.n2)
        return np.stack([i, j], axis=1) * self.steps

    @property
    def node_probs(self):
        return np.full(self.n1 * self.n2, 1.0 / (self.n1 * self.n2))

    def _snap(self, pos):
        h = self.steps
        return _snap(pos[..., 0], h[0], self.n1) * self.n2 + _snap(pos[..., 1], h[1], self.n2)

    def _start(self, nodes):
        return self.positions[nodes]

    def _wrap(self, pos):
        return np.mod(pos, np.array([self.L1, self.L2]))


def wrapped_heat_kernel(t, x, y, L):
    """Heat kernel of ``½ d²/dx²`` on the circle of circumference ``L``.

    Evaluates ``Σ_m (2πt)^-½ exp(-(d + mL)² / 2t)`` for the displacement ``d``
    reduced to ``[-L/2, L/2]``, with the image sum truncated symmetrically
    once terms drop below 1e-16 of the leading one. Broadcasts over ``x``,
    ``y`` and is exactly symmetric in them.
    """
    if t <= 0:
        raise ValueError(f"t must be positive, got {t}")
    d = np.asarray(y, dtype=float) - np.asarray(x, dtype=float)
    r = np.abs(d - L * np.round(d / L))
    reach = math.sqrt(2 * t * math.log(1 / SERIES_CUTOFF))
    M = int(math.ceil(reach / L + 0.5)) + 1
    total = np.zeros_like(r)
    for m in range(-M, M + 1):
        total += np.exp(-((r + m * L) ** 2) / (2 * t))
    return total / math.sqrt(2 * math.pi * t)


def torus_heat_kernel(t, x, y, L1, L2):
    """Product of the two circle kernels; ``x``, ``y`` have a trailing axis of size 2."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return wrapped_heat_kernel(t, x[..., 0], y[..., 0], L1) * wrapped_heat_kernel(
        t, x[..., 1], y[..., 1], L2
    )


def model_kernel(model, t, x, y):
    if isinstance(model, TorusModel):
        return torus_heat_kernel(t, x, y, model.L1, model.L2)
    return wrapped_heat_kernel(t, x, y, model.L)


@dataclass(frozen=True, eq=False)
class PathSample:
    """Raw simulation output.

    ``indices`` has shape ``(count, m + 1)``. ``positions`` holds the
    continuous states, shape ``(count, m + 1, dim)``, or is ``None`` for
    walks that live on the nodes.
    """

    space: FiniteMetricSpace
    grid: TimeGrid
    indices: np.ndarray
    positions: np.ndarray | None = None

    def __len__(self):
        return len(self.indices)

    def measure(self):
        """Empirical law with weights ``1 / count`` (repeated paths merged)."""
        return GridPathMeasure.empirical(self.space, self.grid, self.indices)


def _initial_nodes(model, initial, rng, size):
    if initial is None:
        probs = model.node_probs
    elif np.isscalar(initial):
        return np.full(size, int(initial), dtype=np.intp)
    else:
        probs = np.asarray(initial, dtype=float)
        if probs.shape != model.node_probs.shape or abs(probs.sum() - 1) > 1e-12 or (probs < 0).any():
            raise ValueError("initial law must be a probability vector over the nodes")
    return rng.choice(len(probs), size=size, p=probs)


def _chunked(count, seed, jobs, work):
    """Run ``work(rng, size)`` over fixed chunks with per-chunk substreams.

    Chunk ``c`` always draws from ``default_rng([seed, c])``, so the output
    does not depend on ``jobs``.
    """
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    sizes = [min(CHUNK, count - s) for s in range(0, count, CHUNK)]
    tasks = [(np.random.default_rng([seed, c]), size) for c, size in enumerate(sizes)]
    if jobs == 1 or len(tasks) == 1:
        parts = [work(rng, size) for rng, size in tasks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(lambda a: work(*a), tasks))
    return parts


def sample_bm_paths(model, grid, count, seed, initial=None, jobs=1):
    """Brownian motion snapped to the nodes of ``model`` at the grid times.

    Parameters
    ----------
    model : CircleModel or TorusModel
    grid : TimeGrid
    count : int
    seed : int
    initial : None, int or array, optional
        Start law: the normalised node measure (default), a fixed node or a
        probability vector. The continuous state starts at the chosen node.
    jobs : int
        Thread count; results are identical for every value.

    Returns
    -------
    PathSample
    """

    def work(rng, size):
        nodes = _initial_nodes(model, initial, rng, size)
        pos = np.empty((size, grid.m + 1, model.dim))
        pos[:, 0] = model._start(nodes)
        if grid.m:
            steps = rng.standard_normal((size, grid.m, model.dim)) * math.sqrt(grid.step)
            pos[:, 1:] = pos[:, :1] + np.cumsum(steps, axis=1)
        pos = model._wrap(pos)
        idx = model._snap(pos)
        idx[:, 0] = nodes
        return idx, pos

    parts = _chunked(count, seed, jobs, work)
    idx = np.concatenate([p[0] for p in parts])
    pos = np.concatenate([p[1] for p in parts])
    return PathSample(model.space, grid, idx, pos)


def sample_elliptic_paths(model, grid, count, seed, initial=None, jobs=1):
    """Continuous-time random walk on the weighted cycle, observed on ``grid``.

    Transitions over one grid step use ``expm(-step A)`` exactly, so there is
    no time-discretisation error.
    """
    if not isinstance(model, CircleModel):
        raise TypeError("elliptic sampling is implemented for circle models")
    P = expm(-grid.step * model.generator()) if grid.m else np.eye(model.n)
    cum = np.cumsum(np.clip(P, 0.0, None), axis=1)
    cum /= cum[:, -1:]

    def work(rng, size):
        idx = np.empty((size, grid.m + 1), dtype=np.intp)
        idx[:, 0] = _initial_nodes(model, initial, rng, size)
        u = rng.random((size, grid.m))
        for k in range(grid.m):
            rows = cum[idx[:, k]]
            idx[:, k + 1] = np.minimum((rows < u[:, k, None]).sum(axis=1), model.n - 1)
        return idx

    parts = _chunked(count, seed, jobs, work)
    return PathSample(model.space, grid, np.concatenate(parts))


def sample_coupled_bm(source, target, grid, count, seed, jobs=1):
    """Brownian paths on two circles with the same node count, driven by common noise.

    Both runs start at the same node index and share every Gaussian
    increment, so each marginal is the snapped Brownian law of its own circle
    while the pair is tightly coupled under the natural node map.
    """
    if not (isinstance(source, CircleModel) and isinstance(target, CircleModel)):
        raise TypeError("coupled sampling is implemented for circle models")
    if source.n != target.n:
        raise ValueError("coupled circles need the same number of nodes")

    def work(rng, size):
        nodes = _initial_nodes(source, None, rng, size)
        walk = np.zeros((size, grid.m + 1))
        if grid.m:
            steps = rng.standard_normal((size, grid.m)) * math.sqrt(grid.step)
            walk[:, 1:] = np.cumsum(steps, axis=1)
        out = []
        for model in (source, target):
            pos = np.mod(model.positions[nodes][:, None] + walk, model.L)
            idx = _snap(pos, model.h, model.n)
            idx[:, 0] = nodes
            out.append(idx)
        return out

    parts = _chunked(count, seed, jobs, work)
    return (
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
    )


class TightnessTable(NamedTuple):
    lambdas: np.ndarray
    values: np.ndarray
    ridge: float


def phi_tightness_limit(bound, eps, lambdas=None, D=math.inf, floor=1e-12):
    """``sup_{r > eps, ξ in (0, λ]} φ(ξ, r)`` along a decreasing ``λ`` grid.

    Above the ridge ``ξ* = eps² / 4(1+ν)`` the supremum does not depend on
    ``λ``. The default grid therefore starts at ``min(tau, ξ*)`` and halves
    until the value drops below ``floor``.
    """
    check_positive("eps", eps)
    ridge = bound.ridge(eps)
    if lambdas is None:
        lam = min(bound.tau, ridge)
        grid = [lam]
        while bound.sup(grid[-1], eps, D) >= floor and len(grid) < 200:
            grid.append(grid[-1] / 2)
        lambdas = grid
    lambdas = np.asarray(lambdas, dtype=float)
    values = np.array([bound.sup(lam, eps, D) for lam in lambdas])
    return TightnessTable(lambdas, values, float(ridge))


class DominationReport(NamedTuple):
    passed: bool
    max_violation: float
    min_Cprime: float
    worst: tuple


def _node_distances(model):
    """Distances from node 0 (both families are vertex transitive)."""
    return model.space.dist[0], model.positions[0], model.positions


def kernel_domination_check(model, bound, times):
    """Compare the exact kernel with ``φ(t, d(x, y))`` on a ``(t, node)`` grid.

    Returns the pass flag, the largest ``p - φ`` and the smallest ``C′`` at
    the bound's ``ν`` for which the check would pass. A relative slack of
    1e-12 absorbs rounding at the calibrated constant.
    """
    times = np.asarray(times, dtype=float)
    if times.size == 0 or (times <= 0).any():
        raise ValueError("times must be positive")
    if (times > bound.tau).any():
        raise ValueError(f"times exceed the bound's horizon tau={bound.tau}")
    r, x0, pts = _node_distances(model)
    T = times[:, None]
    if isinstance(model, TorusModel):
        p = np.stack([torus_heat_kernel(t, x0, pts, model.L1, model.L2) for t in times])
    else:
        p = np.stack([wrapped_heat_kernel(t, x0, pts, model.L) for t in times])
    shape = T ** (-(1 + bound.nu)) * np.exp(-(r[None, :] ** 2) / (4 * T))
    phi = bound.Cprime * shape
    excess = p - phi * (1 + 1e-12)
    k = np.unravel_index(np.argmax(excess), excess.shape)
    need = float(np.max(p / shape))
    return DominationReport(
        bool(excess.max() <= 0), float(excess[k]), need, (float(times[k[0]]), int(k[1]))
    )


def calibrate_bound(model, nu, times, tau=None):
    """Smallest-``C′`` bound at fixed ``ν`` dominating the kernel on ``times``."""
    times = np.asarray(times, dtype=float)
    tau = float(times.max()) if tau is None else tau
    probe = HeatKernelBound(1.0, nu, tau)
    return HeatKernelBound(kernel_domination_check(model, probe, times).min_Cprime, nu, tau)


class ModulusEstimate(NamedTuple):
    estimate: float
    low: float
    high: float
    exceed: int
    count: int


def _grid_index(grid, t):
    if grid.m == 0:
        if abs(t) > 1e-9:
            raise ValueError("a grid with m = 0 only has time 0")
        return 0
    k = t / grid.step
    j = int(round(k))
    if abs(k - j) > 1e-9 or j < 0 or j > grid.m:
        raise ValueError(f"time {t} is not on the grid")
    return j


def empirical_modulus(sample, t, lam, gamma, confidence=0.95):
    """Fraction of paths with ``max_{t <= s <= t+λ} d(v(s), v(t)) > γ``.

    The window must start and end on grid times. The interval is the Wilson
    score interval at ``confidence``.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    k0 = _grid_index(sample.grid, t)
    k1 = _grid_index(sample.grid, t + lam)
    idx = np.asarray(sample.indices)
    dist = sample.space.dist
    window = idx[:, k0 : k1 + 1]
    disp = dist[window, window[:, :1]].max(axis=1)
    exceed = int((disp > gamma).sum())
    n = len(idx)
    low, high = proportion_confint(exceed, n, alpha=1 - confidence, method="wilson")
    return ModulusEstimate(exceed / n, float(low), float(high), exceed, n)


def modulus_bound(bound, params, lam, gamma):
    """``2 V′ sup_{ξ in (0, λ], r > γ/2} φ(ξ, r)`` with ``r`` clipped to the diameter."""
    if lam > bound.tau:
        raise ValueError(f"lambda={lam} exceeds the horizon tau={bound.tau}")
    check_positive("gamma", gamma)
    return 2 * params.Vprime * bound.sup(lam, gamma / 2, params.D)
