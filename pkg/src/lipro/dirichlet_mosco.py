"""Graph Dirichlet forms and convergence tests across varying spaces.

A form is given by symmetric edge conductances ``w`` and a positive node
measure ``m``. Its raw energy is ``½ Σ_edges w_xy (u_x - u_y)²`` and its
generator is ``A = ½ M⁻¹ L_w`` so that ``E(u) = <Au, u>_m``. The normalised
convention divides both the energy and the inner product by ``Σ m``, which
leaves ``A`` unchanged.

Functions move between spaces along bijections: ``push(u) = u ∘ f⁻¹`` and
``pull(u) = u ∘ f``. A coarse grid is compared with a fine reference through a
bijection onto a matched subset of the fine nodes, each subset node carrying
the mass of its nearest-node cell.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from ._validation import TOL, check_positive
from .metric_core import FiniteMetricSpace, MetricMap, isometry_defect

MAX_DENSE = 2048


class _Spectrum(NamedTuple):
    values: np.ndarray
    vectors: np.ndarray
    sqrt_m: np.ndarray


class GraphDirichletForm:
    """Energy form on a finite weighted graph.

    Parameters
    ----------
    space : FiniteMetricSpace
    conductances : (n, n) array
        Symmetric, nonnegative, zero diagonal.
    node_measure : (n,) array
        Positive raw node masses.
    convention : {"normalized", "raw"}
        Which measure defines energies and L² norms.
    """

    def __init__(self, space, conductances, node_measure, convention="normalized"):
        W = np.array(conductances, dtype=float)
        m = np.array(node_measure, dtype=float)
        n = len(space)
        if W.shape != (n, n) or m.shape != (n,):
            raise ValueError("conductance and measure shapes do not match the space")
        if (W < 0).any() or not np.array_equal(W, W.T) or np.diag(W).any():
            raise ValueError("conductances must be symmetric, nonnegative, zero on the diagonal")
        if not (m > 0).all():
            raise ValueError("node measure must be positive")
        if convention not in ("normalized", "raw"):
            raise ValueError(f"unknown convention {convention!r}")
        W.setflags(write=False)
        m.setflags(write=False)
        self.space = space
        self.conductances = W
        self.raw_measure = m
        self.total = float(m.sum())
        self.convention = convention
        self._lock = threading.Lock()
        self._spectrum = None

    @classmethod
    def circle(cls, L, n, conductances=None, convention="normalized"):
        """Cycle form with ``w_e = κ_e / h`` and ``m_x = h``, ``h = L / n``.

        With unit ``κ`` the generator eigenvalues are
        ``(n² / L²)(1 - cos(2πk / n))``.
        """
        check_positive("L", L)
        kappa = np.ones(n) if conductances is None else np.asarray(conductances, float)
        h = L / n
        W = np.zeros((n, n))
        k = np.arange(n)
        W[k, (k + 1) % n] = kappa / h
        W[(k + 1) % n, k] = kappa / h
        return cls(FiniteMetricSpace.cycle(n, length=L), W, np.full(n, h), convention)

    @classmethod
    def from_model(cls, model, convention="normalized"):
        return cls.circle(model.L, model.n, model.conductances, convention)

    def __len__(self):
        return len(self.space)

    @property
    def measure(self):
        """Node measure of the active convention."""
        return self.raw_measure / self.total if self.convention == "normalized" else self.raw_measure

    @property
    def laplacian(self):
        W = self.conductances
        return np.diag(W.sum(axis=1)) - W

    @property
    def generator(self):
        return 0.5 * self.laplacian / self.raw_measure[:, None]

    def _check(self, u):
        u = np.asarray(u, dtype=float)
        if u.shape[0] != len(self):
            raise ValueError(f"function has {u.shape[0]} values for {len(self)} nodes")
        return u

    def inner(self, u, v):
        return float(np.sum(self.measure * self._check(u) * self._check(v)))

    def norm(self, u):
        return math.sqrt(max(self.inner(u, u), 0.0))

    def energy(self, u, convention=None):
        """``½ Σ_edges w (Δu)²``, divided by the total mass when normalised."""
        u = self._check(u)
        i, j = np.nonzero(np.triu(self.conductances))
        raw = 0.5 * float(np.sum(self.conductances[i, j] * (u[i] - u[j]) ** 2))
        conv = convention or self.convention
        return raw / self.total if conv == "normalized" else raw

    def spectrum(self):
        """Eigenpairs of ``M^-½ (½ L) M^-½``, computed once per form."""
        with self._lock:
            if self._spectrum is None:
                if len(self) > MAX_DENSE:
                    raise ValueError(f"dense spectral solves are limited to {MAX_DENSE} nodes")
                s = np.sqrt(self.raw_measure)
                S = 0.5 * self.laplacian / s[:, None] / s[None, :]
                vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
                self._spectrum = _Spectrum(np.clip(vals, 0.0, None), vecs, s)
            return self._spectrum

    def _apply(self, u, weights):
        sp = self.spectrum()
        u = self._check(u)
        coef = sp.vectors.T @ (sp.sqrt_m[:, None] * u.reshape(len(self), -1))
        out = (sp.vectors @ (weights[:, None] * coef)) / sp.sqrt_m[:, None]
        return out.reshape(u.shape)

    def resolvent_apply(self, alpha, u):
        """``G(α)u = (α + A)⁻¹ u``."""
        check_positive("alpha", alpha)
        return self._apply(u, 1.0 / (alpha + self.spectrum().values))

    def semigroup_apply(self, t, u):
        """``T(t)u = exp(-tA) u``."""
        if t < 0:
            raise ValueError("t must be nonnegative")
        if t == 0:
            return self._check(u).copy()
        return self._apply(u, np.exp(-t * self.spectrum().values))

    def transition_matrix(self, t):
        return self.semigroup_apply(t, np.eye(len(self)))


@dataclass(frozen=True, eq=False)
class TransferMap:
    """Bijection between the nodes of two forms, with its certified defect.

    ``subset`` lists the nodes of a larger reference that the target space
    was restricted to, when the transfer is onto a matched subset.
    """

    f: MetricMap
    defect: float = field(init=False)
    subset: tuple | None = None

    def __post_init__(self):
        eps = isometry_defect(self.f) if len(self.f.source) >= 2 else 0.0
        object.__setattr__(self, "defect", eps)
        if self.subset is not None:
            object.__setattr__(self, "subset", tuple(int(k) for k in self.subset))
            if len(self.subset) != len(self.f.target):
                raise ValueError("subset size does not match the target space")

    @classmethod
    def identity(cls, space):
        return cls(MetricMap.identity(space))


def push_function(tm, u):
    """``f_* u = u ∘ f⁻¹`` on the target."""
    u = np.asarray(u)
    if u.shape[0] != len(tm.f.source):
        raise ValueError("function does not live on the map's source")
    out = np.empty_like(u)
    out[tm.f.array] = u
    return out


def pull_function(tm, u):
    """``f^* u = u ∘ f`` on the source."""
    u = np.asarray(u)
    if u.shape[0] != len(tm.f.target):
        raise ValueError("function does not live on the map's target")
    return u[tm.f.array]


def lumped_measure(form, subset):
    """Mass of each nearest-node cell of ``subset`` under the form's measure.

    A node equidistant from several subset nodes splits its mass equally.
    """
    D = form.space.dist[:, list(subset)]
    near = D <= D.min(axis=1, keepdims=True) * (1 + 1e-12)
    share = near / near.sum(axis=1, keepdims=True)
    return form.measure @ share


def matched_subset_transfer(coarse, limit):
    """Transfer from ``coarse`` onto every ``N/n``-th node of ``limit``.

    Returns the transfer map (index map onto the restricted space) and the
    lumped measure on the subset. Both forms must be cycles whose node
    counts divide.
    """
    n, N = len(coarse), len(limit)
    if N % n:
        raise ValueError(f"limit size {N} is not a multiple of {n}")
    subset = np.arange(n) * (N // n)
    target = limit.space.restrict(subset)
    f = MetricMap(coarse.space, target, tuple(range(n)))
    return TransferMap(f, subset=tuple(subset)), lumped_measure(limit, subset)


def _target_view(tm, limit):
    """Subset indices and L² weights of the comparison space inside ``limit``."""
    if tm.subset is None:
        if tm.f.target != limit.space:
            raise ValueError("transfer map does not reach the limit space")
        return np.arange(len(limit)), limit.measure
    if tm.f.target != limit.space.restrict(list(tm.subset)):
        raise ValueError("transfer subset does not match the limit space")
    return np.asarray(tm.subset), lumped_measure(limit, tm.subset)


def _l2(weights, u):
    return math.sqrt(float(np.sum(weights * np.asarray(u) ** 2)))


class VolumeReport(NamedTuple):
    ok: bool
    max_log_ratio: float
    bound: float
    worst_node: int


def volume_comparison_check(tm, source_measure, target_measure, n):
    """Check ``e^{-nε} ≤ d(f_* m_src) / d m_tgt ≤ e^{nε}`` node by node.

    ``worst_node`` is the target node with the largest absolute log ratio.
    """
    src = np.asarray(source_measure, dtype=float)
    tgt = np.asarray(target_measure, dtype=float)
    if (src <= 0).any() or (tgt <= 0).any():
        bad = int(np.flatnonzero(tgt <= 0)[0]) if (tgt <= 0).any() else int(np.flatnonzero(src <= 0)[0])
        raise ValueError(f"zero or negative mass at node {bad}")
    pushed = push_function(tm, src)
    logs = np.abs(np.log(pushed / tgt))
    worst = int(np.argmax(logs))
    bound = n * tm.defect
    return VolumeReport(bool(logs[worst] <= bound + TOL), float(logs[worst]), bound, worst)


def push_semigroup_norm(form, tm, t, target_measure):
    """Operator norm of ``push ∘ T(t)`` from ``L²(form)`` to ``L²(target_measure)``."""
    T = form.transition_matrix(t)
    src = form.measure
    tgt = np.asarray(target_measure, dtype=float)
    P = np.zeros((len(tgt), len(src)))
    P[tm.f.array, np.arange(len(src))] = 1.0
    B = np.sqrt(tgt)[:, None] * (P @ T) / np.sqrt(src)[None, :]
    return float(np.linalg.norm(B, 2))


def _slope(resolutions, errors):
    errors = np.asarray(errors, dtype=float)
    keep = errors > 0
    if keep.sum() < 2:
        return 0.0
    return float(np.polyfit(np.log(np.asarray(resolutions, float)[keep]), np.log(errors[keep]), 1)[0])


def _strictly_decreasing(values):
    v = np.asarray(values, dtype=float)
    return bool((np.diff(v) < 0).all())


@dataclass(frozen=True)
class MoscoTable:
    """Per-resolution errors; ``errors[i, k]`` belongs to sequence entry ``i`` and function ``k``."""

    resolutions: list
    errors: np.ndarray
    slopes: list
    transfer: str

    @property
    def decreasing(self):
        return [_strictly_decreasing(self.errors[:, k]) for k in range(self.errors.shape[1])]


def _transfer_label(sequence):
    return "matched-subset transfer" if any(tm.subset is not None for _, tm in sequence) else "bijective transfer"


def mosco_resolvent_test(sequence, limit, alpha, test_functions):
    """``‖push G_i(α) pull u - G(α) u‖`` in the limit's L² for each pair and ``u``.

    ``sequence`` holds ``(form_i, transfer_i)``; the transfer goes onto the
    limit space or onto a matched subset of it, in which case norms use the
    lumped subset measure. ``slopes`` fit log-error against log-resolution.
    """
    check_positive("alpha", alpha)
    funcs = [np.asarray(u, dtype=float) for u in test_functions]
    limit_out = [limit.resolvent_apply(alpha, u) for u in funcs]
    errors = np.zeros((len(sequence), len(funcs)))
    for i, (form, tm) in enumerate(sequence):
        idx, w = _target_view(tm, limit)
        if tm.f.source != form.space:
            raise ValueError(f"transfer {i} does not start at its form's space")
        for k, (u, g) in enumerate(zip(funcs, limit_out)):
            v = push_function(tm, form.resolvent_apply(alpha, pull_function(tm, u[idx])))
            errors[i, k] = _l2(w, v - g[idx])
    res = [len(form) for form, _ in sequence]
    slopes = [_slope(res, errors[:, k]) for k in range(len(funcs))]
    return MoscoTable(res, errors, slopes, _transfer_label(sequence))


def _schedule(tol0, count):
    return tol0 * 2.0 ** -np.arange(1, count + 1)


def _precondition(sequence, limit, u_seq, u, tol0):
    norms = []
    for (form, tm), ui in zip(sequence, u_seq):
        idx, w = _target_view(tm, limit)
        norms.append(_l2(w, push_function(tm, np.asarray(ui, float)) - np.asarray(u, float)[idx]))
    tols = _schedule(tol0, len(norms))
    bad = [(i + 1, norms[i], tols[i]) for i in range(len(norms)) if norms[i] > tols[i]]
    if bad:
        detail = ", ".join(f"i={i}: {v:.3g} > {t:.3g}" for i, v, t in bad)
        raise ValueError(f"pushed functions do not converge in L² on schedule tol0*2^-i ({detail})")
    return norms, tols


@dataclass(frozen=True)
class LiminfReport:
    energies: np.ndarray
    limit_energy: float
    margins: np.ndarray
    tail_min: float
    violated: bool
    l2_gaps: list
    schedule: np.ndarray


def mosco_liminf_check(sequence, limit, u_seq, u, tol0=1.0, threshold=-1e-6):
    """Finite check of ``liminf E_i(u_i) >= E(u)``.

    The pushed ``u_i`` must approach ``u`` on the declared schedule
    ``tol0 * 2^-i`` (``i`` counted from 1), otherwise a ``ValueError``
    lists the offending entries. Margins are ``E_i(u_i) - E(u)``; the tail is
    the second half of the sequence and a violation is flagged when its
    minimum falls below ``threshold``. A discretisation shortfall larger than
    ``|threshold|`` registers as a violation.
    """
    if len(u_seq) != len(sequence):
        raise ValueError("need one function per sequence entry")
    norms, tols = _precondition(sequence, limit, u_seq, u, tol0)
    E = limit.energy(u)
    energies = np.array([form.energy(ui) for (form, _), ui in zip(sequence, u_seq)])
    margins = energies - E
    tail = margins[len(margins) // 2 :]
    tail_min = float(tail.min())
    return LiminfReport(energies, E, margins, tail_min, tail_min < threshold, norms, tols)


@dataclass(frozen=True)
class RecoveryReport:
    functions: list
    energies: np.ndarray
    limit_energy: float
    gaps: np.ndarray
    limsup_gap: float
    final_gap: float


def recovery_sequence(limit, sequence, u):
    """``u_i = pull(u)`` along each transfer, with the energy gaps it attains.

    ``limsup_gap`` is the largest ``E_i(u_i) - E(u)`` over the second half of
    the sequence; ``final_gap`` is ``|E_k(u_k) - E(u)|`` for the last entry.
    """
    u = np.asarray(u, dtype=float)
    funcs = []
    for form, tm in sequence:
        idx, _ = _target_view(tm, limit)
        funcs.append(pull_function(tm, u[idx]))
    E = limit.energy(u)
    energies = np.array([form.energy(ui) for (form, _), ui in zip(sequence, funcs)])
    gaps = energies - E
    tail = gaps[len(gaps) // 2 :]
    return RecoveryReport(funcs, energies, E, gaps, float(tail.max()), float(abs(gaps[-1])))


@dataclass(frozen=True, eq=False)
class InitialDensity:
    """Density of the initial law against the raw or normalised node measure."""

    values: np.ndarray
    reference: str = "normalized"

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if (v < 0).any():
            raise ValueError("density must be nonnegative")
        if self.reference not in ("normalized", "raw"):
            raise ValueError(f"unknown reference {self.reference!r}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def law(self, form):
        """Initial probabilities; checks the density integrates to 1 (1e-12)."""
        ref = form.raw_measure / form.total if self.reference == "normalized" else form.raw_measure
        if self.values.shape != ref.shape:
            raise ValueError("density size does not match the form")
        p = self.values * ref
        if abs(p.sum() - 1) > TOL:
            raise ValueError(f"density integrates to {p.sum()!r}, not 1")
        return p

    @classmethod
    def uniform(cls, n):
        return cls(np.ones(n))


def fdd_recursion(form, density, times, observables):
    """``E[g_1(X_{t_1}) ... g_k(X_{t_k})]`` for the process of ``form``.

    Backward recursion ``h^k = g_k``, ``h^{j-1} = g_{j-1} T(t_j - t_{j-1}) h^j``,
    then ``Σ_x μ(x) (T(t_1) h^1)(x)`` with ``μ`` the initial law.
    """
    times = [float(t) for t in times]
    if len(times) != len(observables) or not times:
        raise ValueError("need one observable per time")
    if times[0] < 0 or any(b <= a for a, b in zip(times, times[1:])):
        raise ValueError("times must be nonnegative and strictly increasing")
    h = np.asarray(observables[-1], dtype=float)
    for j in range(len(times) - 1, 0, -1):
        h = np.asarray(observables[j - 1], float) * form.semigroup_apply(times[j] - times[j - 1], h)
    mu = density.law(form)
    return float(np.dot(mu, form.semigroup_apply(times[0], h)))


@dataclass(frozen=True)
class FddTable:
    resolutions: list
    errors: np.ndarray
    density_norms: np.ndarray
    schedule: np.ndarray
    sc3_failures: list
    defects: list
    transfer: str

    @property
    def decreasing(self):
        return _strictly_decreasing(self.errors)


def fdd_convergence_test(sequence, limit, densities, density, times, observables, tol0=0.5, dim=1):
    """Finite-dimensional distributions of each form against the limit.

    Observables live on the limit nodes and are pulled to each form.
    ``density_norms[i]`` is the L² distance, in the comparison measure,
    between the density of the pushed initial law and ``density``; entries
    above ``tol0 * 2^-i`` are listed in ``sc3_failures``. Transfers whose
    volume band fails are refused.
    """
    if len(densities) != len(sequence):
        raise ValueError("need one density per sequence entry")
    ref = fdd_recursion(limit, density, times, observables)
    limit_law = density.law(limit)
    errors, norms, defects = [], [], []
    for i, ((form, tm), dens) in enumerate(zip(sequence, densities)):
        idx, w = _target_view(tm, limit)
        band = volume_comparison_check(tm, form.measure, w, dim)
        if not band.ok:
            raise ValueError(f"transfer {i} fails the volume band at node {band.worst_node}")
        obs = [pull_function(tm, np.asarray(g, float)[idx]) for g in observables]
        errors.append(abs(fdd_recursion(form, dens, times, obs) - ref))
        pushed = push_function(tm, dens.law(form)) / w
        limit_density = (limit_law / limit.measure)[idx]
        norms.append(_l2(w, pushed - limit_density))
        defects.append(tm.defect)
    tols = _schedule(tol0, len(norms))
    fails = [i + 1 for i in range(len(norms)) if norms[i] > tols[i]]
    return FddTable(
        [len(f) for f, _ in sequence],
        np.array(errors),
        np.array(norms),
        tols,
        fails,
        defects,
        _transfer_label(sequence),
    )
