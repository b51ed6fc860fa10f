"""(ε, δ)-isomorphism certificates and the Lipschitz-Prokhorov distance.

For a fixed bijection ``f`` the best certificate has a closed form: with
``ε_f`` the isometry defect of ``f`` and ``c`` the larger of the two Prokhorov
distances after pushing forward, the feasible set is ``ε >= ε_f``,
``δ >= c e^-ε`` and ``ε + c e^-ε`` is minimised at ``ε = max(ε_f, log c)``.
The distance itself is then a minimum over bijections.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import permutations
from typing import NamedTuple, Sequence

import numpy as np
from statsmodels.stats.proportion import proportion_confint

from ._validation import TOL
from .metric_core import FiniteMetricSpace, MetricMap, isometry_defect, self_isometries
from .path_space import GridPathMeasure, TimeGrid, pushforward_measure
from .prokhorov import modified_inequality_check, prokhorov_distance

EXACT_MAX_POINTS = 8


@dataclass(frozen=True, eq=False)
class PairInstance:
    """A finite metric space together with a path law on it."""

    space: FiniteMetricSpace
    measure: GridPathMeasure

    def __post_init__(self):
        if self.measure.space != self.space:
            raise ValueError("the measure does not live on this space")


@dataclass(frozen=True)
class IsoCertificate:
    f: MetricMap
    eps: float
    delta: float

    def __post_init__(self):
        if self.eps < 0 or self.delta < 0:
            raise ValueError("eps and delta must be nonnegative")

    @property
    def value(self):
        return self.eps + self.delta


class VerifyReport(NamedTuple):
    accepted: bool
    defect: float
    forward: float
    backward: float
    threshold: float
    eps_slack: float
    forward_slack: float
    backward_slack: float


def _defect(f):
    return isometry_defect(f) if len(f.source) >= 2 else 0.0


def _check_maps(f, A, B):
    if f.source != A.space or f.target != B.space:
        raise ValueError("certificate map does not go from the first pair's space to the second's")


def certificate_verify(c, A, B, scale="exp"):
    """Check that ``c`` is an (ε, δ)-isomorphism from ``A`` to ``B``.

    Slacks are ``bound - actual`` for each clause; the certificate is accepted
    when all are ``>= -1e-12``.
    """
    _check_maps(c.f, A, B)
    defect = _defect(c.f)
    chk = modified_inequality_check(A.measure, B.measure, c.f, c.eps, c.delta, scale=scale)
    eps_slack = c.eps - defect
    accepted = chk.ok and eps_slack >= -TOL
    return VerifyReport(
        accepted,
        defect,
        chk.forward,
        chk.backward,
        chk.threshold,
        eps_slack,
        chk.threshold - chk.forward,
        chk.threshold - chk.backward,
    )


class CertificateValue(NamedTuple):
    value: float
    eps: float
    delta: float
    defect: float
    prokhorov: float

    def certificate(self, f):
        return IsoCertificate(f, self.eps, self.delta)


def _closed_form(defect, c):
    if c <= math.exp(defect):
        delta = c * math.exp(-defect)
        return CertificateValue(defect + delta, defect, delta, defect, c)
    eps = math.log(c)
    return CertificateValue(eps + 1.0, eps, 1.0, defect, c)


def certificate_value(f, A, B):
    """Smallest ``ε + δ`` over certificates that use the bijection ``f``."""
    _check_maps(f, A, B)
    defect = _defect(f)
    fwd = prokhorov_distance(pushforward_measure(f, A.measure), B.measure).value
    bwd = prokhorov_distance(pushforward_measure(f.inverse(), B.measure), A.measure).value
    return _closed_form(defect, max(fwd, bwd))


class DLPResult(NamedTuple):
    value: float
    certificate: IsoCertificate | None
    mode: str


def dlp_exact(A, B, max_points=EXACT_MAX_POINTS):
    """Exact Lipschitz-Prokhorov distance by search over all bijections.

    Bijections are visited by increasing isometry defect; since the value of a
    bijection is at least its defect the search stops once the defect exceeds
    the incumbent. Ties are broken by the lexicographically smallest
    assignment.
    """
    if len(A.space) != len(B.space):
        return DLPResult(math.inf, None, "exact")
    n = len(A.space)
    if n > max_points:
        raise ValueError(f"exact search limited to {max_points} points, got {n}; use dlp_upper_bound")
    if n == 1:
        f = MetricMap.identity(A.space, B.space)
        cv = certificate_value(f, A, B)
        return DLPResult(cv.value, cv.certificate(f), "exact")
    candidates = sorted(
        (_defect(MetricMap(A.space, B.space, p)), p) for p in permutations(range(n))
    )
    best = (math.inf, None, None)
    for defect, p in candidates:
        if defect > best[0]:
            break
        f = MetricMap(A.space, B.space, p)
        cv = certificate_value(f, A, B)
        if (cv.value, p) < (best[0], best[1] or (n,)):
            best = (cv.value, p, cv.certificate(f))
    return DLPResult(best[0], best[2], "exact")


def dlp_upper_bound(A, B, maps=None):
    """Certified upper bound from a restricted family of bijections.

    Every user-supplied map (default: the index map) is composed with every
    self-isometry of the target, and the best certificate is kept.
    """
    if len(A.space) != len(B.space):
        return DLPResult(math.inf, None, "upper-bound")
    base = list(maps) if maps else [MetricMap(A.space, B.space, tuple(range(len(A.space))))]
    autos = self_isometries(B.space)
    best = (math.inf, None, None)
    for f in base:
        for g in autos:
            h = f.then(g)
            cv = certificate_value(h, A, B)
            if (cv.value, h.assignment) < (best[0], best[1] or (len(A.space),)):
                best = (cv.value, h.assignment, cv.certificate(h))
    return DLPResult(best[0], best[2], "upper-bound")


class SameSpaceResult(NamedTuple):
    value: float
    witness: MetricMap
    prokhorov: float


def dlp_same_space(A, B):
    """``min over self-isometries f of d_P(Φ_f* P, Q)`` on a shared space.

    Never exceeds the plain Prokhorov distance, since the identity is one of
    the isometries.
    """
    if A.space != B.space:
        raise ValueError("pairs must share one space")
    best = None
    for f in self_isometries(A.space):
        v = prokhorov_distance(pushforward_measure(f, A.measure), B.measure).value
        if best is None or v < best[0]:
            best = (v, f)
    dp = prokhorov_distance(A.measure, B.measure).value
    if best[0] > dp + TOL:
        raise RuntimeError("isometry-restricted distance exceeds the Prokhorov distance")
    return SameSpaceResult(best[0], best[1], dp)


def certificate_compose(c1, c2):
    """``(f2 ∘ f1, ε1 + ε2, δ1 + δ2)`` from certificates ``A -> B`` and ``B -> C``."""
    if c1.f.target != c2.f.source:
        raise ValueError("certificates do not compose")
    return IsoCertificate(c1.f.then(c2.f), c1.eps + c2.eps, c1.delta + c2.delta)


@dataclass(frozen=True, eq=False)
class PairedSample:
    """Coupled path draws: row ``k`` of both arrays comes from one joint draw.

    The empirical joint law is a coupling of the two empirical path laws, so
    it bounds their Prokhorov distance from above without solving a flow.
    """

    source_space: FiniteMetricSpace
    target_space: FiniteMetricSpace
    grid: TimeGrid
    source_paths: np.ndarray
    target_paths: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.source_paths)
        b = np.asarray(self.target_paths)
        if a.shape != b.shape or a.ndim != 2 or a.shape[1] != len(self.grid):
            raise ValueError("paired paths must have equal shapes (count, m + 1)")

    def __len__(self):
        return len(self.source_paths)


def _rowwise_uniform(space, a, b):
    return space.dist[a, b].max(axis=1)


def ky_fan_bound(distances, confidence=None):
    """``min over δ of max(δ, P(d > δ))`` for a sample of coupled distances.

    With ``confidence`` set, ``P(d > δ)`` is replaced by the upper end of its
    two-sided Wilson interval.
    """
    d = np.sort(np.asarray(distances, dtype=float))
    n = len(d)
    cands = np.unique(np.concatenate([[0.0], d]))
    exceed = n - np.searchsorted(d, cands, side="right")
    if confidence is None:
        prob = exceed / n
    else:
        prob = proportion_confint(exceed, n, alpha=1 - confidence, method="wilson")[1]
    return float(min(1.0, np.min(np.maximum(cands, prob))))


def coupled_certificate_value(f, sample, confidence=0.95):
    """Certificate value for ``f`` with both Prokhorov terms bounded by coupling.

    ``prokhorov`` in the result is the larger Ky Fan bound; with
    ``confidence=None`` it is an exact upper bound for the empirical laws.
    """
    if f.source != sample.source_space or f.target != sample.target_space:
        raise ValueError("map does not match the paired sample's spaces")
    a = np.asarray(sample.source_paths)
    b = np.asarray(sample.target_paths)
    fwd = _rowwise_uniform(f.target, f.array[a], b)
    bwd = _rowwise_uniform(f.source, a, f.inverse().array[b])
    c = max(ky_fan_bound(fwd, confidence), ky_fan_bound(bwd, confidence))
    return _closed_form(_defect(f), c)


class ConvergenceRow(NamedTuple):
    i: int
    eps: float
    prokhorov: float
    value: float


@dataclass(frozen=True)
class ConvergenceReport:
    rows: list
    slope: float
    non_monotone: list
    mode: str

    @property
    def values(self):
        return [r.value for r in self.rows]

    @property
    def decreasing(self):
        return not self.non_monotone


def convergence_report(instances, target, maps, confidence=0.95):
    """Certified values along a sequence approaching a target pair.

    ``instances`` are either :class:`PairInstance` objects (exact Prokhorov
    terms; ``target`` is one pair or one per instance) or
    :class:`PairedSample` objects (coupling bounds at the given confidence;
    ``target`` is ignored). ``slope`` fits ``log value`` against the index and
    ``non_monotone`` lists indices whose value fails to drop below the
    previous one.
    """
    instances = list(instances)
    maps = list(maps)
    if len(maps) != len(instances):
        raise ValueError("need one candidate map per instance")
    paired = all(isinstance(x, PairedSample) for x in instances)
    rows = []
    for i, (inst, f) in enumerate(zip(instances, maps), start=1):
        if paired:
            cv = coupled_certificate_value(f, inst, confidence)
        else:
            tgt = target[i - 1] if isinstance(target, Sequence) else target
            cv = certificate_value(f, inst, tgt)
        rows.append(ConvergenceRow(i, cv.eps, cv.prokhorov, cv.value))
    values = np.array([r.value for r in rows])
    flagged = [rows[k].i for k in range(1, len(rows)) if not values[k] < values[k - 1]]
    positive = values > 0
    slope = 0.0
    if positive.sum() >= 2:
        idx = np.array([r.i for r in rows], dtype=float)[positive]
        slope = float(np.polyfit(idx, np.log(values[positive]), 1)[0])
    mode = "coupling-upper-bound" if paired else "exact-per-map"
    return ConvergenceReport(rows, slope, flagged, mode)
