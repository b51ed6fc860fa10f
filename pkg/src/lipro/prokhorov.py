"""Prokhorov distance between finitely supported path measures.

The distance is computed through Strassen's coupling characterisation: for a
threshold ``d`` let ``W(d)`` be the largest mass a sub-coupling of ``P`` and
``Q`` can put on pairs at uniform distance ``<= d`` (a bipartite max-flow).
Then ``d_P = min over candidate d of max(d, 1 - W(d))``, the candidates being
the pairwise path distances. A subset-enumeration oracle is kept alongside.

Enlargements are closed (``<= δ``). The infimum is the same as with the open
enlargements of the classical definition; only attainment differs at ties.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple

import numpy as np

from ._validation import TOL
from .path_space import GridPathMeasure, path_distance_matrix, pushforward_measure

BRUTEFORCE_MAX_ATOMS = 12


@dataclass(frozen=True)
class Coupling:
    """Sub-coupling between the atoms of two measures.

    ``mass[i, j]`` is the mass moved from atom ``i`` of the first measure
    (``rows[i]``) to atom ``j`` of the second (``cols[j]``).
    """

    rows: np.ndarray
    cols: np.ndarray
    mass: np.ndarray
    distances: np.ndarray

    @property
    def total(self):
        return self.mass.sum()

    def max_distance(self):
        """Largest path distance carrying positive mass (0 for an empty coupling)."""
        support = self.mass.astype(float) > 0
        return float(self.distances[support].max()) if support.any() else 0.0


class ProkhorovResult(NamedTuple):
    value: float
    coupling: Coupling


def _check_pair(P, Q):
    if P.grid != Q.grid:
        raise ValueError(f"grid mismatch: {P.grid} vs {Q.grid}")
    if P.space != Q.space:
        raise ValueError("measures live on different spaces")


def _max_coupling(p, q, allowed, zero, slack):
    """Max-flow from atoms of P to atoms of Q along allowed pairs.

    Generic in the number type, so rational weights give exact flows.
    Returns the flow matrix as a dict keyed by ``(i, j)``.
    """
    nP, nQ = len(p), len(q)
    adj = [np.flatnonzero(allowed[i]).tolist() for i in range(nP)]
    out = [zero] * nP
    inn = [zero] * nQ
    flow = {}

    for i in range(nP):
        for j in adj[i]:
            amt = min(p[i] - out[i], q[j] - inn[j])
            if amt > slack:
                flow[i, j] = flow.get((i, j), zero) + amt
                out[i] += amt
                inn[j] += amt
            if p[i] - out[i] <= slack:
                break

    # users of each Q node, for walking backwards along flow edges
    users = [[] for _ in range(nQ)]
    for i, j in flow:
        users[j].append(i)

    while True:
        parent_q = [-1] * nQ
        parent_p = [-2] * nP
        queue = deque()
        for i in range(nP):
            if p[i] - out[i] > slack:
                parent_p[i] = -1
                queue.append(i)
        end = -1
        while queue and end < 0:
            i = queue.popleft()
            for j in adj[i]:
                if parent_q[j] != -1:
                    continue
                parent_q[j] = i
                if q[j] - inn[j] > slack:
                    end = j
                    break
                for k in users[j]:
                    if parent_p[k] == -2 and flow.get((k, j), zero) > slack:
                        parent_p[k] = j
                        queue.append(k)
        if end < 0:
            break
        # path: source -> i_0 -> j_0 => i_1 -> j_1 ... -> j_end -> sink, where
        # "=>" walks backwards along an existing flow edge (which is cancelled)
        forward, backward = [], []
        j = end
        bottleneck = q[j] - inn[j]
        while True:
            i = parent_q[j]
            forward.append((i, j))
            back = parent_p[i]
            if back == -1:
                bottleneck = min(bottleneck, p[i] - out[i])
                break
            backward.append((i, back))
            bottleneck = min(bottleneck, flow[i, back])
            j = back
        for i, j in forward:
            if (i, j) not in flow:
                users[j].append(i)
                flow[i, j] = zero
            flow[i, j] += bottleneck
        for edge in backward:
            flow[edge] -= bottleneck
        out[forward[-1][0]] += bottleneck
        inn[end] += bottleneck
    return flow


def _threshold_flow(p, q, D, d, zero, slack):
    flow = _max_coupling(p, q, D <= d, zero, slack)
    mass = sum(flow.values(), zero)
    return mass, flow


def prokhorov_distance(P, Q):
    """Prokhorov distance between two path measures on one space and grid.

    Returns
    -------
    ProkhorovResult
        ``value`` and a witness sub-coupling whose mass sits on pairs at
        distance ``<= value`` and totals at least ``1 - value``.
    """
    _check_pair(P, Q)
    exact = P.exact and Q.exact
    zero = Fraction(0) if exact else 0.0
    slack = zero if exact else TOL
    p = P.weights.tolist() if exact else P.float_weights.tolist()
    q = Q.weights.tolist() if exact else Q.float_weights.tolist()
    D = path_distance_matrix(P.space, P.paths, Q.paths)
    cands = np.unique(np.concatenate([[0.0], D.ravel()]))

    cache = {}

    def deficit(k):
        if k not in cache:
            mass, flow = _threshold_flow(p, q, D, cands[k], zero, slack)
            gap = 1 - mass
            if not exact and gap <= TOL:
                gap = 0.0
            cache[k] = (gap, flow)
        return cache[k][0]

    # smallest k with cands[k] >= 1 - W(cands[k]); both sides are monotone
    lo, hi = 0, len(cands) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cands[mid] >= deficit(mid):
            hi = mid
        else:
            lo = mid + 1
    k = lo
    deficit(k)
    value, witness_k = float(cands[k]), k
    if k > 0 and deficit(k - 1) < cands[k]:
        value, witness_k = deficit(k - 1), k - 1
    flow = cache[witness_k][1]
    mass = np.zeros(D.shape, dtype=object if exact else float)
    if exact:
        mass[:] = Fraction(0)
    for (i, j), amt in flow.items():
        mass[i, j] = amt
    coupling = Coupling(P.paths, Q.paths, mass, D)
    return ProkhorovResult(float(value), coupling)


def prokhorov_bruteforce(P, Q):
    """Prokhorov distance by enumerating every subset of the joint support.

    For each candidate δ the two defining inequalities are checked on all
    ``2^k`` subsets with closed enlargements. Candidates are the pairwise path
    distances and the worst mass gaps at those radii; the smallest feasible
    one is then refined by bisection to 1e-12.
    """
    _check_pair(P, Q)
    support = np.unique(np.concatenate([P.paths, Q.paths]), axis=0)
    k = len(support)
    if k > BRUTEFORCE_MAX_ATOMS:
        raise ValueError(f"joint support has {k} atoms, limit is {BRUTEFORCE_MAX_ATOMS}")
    index = {tuple(row): n for n, row in enumerate(support.tolist())}
    pw = np.zeros(k)
    qw = np.zeros(k)
    for row, w in zip(P.paths.tolist(), P.float_weights):
        pw[index[tuple(row)]] += w
    for row, w in zip(Q.paths.tolist(), Q.float_weights):
        qw[index[tuple(row)]] += w
    D = path_distance_matrix(P.space, support, support)
    members = ((np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1).astype(np.int64)
    PA = members @ pw
    QA = members @ qw

    def gap(delta):
        enlarged = (members @ (D <= delta).astype(np.int64)) > 0
        return max(float(np.max(PA - enlarged @ qw)), float(np.max(QA - enlarged @ pw)))

    def feasible(delta, slack=TOL):
        return gap(delta) <= delta + slack

    radii = np.unique(np.concatenate([[0.0], D.ravel()]))
    cands = sorted(set(radii.tolist()) | {max(gap(r), 0.0) for r in radii} | {1.0})
    lo, hi = 0, len(cands) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(cands[mid]):
            hi = mid
        else:
            lo = mid + 1
    best = cands[lo]
    below = cands[lo - 1] if lo > 0 else 0.0
    while best - below > 1e-12:
        mid = 0.5 * (best + below)
        # strict check: the slack would otherwise let δ creep below the answer
        if feasible(mid, slack=0.0):
            best = mid
        else:
            below = mid
    return float(best)


class InequalityCheck(NamedTuple):
    ok: bool
    clause: str | None
    excess: float
    forward: float
    backward: float
    threshold: float


def modified_inequality_check(P, Q, f, eps, delta, scale="exp"):
    """Check the four modified Prokhorov inequalities for ``f : X -> Y``.

    They hold iff ``d_P(Φ_f* P, Q) <= δ e^ε`` and ``d_P(Φ_{f^-1}* Q, P) <= δ e^ε``.
    ``scale="unit"`` replaces ``e^ε`` by 1, which is not stable under
    composition and exists for negative tests.

    ``clause`` names the first failing side (``"forward"`` or ``"backward"``)
    and ``excess`` by how much it exceeds the threshold.
    """
    if P.space != f.source or Q.space != f.target:
        raise ValueError("map does not go from P's space to Q's space")
    if scale not in ("exp", "unit"):
        raise ValueError(f"unknown scale {scale!r}")
    threshold = float(delta * (np.exp(eps) if scale == "exp" else 1.0))
    fwd = prokhorov_distance(pushforward_measure(f, P), Q).value
    bwd = prokhorov_distance(pushforward_measure(f.inverse(), Q), P).value
    for name, val in (("forward", fwd), ("backward", bwd)):
        if val > threshold + TOL:
            return InequalityCheck(False, name, val - threshold, fwd, bwd, threshold)
    return InequalityCheck(True, None, max(fwd, bwd) - threshold, fwd, bwd, threshold)
