import math
from fractions import Fraction
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import random_measure, random_space
from lipro.lp_metric import (
    IsoCertificate,
    PairInstance,
    PairedSample,
    certificate_compose,
    certificate_value,
    certificate_verify,
    convergence_report,
    coupled_certificate_value,
    dlp_exact,
    dlp_same_space,
    dlp_upper_bound,
    ky_fan_bound,
)
from lipro.metric_core import FiniteMetricSpace, MetricMap
from lipro.path_space import GridPathMeasure, TimeGrid, constant_path
from lipro.prokhorov import prokhorov_distance

SWAP_VALUE = 2 * math.log(4 / 3)


def dirac_pair(space, x, grid):
    return PairInstance(space, GridPathMeasure.dirac(constant_path(x, space, grid)))


def rotation(C, k):
    n = len(C)
    return MetricMap(C, C, tuple((i + k) % n for i in range(n)))


def two_atom(space, grid, x, y, w):
    if w == 0:
        return dirac_pair(space, x, grid)
    paths = [[x] * len(grid), [y] * len(grid)]
    return PairInstance(space, GridPathMeasure(space, grid, paths, [1 - w, w]))


class TestVerify:
    def test_identity(self, three_point, grid2):
        A = dirac_pair(three_point, 0, grid2)
        assert certificate_verify(IsoCertificate(MetricMap.identity(three_point), 0, 0), A, A).accepted

    def test_rotation_on_cycle(self, grid2):
        C = FiniteMetricSpace.cycle(12)
        A, B = dirac_pair(C, 0, grid2), dirac_pair(C, 3, grid2)
        report = certificate_verify(IsoCertificate(rotation(C, 3), 0, 0), A, B)
        assert report.accepted and report.forward == 0 and report.backward == 0
        # plain d_P is as large as it gets, even though the certificate is (0, 0)
        assert prokhorov_distance(A.measure, B.measure).value == 1.0

    def test_identity_too_small_delta(self, grid2):
        C = FiniteMetricSpace.cycle(12, length=1.2)
        A, B = dirac_pair(C, 0, grid2), dirac_pair(C, 3, grid2)
        ident = MetricMap.identity(C)
        assert certificate_verify(IsoCertificate(ident, 0, 0.3), A, B).accepted
        report = certificate_verify(IsoCertificate(ident, 0, 0.1), A, B)
        assert not report.accepted
        assert report.forward_slack == pytest.approx(-0.2)

    def test_understated_eps(self, three_point, grid2):
        swap = MetricMap(three_point, three_point, (1, 0, 2))
        A, B = dirac_pair(three_point, 0, grid2), dirac_pair(three_point, 1, grid2)
        report = certificate_verify(IsoCertificate(swap, 0.5, 0), A, B)
        assert not report.accepted and report.eps_slack < 0

    def test_space_mismatch(self, three_point, grid2):
        A = dirac_pair(three_point, 0, grid2)
        B = dirac_pair(FiniteMetricSpace.cycle(3), 0, grid2)
        with pytest.raises(ValueError):
            certificate_verify(IsoCertificate(MetricMap.identity(three_point), 0, 0), A, B)

    def test_negative_parameters_rejected(self, three_point):
        with pytest.raises(ValueError):
            IsoCertificate(MetricMap.identity(three_point), -0.1, 0)


class TestCertificateValue:
    def test_identity(self, three_point, grid2):
        A = dirac_pair(three_point, 0, grid2)
        cv = certificate_value(MetricMap.identity(three_point), A, A)
        assert (cv.value, cv.eps, cv.delta) == (0.0, 0.0, 0.0)

    def test_swap(self, three_point, grid2):
        A, B = dirac_pair(three_point, 0, grid2), dirac_pair(three_point, 1, grid2)
        cv = certificate_value(MetricMap(three_point, three_point, (1, 0, 2)), A, B)
        assert cv.value == pytest.approx(SWAP_VALUE, abs=1e-15)
        assert cv.prokhorov == 0.0

    def test_identity_on_swap_instance(self, three_point, grid2):
        A, B = dirac_pair(three_point, 0, grid2), dirac_pair(three_point, 1, grid2)
        cv = certificate_value(MetricMap.identity(three_point), A, B)
        assert cv.value == 1.0 and cv.prokhorov == 1.0

    def test_large_c_branch(self):
        # c > e^{ε_f} only happens with a defect below ln c, and c ≤ 1, so use
        # the closed form through a scaled copy where the defect is zero and c = 1
        X = FiniteMetricSpace([[0, 3], [3, 0]])
        g = TimeGrid(1.0, 0)
        A, B = dirac_pair(X, 0, g), dirac_pair(X, 1, g)
        cv = certificate_value(MetricMap.identity(X), A, B)
        # c = 1 = e^0, the boundary: both branches agree at 1 + ln 1 = 0 + 1
        assert cv.value == 1.0

    @given(st.tuples(st.integers(2, 4), st.integers(0, 2**32 - 1)))
    def test_returned_certificate_verifies(self, data):
        n, seed = data
        rng = np.random.default_rng(seed)
        g = TimeGrid(1.0, 1)
        X, Y = random_space(rng, n, 0.1, 1.5), random_space(rng, n, 0.1, 1.5)
        A = PairInstance(X, random_measure(rng, X, g, 3))
        B = PairInstance(Y, random_measure(rng, Y, g, 3))
        f = MetricMap(X, Y, tuple(rng.permutation(n)))
        cv = certificate_value(f, A, B)
        assert certificate_verify(cv.certificate(f), A, B).accepted
        assert cv.value == pytest.approx(cv.eps + cv.delta)

    def test_minimises_over_eps(self):
        # brute-force scan of ε + c e^{-ε} over ε ≥ ε_f against the closed form
        from lipro.lp_metric import _closed_form

        for defect in [0.0, 0.05, 0.3, 1.0]:
            for c in [0.0, 0.2, 0.9, 1.0]:
                grid = np.linspace(defect, defect + 5, 200001)
                scan = np.min(grid + np.minimum(1.0, c * np.exp(-grid)))
                assert _closed_form(defect, c).value == pytest.approx(scan, abs=1e-6)


class TestDlpExact:
    def test_self(self, three_point, grid2):
        A = dirac_pair(three_point, 2, grid2)
        assert dlp_exact(A, A).value == 0.0

    def test_swap_instance(self, three_point, grid2):
        A, B = dirac_pair(three_point, 0, grid2), dirac_pair(three_point, 1, grid2)
        res = dlp_exact(A, B)
        assert res.value == pytest.approx(SWAP_VALUE, abs=1e-15)
        assert res.certificate.f.assignment == (1, 0, 2)
        assert res.mode == "exact"

    def test_oracle(self, three_point, grid2):
        A, B = dirac_pair(three_point, 0, grid2), dirac_pair(three_point, 1, grid2)
        brute = min(
            certificate_value(MetricMap(three_point, three_point, p), A, B).value for p in permutations(range(3))
        )
        assert dlp_exact(A, B).value == brute

    def test_c6_rotation(self, grid2):
        C = FiniteMetricSpace.cycle(6)
        res = dlp_exact(dirac_pair(C, 0, grid2), dirac_pair(C, 4, grid2))
        assert res.value == 0.0
        assert res.certificate.f.assignment[0] == 4

    def test_cardinality_mismatch(self, three_point, grid2):
        res = dlp_exact(dirac_pair(three_point, 0, grid2), dirac_pair(FiniteMetricSpace.cycle(4), 0, grid2))
        assert res.value == math.inf and res.certificate is None

    def test_size_limit(self, grid2):
        C = FiniteMetricSpace.cycle(9)
        with pytest.raises(ValueError, match="limited"):
            dlp_exact(dirac_pair(C, 0, grid2), dirac_pair(C, 1, grid2))

    def test_singleton(self):
        X = FiniteMetricSpace([[0.0]])
        g = TimeGrid(1.0, 1)
        assert dlp_exact(dirac_pair(X, 0, g), dirac_pair(X, 0, g)).value == 0.0


class TestUpperBound:
    def test_cycle_rotation_found(self, grid2):
        C = FiniteMetricSpace.cycle(12)
        res = dlp_upper_bound(dirac_pair(C, 0, grid2), dirac_pair(C, 5, grid2))
        assert res.value == 0.0 and res.mode == "upper-bound"

    def test_matches_exact_on_cycle(self, grid2):
        C = FiniteMetricSpace.cycle(6)
        rng = np.random.default_rng(11)
        A = PairInstance(C, random_measure(rng, C, grid2, 3))
        B = PairInstance(C, random_measure(rng, C, grid2, 3))
        assert dlp_upper_bound(A, B).value >= dlp_exact(A, B).value - 1e-12


class TestSameSpace:
    def test_equal(self, three_point, grid2):
        A = dirac_pair(three_point, 0, grid2)
        assert dlp_same_space(A, A).value == 0.0

    def test_cycle(self, grid2):
        C = FiniteMetricSpace.cycle(12)
        res = dlp_same_space(dirac_pair(C, 0, grid2), dirac_pair(C, 3, grid2))
        assert res.value == 0.0 and res.prokhorov == 1.0

    def test_trivial_group(self, three_point, grid2):
        res = dlp_same_space(dirac_pair(three_point, 0, grid2), dirac_pair(three_point, 1, grid2))
        assert res.value == 1.0 and res.witness.is_identity

    def test_requires_one_space(self, three_point, grid2):
        with pytest.raises(ValueError):
            dlp_same_space(dirac_pair(three_point, 0, grid2), dirac_pair(FiniteMetricSpace.cycle(3), 0, grid2))


def scaled_triple(eps1, delta1, eps2, delta2):
    """Three pairs with similarity links: scaling by c has defect 2 ln c.

    Atoms sit 2 apart (always beyond the Prokhorov cap), so moving mass ``w``
    onto the far atom costs exactly ``w``.
    """
    g = TimeGrid(1.0, 1)
    X = FiniteMetricSpace([[0, 2], [2, 0]])
    Y = X.scaled(math.exp(eps1 / 2))
    Z = Y.scaled(math.exp(eps2 / 2))
    A = two_atom(X, g, 0, 1, 0.0)
    B = two_atom(Y, g, 0, 1, delta1)
    C = two_atom(Z, g, 0, 1, delta1 + delta2)
    c1 = IsoCertificate(MetricMap(X, Y, (0, 1)), eps1, delta1)
    c2 = IsoCertificate(MetricMap(Y, Z, (0, 1)), eps2, delta2)
    return A, B, C, c1, c2


class TestCompose:
    def test_identity_unit(self, three_point, grid2):
        A, B = dirac_pair(three_point, 0, grid2), dirac_pair(three_point, 1, grid2)
        c = IsoCertificate(MetricMap(three_point, three_point, (1, 0, 2)), SWAP_VALUE, 0.0)
        out = certificate_compose(c, IsoCertificate(MetricMap.identity(three_point), 0, 0))
        assert (out.eps, out.delta) == (c.eps, c.delta)
        assert certificate_verify(out, A, B).accepted

    def test_rotations(self, grid2):
        C = FiniteMetricSpace.cycle(12)
        A, B, D = (dirac_pair(C, k, grid2) for k in (0, 3, 7))
        out = certificate_compose(IsoCertificate(rotation(C, 3), 0, 0), IsoCertificate(rotation(C, 4), 0, 0))
        assert (out.eps, out.delta) == (0, 0)
        assert certificate_verify(out, A, D).accepted

    def test_constructed_triple(self):
        A, B, C, c1, c2 = scaled_triple(0.2, 0.1, 0.3, 0.05)
        assert certificate_verify(c1, A, B).accepted
        assert certificate_verify(c2, B, C).accepted
        out = certificate_compose(c1, c2)
        assert (out.eps, out.delta) == pytest.approx((0.5, 0.15))
        assert certificate_verify(out, A, C).accepted

    def test_mismatch(self, three_point):
        c = IsoCertificate(MetricMap.identity(three_point), 0, 0)
        d = IsoCertificate(MetricMap.identity(FiniteMetricSpace.cycle(3)), 0, 0)
        with pytest.raises(ValueError):
            certificate_compose(c, d)

    def test_unit_scale_breaks_composition(self):
        g = TimeGrid(1.0, 1)
        X = FiniteMetricSpace([[0, 0.1], [0.1, 0]])
        Z = X.scaled(2.0)
        A, B, C = dirac_pair(X, 0, g), dirac_pair(X, 1, g), dirac_pair(Z, 1, g)
        c1 = IsoCertificate(MetricMap.identity(X), 0.0, 0.1)
        c2 = IsoCertificate(MetricMap(X, Z, (0, 1)), 2 * math.log(2), 0.0)
        for scale in ("exp", "unit"):
            assert certificate_verify(c1, A, B, scale=scale).accepted
            assert certificate_verify(c2, B, C, scale=scale).accepted
        out = certificate_compose(c1, c2)
        assert certificate_verify(out, A, C, scale="exp").accepted
        assert not certificate_verify(out, A, C, scale="unit").accepted


@given(st.tuples(st.integers(2, 4), st.integers(0, 2**32 - 1)))
def test_value_bounds_exact(data):
    n, seed = data
    rng = np.random.default_rng(seed)
    g = TimeGrid(1.0, 1)
    X, Y = random_space(rng, n, 0.1, 1.5), random_space(rng, n, 0.1, 1.5)
    A = PairInstance(X, random_measure(rng, X, g, 2))
    B = PairInstance(Y, random_measure(rng, Y, g, 2))
    exact = dlp_exact(A, B).value
    for p in permutations(range(n)):
        assert certificate_value(MetricMap(X, Y, p), A, B).value >= exact


@given(st.tuples(st.integers(2, 4), st.integers(0, 2**32 - 1)))
def test_dlp_metric_axioms(data):
    n, seed = data
    rng = np.random.default_rng(seed)
    g = TimeGrid(1.0, 1)
    pairs = []
    for _ in range(3):
        X = random_space(rng, n, 0.1, 1.5)
        pairs.append(PairInstance(X, random_measure(rng, X, g, 2)))
    A, B, C = pairs
    ab = dlp_exact(A, B).value
    assert ab == pytest.approx(dlp_exact(B, A).value, abs=1e-12)
    assert dlp_exact(A, C).value <= ab + dlp_exact(B, C).value + 1e-9


@given(st.tuples(st.integers(2, 5), st.integers(0, 2**32 - 1)))
def test_zero_value_gives_isomorphism(data):
    n, seed = data
    rng = np.random.default_rng(seed)
    g = TimeGrid(1.0, 1)
    X = random_space(rng, n)
    P = random_measure(rng, X, g, 3, exact=True)
    p = tuple(int(k) for k in rng.permutation(n))
    f = MetricMap(X, FiniteMetricSpace(X.dist[np.ix_(np.argsort(p), np.argsort(p))]), p)
    from lipro.path_space import pushforward_measure

    A, B = PairInstance(X, P), PairInstance(f.target, pushforward_measure(f, P))
    res = dlp_exact(A, B)
    assert res.value == 0.0
    assert certificate_verify(IsoCertificate(res.certificate.f, 0, 0), A, B).accepted


@given(st.tuples(st.integers(2, 5), st.integers(0, 2**32 - 1)))
def test_same_space_below_prokhorov(data):
    n, seed = data
    rng = np.random.default_rng(seed)
    g = TimeGrid(1.0, 1)
    X = FiniteMetricSpace.cycle(n, length=float(rng.uniform(0.5, 4)))
    A = PairInstance(X, random_measure(rng, X, g, 3))
    B = PairInstance(X, random_measure(rng, X, g, 3))
    res = dlp_same_space(A, B)
    assert res.value <= prokhorov_distance(A.measure, B.measure).value + 1e-12


class TestKyFan:
    def test_zero(self):
        assert ky_fan_bound(np.zeros(10)) == 0.0

    def test_simple(self):
        # 3 of 10 at distance 0.5: min over δ of max(δ, P(d > δ)) = 0.3
        assert ky_fan_bound([0.0] * 7 + [0.5] * 3) == pytest.approx(0.3)

    def test_confidence_is_larger(self):
        d = [0.0] * 70 + [0.5] * 30
        assert ky_fan_bound(d, confidence=0.95) > ky_fan_bound(d)

    def test_bounds_prokhorov(self):
        rng = np.random.default_rng(7)
        C = FiniteMetricSpace.cycle(5, length=2.0)
        g = TimeGrid(1.0, 1)
        a = rng.integers(0, 5, size=(12, 2))
        b = np.where(rng.random((12, 2)) < 0.3, (a + 1) % 5, a)
        sample = PairedSample(C, C, g, a, b)
        cv = coupled_certificate_value(MetricMap.identity(C), sample, confidence=None)
        P = GridPathMeasure.empirical(C, g, a)
        Q = GridPathMeasure.empirical(C, g, b)
        assert cv.prokhorov >= prokhorov_distance(P, Q).value - 1e-12


class TestConvergenceReport:
    def test_constant_sequence(self, three_point, grid2):
        A = dirac_pair(three_point, 0, grid2)
        rep = convergence_report([A] * 4, A, [MetricMap.identity(three_point)] * 4)
        assert rep.values == [0.0] * 4 and rep.mode == "exact-per-map"

    def test_flags_corrupted_entry(self):
        g = TimeGrid(1.0, 1)
        X = FiniteMetricSpace([[0, 2], [2, 0]])
        target = two_atom(X, g, 0, 1, 0.0)
        weights = [0.4, 0.2, 0.6, 0.05]
        seq = [two_atom(X, g, 0, 1, w) for w in weights]
        rep = convergence_report(seq, target, [MetricMap.identity(X)] * 4)
        assert rep.values == pytest.approx(weights)
        assert rep.non_monotone == [3]
        assert not rep.decreasing

    def test_decreasing_sequence(self):
        g = TimeGrid(1.0, 1)
        X = FiniteMetricSpace([[0, 2], [2, 0]])
        target = two_atom(X, g, 0, 1, 0.0)
        seq = [two_atom(X, g, 0, 1, 2.0**-i) for i in range(1, 6)]
        rep = convergence_report(seq, target, [MetricMap.identity(X)] * 5)
        assert rep.decreasing
        assert rep.slope == pytest.approx(-math.log(2))

    def test_map_count(self, three_point, grid2):
        A = dirac_pair(three_point, 0, grid2)
        with pytest.raises(ValueError):
            convergence_report([A, A], A, [MetricMap.identity(three_point)])

    def test_paired_mode(self):
        C = FiniteMetricSpace.cycle(4)
        g = TimeGrid(1.0, 1)
        a = np.zeros((20, 2), dtype=int)
        samples = [PairedSample(C, C, g, a, np.where(np.arange(20)[:, None] < k, 1, 0) + 0 * a) for k in (6, 3, 1)]
        rep = convergence_report(samples, None, [MetricMap.identity(C)] * 3, confidence=None)
        assert rep.mode == "coupling-upper-bound"
        assert rep.values == pytest.approx([0.3, 0.15, 0.05])
