import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from lipro.diffusion_lab import (
    CircleModel,
    HeatKernelBound,
    ManifoldFamilyParams,
    TorusModel,
    calibrate_bound,
    empirical_modulus,
    kernel_domination_check,
    modulus_bound,
    phi_tightness_limit,
    sample_bm_paths,
    sample_coupled_bm,
    sample_elliptic_paths,
    torus_heat_kernel,
    wrapped_heat_kernel,
)
from lipro.path_space import TimeGrid

TWO_PI = 2 * math.pi


def direct_series(t, d, L, terms=200):
    """Independent oracle: a wide fixed window of images, no truncation logic."""
    m = np.arange(-terms, terms + 1)
    return float(np.exp(-((d + m * L) ** 2) / (2 * t)).sum() / math.sqrt(2 * math.pi * t))


def tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def cell_masses(t, L, n, sub=200):
    """Kernel mass of each snapping cell around node positions, starting from 0."""
    h = L / n
    offsets = (np.arange(sub) + 0.5) / sub * h - h / 2
    pts = np.arange(n)[:, None] * h + offsets[None, :]
    return wrapped_heat_kernel(t, 0.0, pts, L).sum(axis=1) * h / sub


def marginal(idx, n, k=-1):
    return np.bincount(idx[:, k], minlength=n) / len(idx)


class TestParams:
    def test_circle(self):
        p = ManifoldFamilyParams.circle(TWO_PI)
        assert (p.V, p.Vprime, p.D) == (TWO_PI, TWO_PI, math.pi)

    @pytest.mark.parametrize(
        "kw",
        [
            dict(n=3, K=0, V=1, D=1, Vprime=1),
            dict(n=1, K=0, V=2, D=1, Vprime=1),
            dict(n=1, K=0, V=1, D=0, Vprime=1),
            dict(n=1, K=0, V=1, D=1, Vprime=1, Lambda=0.5),
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            ManifoldFamilyParams(**kw)

    def test_nu_must_exceed_two(self):
        with pytest.raises(ValueError, match="nu"):
            HeatKernelBound(1.0, 2.0)


class TestWrappedKernel:
    def test_symmetry_exact(self):
        rng = np.random.default_rng(0)
        x, y = rng.uniform(0, TWO_PI, 50), rng.uniform(0, TWO_PI, 50)
        for t in (0.01, 0.3, 5.0):
            assert np.array_equal(wrapped_heat_kernel(t, x, y, TWO_PI), wrapped_heat_kernel(t, y, x, TWO_PI))

    @pytest.mark.parametrize("t", [0.01, 0.1, 1.0])
    def test_normalisation(self, t):
        # periodic trapezoid rule: spectrally accurate for smooth periodic data
        n = 4096
        y = np.arange(n) * TWO_PI / n
        total = wrapped_heat_kernel(t, 1.3, y, TWO_PI).sum() * TWO_PI / n
        assert total == pytest.approx(1.0, abs=1e-10)

    def test_equilibrium(self):
        L = TWO_PI
        y = np.linspace(0, L, 37)
        np.testing.assert_allclose(wrapped_heat_kernel(10 * L**2, 0.0, y, L), 1 / L, atol=1e-8)

    @pytest.mark.parametrize("t,d", [(0.01, 0.05), (0.5, 1.0), (3.0, 3.0), (40.0, 2.0)])
    def test_matches_direct_series(self, t, d):
        assert wrapped_heat_kernel(t, 0.0, d, TWO_PI) == pytest.approx(direct_series(t, d, TWO_PI), rel=1e-13)

    def test_semigroup(self):
        n = 128
        h = TWO_PI / n
        x = np.arange(n) * h
        P = lambda t: wrapped_heat_kernel(t, x[:, None], x[None, :], TWO_PI)
        np.testing.assert_allclose(P(0.1) @ P(0.2) * h, P(0.3), atol=1e-8)

    def test_rejects_nonpositive_time(self):
        with pytest.raises(ValueError):
            wrapped_heat_kernel(0.0, 0.0, 0.0, 1.0)

    def test_torus_is_product(self):
        x, y = np.array([0.1, 0.2]), np.array([1.0, 2.5])
        expected = wrapped_heat_kernel(0.3, 0.1, 1.0, 2.0) * wrapped_heat_kernel(0.3, 0.2, 2.5, 3.0)
        assert torus_heat_kernel(0.3, x, y, 2.0, 3.0) == pytest.approx(expected)


class TestCircleModel:
    def test_band_ok_at_lambda_one(self):
        CircleModel(TWO_PI, 16, np.ones(16), Lambda=1.0)

    def test_band_violation(self):
        c = np.ones(16)
        c[5] = 1.5
        with pytest.raises(ValueError, match="edge 5"):
            CircleModel(TWO_PI, 16, c, Lambda=1.2)

    def test_generator_spectrum(self):
        L, n = 3.0, 24
        ev = np.sort(np.linalg.eigvals(CircleModel(L, n).generator()).real)
        k = np.arange(n)
        expected = np.sort(n**2 / L**2 * (1 - np.cos(TWO_PI * k / n)))
        np.testing.assert_allclose(ev, expected, atol=1e-10)

    def test_generator_rows_sum_to_zero(self):
        rng = np.random.default_rng(1)
        A = CircleModel(2.0, 10, rng.uniform(0.5, 2.0, 10), Lambda=2.0).generator()
        np.testing.assert_allclose(A.sum(axis=1), 0, atol=1e-12)


class TestSamplers:
    def test_m_zero_is_initial_law(self):
        model = CircleModel(TWO_PI, 8)
        s = sample_bm_paths(model, TimeGrid(1.0, 0), 4000, seed=3)
        assert s.indices.shape == (4000, 1)
        assert tv(marginal(s.indices, 8, 0), model.node_probs) < 0.03

    def test_fixed_start(self):
        s = sample_bm_paths(CircleModel(TWO_PI, 8), TimeGrid(1.0, 4), 100, seed=3, initial=2)
        assert (s.indices[:, 0] == 2).all()

    def test_one_step_tv(self):
        n, L, T, m = 64, TWO_PI, 1.0, 50
        s = sample_bm_paths(CircleModel(L, n), TimeGrid(T, m), 100_000, seed=11, initial=0)
        gap = tv(marginal(s.indices, n, 1), cell_masses(T / m, L, n))
        assert gap < 0.02

    def test_determinism_across_jobs(self):
        model = CircleModel(TWO_PI, 32)
        g = TimeGrid(1.0, 5)
        a = sample_bm_paths(model, g, 10_000, seed=5, jobs=1)
        b = sample_bm_paths(model, g, 10_000, seed=5, jobs=3)
        assert np.array_equal(a.indices, b.indices)
        assert np.array_equal(a.positions, b.positions)
        assert a.measure() == b.measure()

    def test_seed_changes_output(self):
        model = CircleModel(TWO_PI, 32)
        g = TimeGrid(1.0, 5)
        assert not np.array_equal(
            sample_bm_paths(model, g, 500, seed=1).indices, sample_bm_paths(model, g, 500, seed=2).indices
        )

    def test_snapping_tie_goes_low(self):
        from lipro.diffusion_lab import _snap

        # 3.5 sits between node 3 and node 0 across the seam; 0 is the lower index
        assert _snap(np.array([0.5, 1.5, 3.5]), 1.0, 4).tolist() == [0, 1, 0]

    def test_elliptic_matches_bm(self):
        n, L = 64, TWO_PI
        g = TimeGrid(1.0, 4)
        bm = sample_bm_paths(CircleModel(L, n), g, 100_000, seed=2, initial=0)
        el = sample_elliptic_paths(CircleModel(L, n), g, 100_000, seed=3, initial=0)
        for k in range(1, 5):
            assert tv(marginal(bm.indices, n, k), marginal(el.indices, n, k)) < 0.03

    def test_elliptic_time_change(self):
        n, L = 32, TWO_PI
        fast = CircleModel(L, n, np.full(n, 2.0), Lambda=2.0)
        a = sample_elliptic_paths(fast, TimeGrid(0.5, 1), 100_000, seed=4, initial=0)
        b = sample_elliptic_paths(CircleModel(L, n), TimeGrid(1.0, 1), 100_000, seed=5, initial=0)
        assert tv(marginal(a.indices, n), marginal(b.indices, n)) < 0.03

    def test_elliptic_circle_only(self):
        with pytest.raises(TypeError):
            sample_elliptic_paths(TorusModel(1, 1, 3, 3), TimeGrid(1.0, 1), 10, seed=0)

    def test_torus_marginal(self):
        model = TorusModel(2.0, 3.0, 8, 12)
        s = sample_bm_paths(model, TimeGrid(1.0, 1), 20_000, seed=9)
        # stationary start stays stationary
        assert tv(marginal(s.indices, 96), model.node_probs) < 0.06

    def test_coupled_marginals_and_start(self):
        g = TimeGrid(1.0, 10)
        a, b = sample_coupled_bm(CircleModel(TWO_PI * 1.25, 16), CircleModel(TWO_PI, 16), g, 2000, seed=1)
        assert np.array_equal(a[:, 0], b[:, 0])
        a2, _ = sample_coupled_bm(CircleModel(TWO_PI * 1.25, 16), CircleModel(TWO_PI, 16), g, 2000, seed=1, jobs=2)
        assert np.array_equal(a, a2)

    def test_coupled_requires_equal_nodes(self):
        with pytest.raises(ValueError):
            sample_coupled_bm(CircleModel(1, 8), CircleModel(1, 9), TimeGrid(1.0, 1), 10, seed=0)


class TestTightness:
    def test_strictly_decreasing_default_grid(self):
        table = phi_tightness_limit(HeatKernelBound(1.0, 3.0), 0.5)
        assert np.all(np.diff(table.values) < 0)
        assert table.values[-1] < 1e-12
        assert table.ridge == pytest.approx(0.25 / 16)

    def test_constant_above_ridge(self):
        b = HeatKernelBound(1.0, 3.0)
        table = phi_tightness_limit(b, 0.5, lambdas=[1.0, 0.5, 0.1, b.ridge(0.5)])
        assert np.ptp(table.values) == 0.0

    @given(st.tuples(st.floats(0.1, 2.0), st.floats(2.1, 6.0), st.floats(1e-3, 0.2)))
    def test_dense_grid_oracle(self, data):
        eps, nu, lam = data
        b = HeatKernelBound(1.0, nu)
        xi = np.linspace(lam / 4000, lam, 4000)[:, None]
        r = eps * (1 + np.geomspace(1e-9, 5, 400))[None, :]
        dense = float(np.max(b.phi(xi, r)))
        exact = b.sup(lam, eps)
        # subnormal values carry little relative precision, hence the absolute floor
        assert dense <= exact * (1 + 1e-9) + 1e-300
        assert dense >= exact * (1 - 1e-3) - 1e-300

    def test_empty_range(self):
        table = phi_tightness_limit(HeatKernelBound(1.0, 3.0), 2.0, lambdas=[1.0, 0.1], D=1.5)
        assert table.values.tolist() == [0.0, 0.0]

    def test_eps_positive(self):
        with pytest.raises(ValueError):
            phi_tightness_limit(HeatKernelBound(1.0, 3.0), 0.0)


class TestDomination:
    times = np.linspace(0.01, 1.0, 40)

    def test_calibration(self):
        model = CircleModel(TWO_PI, 64)
        bound = calibrate_bound(model, 3.0, self.times)
        assert math.isfinite(bound.Cprime) and bound.Cprime > 0
        assert kernel_domination_check(model, bound, self.times).passed

    def test_zero_constant_fails(self):
        report = kernel_domination_check(CircleModel(TWO_PI, 16), HeatKernelBound(0.0, 3.0), self.times)
        assert not report.passed and report.max_violation > 0

    @given(st.floats(0.01, 10.0))
    def test_monotone_in_constant(self, c):
        model = CircleModel(TWO_PI, 16)
        if kernel_domination_check(model, HeatKernelBound(c, 3.0), self.times).passed:
            assert kernel_domination_check(model, HeatKernelBound(2 * c, 3.0), self.times).passed

    def test_horizon(self):
        with pytest.raises(ValueError, match="horizon"):
            kernel_domination_check(CircleModel(TWO_PI, 8), HeatKernelBound(1.0, 3.0, tau=0.5), self.times)

    def test_torus(self):
        model = TorusModel(2.0, 2.0, 6, 6)
        bound = calibrate_bound(model, 3.0, self.times)
        assert kernel_domination_check(model, bound, self.times).passed


@pytest.fixture(scope="module")
def circle_sample():
    return sample_bm_paths(CircleModel(TWO_PI, 64), TimeGrid(1.0, 100), 10_000, seed=21)


class TestModulus:
    def test_gamma_beyond_diameter(self, circle_sample):
        assert empirical_modulus(circle_sample, 0.0, 0.5, math.pi + 0.1).estimate == 0.0

    def test_lambda_zero(self, circle_sample):
        assert empirical_modulus(circle_sample, 0.3, 0.0, 0.1).estimate == 0.0

    def test_short_window(self, circle_sample):
        est = empirical_modulus(circle_sample, 0.0, 0.01, 0.5)
        assert est.estimate < 1e-3
        assert est.low <= est.estimate <= est.high

    def test_off_grid(self, circle_sample):
        with pytest.raises(ValueError, match="grid"):
            empirical_modulus(circle_sample, 0.0, 0.005, 0.5)
        with pytest.raises(ValueError):
            empirical_modulus(circle_sample, 0.5, 0.6, 0.5)

    def test_monotone(self, circle_sample):
        lams = [0.01, 0.05, 0.1, 0.3]
        gammas = [0.2, 0.5, 0.8]
        for g in gammas:
            ests = [empirical_modulus(circle_sample, 0.0, lam, g).estimate for lam in lams]
            assert ests == sorted(ests)
        for lam in lams:
            ests = [empirical_modulus(circle_sample, 0.0, lam, g).estimate for g in gammas]
            assert ests == sorted(ests, reverse=True)

    def test_bound_dominates_estimate(self, circle_sample):
        model = CircleModel(TWO_PI, 64)
        bound = calibrate_bound(model, 3.0, np.linspace(0.01, 1.0, 40))
        params = ManifoldFamilyParams.circle(TWO_PI)
        for lam in (0.1, 0.05, 0.01):
            assert empirical_modulus(circle_sample, 0.0, lam, 0.8).high <= modulus_bound(bound, params, lam, 0.8)

    def test_bound_vanishes_beyond_two_diameters(self):
        params = ManifoldFamilyParams.circle(TWO_PI)
        assert modulus_bound(HeatKernelBound(1.0, 3.0), params, 0.1, 2 * params.D) == 0.0

    def test_bound_decreases_below_ridge(self):
        b = HeatKernelBound(1.0, 3.0)
        params = ManifoldFamilyParams.circle(TWO_PI)
        lams = b.ridge(0.4) * 2.0 ** -np.arange(1, 8)
        vals = [modulus_bound(b, params, lam, 0.8) for lam in lams]
        assert np.all(np.diff(vals) < 0)

    def test_bound_horizon(self):
        with pytest.raises(ValueError):
            modulus_bound(HeatKernelBound(1.0, 3.0, tau=0.05), ManifoldFamilyParams.circle(1.0), 0.1, 0.5)
