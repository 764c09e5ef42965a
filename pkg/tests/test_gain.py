import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hgfpf import gain as G
from hgfpf.density import example1_mixture, kde_build, mixture_eval, mixture_sample
from hgfpf.gain import (
    ConvergenceError,
    ObservationFn,
    RhsVector,
    constant_gain,
    control_term,
    control_u,
    density_floor,
    diffusion_map_gain,
    exact_gain,
    galerkin_gain,
    galerkin_matrix,
    galerkin_rhs,
    galerkin_solve,
    gain_derivative_eval,
    gain_eval,
)
from hgfpf.hermite import BasisSpec, eval_all

from .conftest import identity


def gaussian(var):
    return lambda x: np.exp(-0.5 * np.asarray(x) ** 2 / var) / math.sqrt(2 * math.pi * var)


class TestRhs:
    def test_single_particle_closed_form(self):
        b = galerkin_rhs(kde_build(np.array([0.0]), 1.0), identity, 0.0, 4).b
        assert b.size == 6
        # b_1 = -sqrt(2) pi^{-1/4} (2 pi)^{-1/2} int x^2 e^{-x^2} dx = -pi^{-1/4} / 2
        assert b[1] == pytest.approx(-math.pi ** -0.25 / 2, abs=1e-14)
        np.testing.assert_allclose(b[[0, 2, 4]], 0.0, atol=1e-14)  # odd integrands

    def test_against_dense_trapezoid(self):
        X = np.array([-0.7, 0.2, 1.1])
        kde = kde_build(X, 0.6)
        h = ObservationFn(lambda x: np.sin(x) + 0.3 * x)
        hhat = float(h(X).mean())
        x = np.linspace(-14, 14, 400_001)
        oracle = -np.trapezoid(eval_all(BasisSpec(7), x) * (h(x) - hhat) * kde(x), x, axis=1)
        np.testing.assert_allclose(galerkin_rhs(kde, h, hhat, 6).b, oracle, atol=1e-11)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_observation(self):
        kde = kde_build(np.array([0.0]), 1.0)
        with pytest.raises(ValueError):
            galerkin_rhs(kde, lambda x: 1.0 / (x - x), 0.0, 2)

    def test_negative_order(self):
        with pytest.raises(ValueError):
            galerkin_rhs(kde_build(np.array([0.0]), 1.0), identity, 0.0, -1)


class TestSolve:
    def test_matrix_shape(self):
        A = galerkin_matrix(3)
        assert A.shape == (5, 4)
        assert A[1, 0] == pytest.approx(-math.sqrt(0.5))
        assert A[0, 1] == pytest.approx(math.sqrt(0.5))
        assert A[4, 3] == pytest.approx(-math.sqrt(2.0))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 25).flatmap(
        lambda M: st.lists(st.floats(-1, 1), min_size=M + 2, max_size=M + 2)))
    def test_rows_one_to_m_plus_one_exact(self, b):
        b = np.array(b)
        series, r0 = galerkin_solve(b)
        res = galerkin_matrix(b.size - 2) @ series.coeffs - b
        assert np.max(np.abs(res[1:])) < 1e-10 * (1 + np.max(np.abs(b)))
        assert r0 == pytest.approx(abs(res[0]), abs=1e-12)

    def test_order_zero(self):
        series, r0 = galerkin_solve([0.3, -0.5])
        assert series.coeffs[0] == pytest.approx(0.5 * math.sqrt(2.0))
        assert r0 == pytest.approx(0.3)

    def test_rhs_validation(self):
        with pytest.raises(ValueError):
            RhsVector([1.0])
        with pytest.raises(ValueError):
            RhsVector([1.0, np.nan])


class TestGalerkinGain:
    def test_gaussian_kde_is_exact(self):
        # one particle, eps = 1: p = N(0, 1), f = p lies in span{Ht_0}
        g = galerkin_gain(np.array([0.0]), identity, 6, 1.0)
        expected = np.zeros(7)
        expected[0] = math.pi ** 0.25 / math.sqrt(2 * math.pi)
        np.testing.assert_allclose(g.series.coeffs, expected, atol=1e-13)
        np.testing.assert_allclose(gain_eval(g, np.linspace(-3, 3, 13)), 1.0, atol=1e-12)
        assert g.row0_residual < 1e-13

    def test_matches_kde_exact_gain(self):
        X = mixture_sample(example1_mixture(), 200, 0).positions
        kde = kde_build(X, 0.5)
        grid = np.linspace(-2, 2, 41)
        ref = exact_gain(kde, identity, X.mean(), grid)
        err = [np.max(np.abs(gain_eval(galerkin_gain(X, identity, M, 0.5), grid) - ref))
               for M in (2, 6, 12)]
        assert err[0] > err[1] > err[2]
        assert err[2] < 0.01

    def test_row0_residual_shrinks_over_plotted_orders(self):
        X = mixture_sample(example1_mixture(), 200, 0).positions
        r = [galerkin_gain(X, identity, M, 0.5).row0_residual for M in (1, 4, 7)]
        assert r[0] > r[1] > r[2]

    def test_derivative_matches_finite_differences(self):
        X = mixture_sample(example1_mixture(), 50, 1).positions
        g = galerkin_gain(X, identity, 6, 0.5)
        x = np.linspace(-1.5, 1.5, 13)
        fd = (gain_eval(g, x + 1e-6) - gain_eval(g, x - 1e-6)) / 2e-6
        np.testing.assert_allclose(gain_derivative_eval(g, x), fd, atol=1e-6)

    def test_floor_and_clamp(self):
        g = galerkin_gain(np.array([0.0, 0.5]), identity, 4, 0.3)
        far = np.array([-40.0, 40.0])
        K = gain_eval(g, far)
        assert np.all(np.isfinite(K)) and np.all(np.abs(K) <= g.k_max)
        assert np.all(gain_derivative_eval(g, far) == 0.0)
        assert g.p_floor == pytest.approx(1e-8 * np.max(g.kde(np.linspace(0, 0.5, 65))), rel=1e-6)

    def test_density_floor_scale(self):
        kde = kde_build(np.array([0.0]), 1.0)
        assert density_floor(kde) == pytest.approx(1e-8 / math.sqrt(2 * math.pi))

    def test_one_build_rhs_solve_per_call(self, reset_counters):
        galerkin_gain(np.array([0.0, 1.0]), identity, 3, 0.5)
        assert reset_counters == {"kde_build": 1, "rhs": 1, "solve": 1}

    def test_scalar_evaluation(self):
        g = galerkin_gain(np.array([0.0]), identity, 2, 1.0)
        assert isinstance(gain_eval(g, 0.5), float)


class TestControl:
    def test_formula(self):
        u = control_term(np.array([2.0]), np.array([0.5]), np.array([1.0]), 3.0)
        assert u[0] == pytest.approx(-0.5 * 2 * 4 + 0.5 * 2 * 0.5)
        u_r = control_term(np.array([2.0]), np.array([0.5]), np.array([1.0]), 3.0, 0.4)
        assert u_r[0] == pytest.approx(-4.0 + 0.5 * 0.4 * 2 * 0.5)

    def test_control_u_gaussian(self):
        # K = 1, K' = 0: u = -(x + hhat) / 2
        g = galerkin_gain(np.array([0.0]), identity, 4, 1.0, hhat=0.0)
        x = np.linspace(-2, 2, 5)
        np.testing.assert_allclose(control_u(g, identity, x), -0.5 * x, atol=1e-12)


class TestExactGain:
    @pytest.mark.parametrize("var", [0.25, 1.0, 2.0])
    def test_gaussian(self, var):
        x = np.linspace(-2 * math.sqrt(var), 2 * math.sqrt(var), 33)
        np.testing.assert_allclose(exact_gain(gaussian(var), identity, 0.0, x), var, atol=1e-10)

    def test_mixture_against_closed_form(self):
        # for h(x) = x: int_{-inf}^x y p(y) dy has a closed form per component
        mix = example1_mixture()
        x = np.linspace(-2, 2, 21)
        s = math.sqrt(0.2)
        partial = sum(0.5 * (-0.2 * np.exp(-0.5 * (x - m) ** 2 / 0.2) / (s * math.sqrt(2 * math.pi))
                             + m * 0.5 * (1 + np.vectorize(math.erf)((x - m) / (s * math.sqrt(2)))))
                      for m in (-1.0, 1.0))
        np.testing.assert_allclose(exact_gain(mix, identity, 0.0, x), -partial / mixture_eval(mix, x),
                                   rtol=1e-9)

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            exact_gain(gaussian(1.0), identity, 0.0, 20.0)

    def test_floor_warns(self):
        with pytest.warns(RuntimeWarning):
            exact_gain(lambda x: 0.0 * x, identity, 0.0, 0.0)


class TestConstantGain:
    def test_equals_variance_for_linear_h(self):
        X = np.random.default_rng(5).normal(size=100)
        assert constant_gain(X, identity) == pytest.approx(X.var(), rel=1e-12)

    def test_quadratic_h(self):
        X = np.array([-1.0, 0.0, 2.0])
        hx = X ** 2
        assert constant_gain(X, lambda x: x ** 2) == pytest.approx(np.mean((hx - hx.mean()) * X))


class TestDiffusionMap:
    def test_gaussian_particles_near_unit_gain(self):
        X = np.random.default_rng(0).normal(size=400)
        K = diffusion_map_gain(X, identity, 0.1)
        inner = np.abs(X) < 1
        assert abs(K[inner].mean() - 1.0) < 0.15

    def test_blocked_sweeps_match_plain_loop(self):
        X = np.random.default_rng(2).normal(size=20)
        T = G._dm_markov_matrix(X, 0.1)
        c = 0.1 * (X - X.mean())
        phi_fast, sweeps, _ = G._dm_fixed_point(T, c, 10_000, 1e-9)
        phi = np.zeros_like(X)
        for n in range(1, 10_001):
            new = T @ phi + c
            new -= new.mean()
            change = np.max(np.abs(new - phi))
            phi = new
            if change < 1e-9:
                break
        assert sweeps == n
        np.testing.assert_allclose(phi_fast, phi, atol=1e-12)

    def test_markov_matrix_rows(self):
        T = G._dm_markov_matrix(np.array([0.0, 0.3, 2.0]), 0.1)
        np.testing.assert_allclose(T.sum(axis=1), 1.0, rtol=1e-14)
        assert np.all(T > 0)

    def test_non_convergence(self):
        X = np.random.default_rng(1).normal(size=30)
        with pytest.raises(ConvergenceError) as err:
            diffusion_map_gain(X, identity, 0.1, iters=2)
        assert err.value.residual > 1e-9
        info = {}
        diffusion_map_gain(X, identity, 0.1, iters=2, strict=False, info=info)
        assert info["sweeps"] == 2 and not info["converged"]

    def test_invalid(self):
        with pytest.raises(ValueError):
            diffusion_map_gain(np.array([0.0]), identity)
        with pytest.raises(ValueError):
            diffusion_map_gain(np.array([0.0, 1.0]), identity, eps_dm=0.0)
