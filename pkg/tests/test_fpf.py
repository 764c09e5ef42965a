import math

import numpy as np
import pytest

from hgfpf.fpf import FilterConfig, FilterError, fpf_run, initial_particles, particle_mean
from hgfpf.sde import double_well_model, n_steps, ou_model, simulate_truth


def kalman_bucy(truth, dt, R, Q=1.0, m=0.0, P=1.0):
    """Euler discretisation of the Kalman-Bucy filter for dX = -X dt + sqrt(Q) dB, dZ = X dt + sqrt(R) dW."""
    means = np.empty(truth.obs_increments.size)
    for k, dz in enumerate(truth.obs_increments):
        means[k] = m
        m, P = m - m * dt + P / R * (dz - m * dt), P + (-2 * P + Q - P * P / R) * dt
    return means


class TestConfig:
    @pytest.mark.parametrize("kw", [{"Np": 0}, {"M": -1}, {"eps": 0.0}, {"dt": -1.0},
                                    {"gain_method": "ensemble"}, {"hhat_mode": "exact"},
                                    {"T": 0.001}, {"init_var": -1.0}])
    def test_rejects(self, kw):
        with pytest.raises(ValueError):
            FilterConfig(double_well_model(), **kw)

    def test_truth_mismatch(self):
        truth = simulate_truth(double_well_model(), 0.1, 0.01, 1.0, 0)
        with pytest.raises(ValueError):
            fpf_run(FilterConfig(double_well_model(), T=2.0), truth)


class TestLinearGaussian:
    @pytest.mark.parametrize("method", ["constant", "hermite_galerkin"])
    def test_tracks_kalman_bucy(self, method):
        model = ou_model(1.0, 1.0)
        truth = simulate_truth(model, 0.5, 0.01, 3.0, seed=3)
        cfg = FilterConfig(model, Np=400, M=4, eps=0.3, T=3.0, gain_method=method, seed=1)
        est = fpf_run(cfg, truth).estimates
        kb = kalman_bucy(truth, 0.01, 1.0)
        assert np.max(np.abs(est - kb)) < 0.15
        assert np.sqrt(np.mean((est - kb) ** 2)) < 0.06

    def test_noise_scaled_gain_tracks_kalman_bucy(self):
        model = ou_model(1.0, 0.4)
        truth = simulate_truth(model, 0.5, 0.01, 3.0, seed=3)
        cfg = FilterConfig(model, Np=400, T=3.0, gain_method="constant", seed=1,
                           scale_gain_by_obs_noise=True)
        est = fpf_run(cfg, truth).estimates
        assert np.sqrt(np.mean((est - kalman_bucy(truth, 0.01, 0.4)) ** 2)) < 0.06


class TestRun:
    def setup_method(self):
        self.model = double_well_model()
        self.truth = simulate_truth(self.model, 0.1, 0.01, 1.0, seed=0)

    def test_output_shapes(self):
        out = fpf_run(FilterConfig(self.model, T=1.0, snapshot_every=25), self.truth)
        assert out.estimates.shape == (n_steps(1.0, 0.01) + 1,)
        assert len(out.ensembles) == 5
        assert out.ensembles[1].timestamp == pytest.approx(0.25)
        assert out.gain_time_seconds <= out.wall_time_seconds

    def test_first_estimate_is_initial_mean(self):
        cfg = FilterConfig(self.model, T=1.0, seed=9)
        out = fpf_run(cfg, self.truth)
        assert out.estimates[0] == particle_mean(initial_particles(cfg))

    @pytest.mark.parametrize("method", ["hermite_galerkin", "constant", "diffusion_map"])
    def test_deterministic(self, method):
        cfg = FilterConfig(self.model, T=1.0, gain_method=method, seed=2)
        a, b = fpf_run(cfg, self.truth), fpf_run(cfg, self.truth)
        np.testing.assert_array_equal(a.estimates, b.estimates)

    def test_one_solve_per_step(self, reset_counters):
        fpf_run(FilterConfig(self.model, T=1.0), self.truth)
        n = n_steps(1.0, 0.01) + 1
        assert reset_counters == {"kde_build": n, "rhs": n, "solve": n}

    def test_kde_hhat_mode(self):
        out = fpf_run(FilterConfig(self.model, T=1.0, hhat_mode="kde"), self.truth)
        assert np.all(np.isfinite(out.estimates))

    def test_custom_initial_particles(self):
        X0 = np.linspace(-1, 1, 10)
        out = fpf_run(FilterConfig(self.model, T=1.0), self.truth, X0=X0)
        assert out.estimates[0] == pytest.approx(0.0, abs=1e-15)
        with pytest.raises(ValueError):
            fpf_run(FilterConfig(self.model, T=1.0), self.truth, X0=X0[:5])

    def test_non_finite_particle(self):
        X0 = np.zeros(10)
        X0[3] = np.nan
        with pytest.raises(FilterError) as err:
            fpf_run(FilterConfig(self.model, T=1.0), self.truth, X0=X0)
        assert err.value.step == 0

    def test_dm_diagnostics(self):
        out = fpf_run(FilterConfig(self.model, T=1.0, gain_method="diffusion_map"), self.truth)
        assert out.diagnostics["dm_sweeps"] > 0
        assert "dm_nonconverged_steps" in out.diagnostics

    def test_csv(self, tmp_path):
        out = fpf_run(FilterConfig(self.model, T=1.0, gain_method="constant"), self.truth)
        out.to_csv(tmp_path / "est.csv", self.truth)
        data = np.loadtxt(tmp_path / "est.csv", delimiter=",", skiprows=1)
        np.testing.assert_array_equal(data[:, 1], out.estimates)
        np.testing.assert_array_equal(data[:, 2], self.truth.states)

    def test_tracks_double_well_better_than_prior(self):
        truth = simulate_truth(self.model, 0.1, 0.01, 20.0, seed=1)
        out = fpf_run(FilterConfig(self.model, T=20.0, seed=1), truth)
        err = np.sqrt(np.mean((out.estimates - truth.states) ** 2))
        assert err < math.sqrt(np.mean(truth.states ** 2))
