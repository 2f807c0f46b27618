import numpy as np
import pytest

from s3rp import windgen
from s3rp.diffops import divergence
from s3rp.errors import ConfigError, DataError
from s3rp.grid import GridSpec

GRID = GridSpec(n_hr=64, n_lr=8, spacing_lr=1.0 / 8)


def test_zero_amplitude_gives_zero_streamfunction():
    cfg = windgen.WindConfig(n_modes=1, amplitude=0.0, n_steps=5, seed=3)
    psi = windgen.sample_streamfunction(cfg, 16)
    assert psi.shape == (5, 16, 16)
    assert np.all(psi == 0)


def test_fixed_seed_is_deterministic():
    cfg = windgen.WindConfig(n_modes=4, n_steps=12, seed=42)
    a = windgen.sample_streamfunction(cfg, 32)
    b = windgen.sample_streamfunction(cfg, 32)
    assert np.array_equal(a, b)
    wa = windgen.generate_wind(cfg, GRID)
    wb = windgen.generate_wind(cfg, GRID)
    assert np.array_equal(wa.u, wb.u)


def test_ou_stationary_variance_matches_closed_form():
    # Single mode: stationary variance of the exact OU discretization is
    # sigma^2 regardless of tau/dt; check empirically over a long path.
    rng = np.random.default_rng(7)
    sigma, tau, dt = np.array(0.8), np.array(12.0), 1.0
    path = windgen.ou_series(rng, sigma, tau, dt, 100_000)
    assert abs(np.var(path) - sigma**2) <= 0.05 * sigma**2


def test_ou_autocorrelation_decay():
    rng = np.random.default_rng(11)
    tau, dt = 5.0, 1.0
    path = windgen.ou_series(rng, np.array(1.0), np.array(tau), dt, 200_000)
    lag = 5
    emp = np.corrcoef(path[:-lag], path[lag:])[0, 1]
    assert abs(emp - np.exp(-lag * dt / tau)) < 0.02


class TestWindFromStreamfunction:
    def test_constant_psi_gives_zero_wind(self):
        psi = np.full((3, GRID.n_hr, GRID.n_hr), 4.2)
        wf = windgen.wind_from_streamfunction(psi, GRID)
        assert np.all(wf.u == 0)

    def test_linear_psi_gives_uniform_wind(self):
        # psi = y gives u = (1, 0): uniform advection along x.
        y = (np.arange(GRID.n_hr) + 0.5) * GRID.spacing_hr
        psi = np.broadcast_to(y[None, None, :], (2, GRID.n_hr, GRID.n_hr)).copy()
        wf = windgen.wind_from_streamfunction(psi, GRID)
        interior = (slice(None), slice(1, -1), slice(1, -1))
        np.testing.assert_allclose(wf.u[..., 0][interior], 1.0, rtol=1e-12)
        np.testing.assert_allclose(wf.u[..., 1][interior], 0.0, atol=1e-12)

    def test_sine_product_divergence_cancels(self):
        n = 64
        ds = 1.0 / n
        x = (np.arange(n) + 0.5) * ds
        xx, yy = np.meshgrid(x, x, indexing="ij")
        psi = np.sin(2 * np.pi * xx) * np.sin(2 * np.pi * yy)
        wf = windgen.wind_from_streamfunction(psi[None], GridSpec(n_hr=n, n_lr=8, spacing_lr=1 / 8))
        div_rms = np.sqrt(np.mean(divergence(wf.u, ds) ** 2))
        speed_rms = np.sqrt(np.mean(np.sum(wf.u**2, axis=-1)))
        assert div_rms <= 1e-12 * speed_rms

    def test_nonfinite_input_rejected(self):
        psi = np.zeros((2, GRID.n_hr, GRID.n_hr))
        psi[0, 0, 0] = np.nan
        with pytest.raises(DataError):
            windgen.wind_from_streamfunction(psi, GRID)


class TestGenerateWind:
    def test_ten_seeds_distinct_and_divergence_free(self):
        fields = []
        for seed in range(10):
            cfg = windgen.WindConfig(n_modes=4, n_steps=4, seed=seed)
            wf = windgen.generate_wind(cfg, GRID)
            assert wf.max_relative_divergence() <= 1e-10
            assert np.all(np.isfinite(wf.u))
            fields.append(wf.u)
        for i in range(10):
            for j in range(i + 1, 10):
                assert not np.array_equal(fields[i], fields[j])

    def test_step_count_contract(self):
        cfg = windgen.WindConfig(n_modes=2, n_steps=2, seed=0)
        wf = windgen.generate_wind(cfg, GRID)
        assert wf.u.shape == (2, GRID.n_hr, GRID.n_hr, 2)

    def test_cfl_cap_holds(self):
        cfg = windgen.WindConfig(n_modes=6, n_steps=8, seed=1, cfl_cap=0.45)
        wf = windgen.generate_wind(cfg, GRID)
        l1 = np.abs(wf.u[..., 0]) + np.abs(wf.u[..., 1])
        assert np.max(l1) * cfg.dt / GRID.spacing_hr <= 0.45 + 1e-12

    def test_steeper_slope_shifts_energy_to_large_scales(self):
        def band_ratio(slope):
            cfg = windgen.WindConfig(n_modes=8, energy_slope=slope, n_steps=40, seed=5)
            psi = windgen.sample_streamfunction(cfg, 64)
            power = np.abs(np.fft.fft2(psi, axes=(1, 2))) ** 2
            kf = np.fft.fftfreq(64, d=1 / 64)
            kmag = np.sqrt(kf[:, None] ** 2 + kf[None, :] ** 2)
            low = power[:, (kmag > 0) & (kmag <= 3)].sum()
            high = power[:, (kmag > 3) & (kmag <= 8)].sum()
            return high / low

        assert band_ratio(4.0) < band_ratio(2.0)

    def test_stationarity_of_kinetic_energy(self):
        cfg = windgen.WindConfig(n_modes=3, n_steps=4000, seed=9, tau_base=20.0)
        psi = windgen.sample_streamfunction(cfg, 16)
        grid = GridSpec(n_hr=16, n_lr=8, spacing_lr=1 / 8)
        wf = windgen.wind_from_streamfunction(psi, grid)
        energy = np.mean(np.sum(wf.u**2, axis=-1), axis=(1, 2))
        half = len(energy) // 2
        first, second = energy[:half].mean(), energy[half:].mean()
        assert abs(second - first) < 0.1 * first


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        windgen.WindConfig(n_modes=0)
    with pytest.raises(ConfigError):
        windgen.WindConfig(dt=-1.0)
    with pytest.raises(ConfigError):
        windgen.WindConfig(n_steps=1)
