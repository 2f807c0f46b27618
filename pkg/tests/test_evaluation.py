import numpy as np
import pytest
import torch

from s3rp import advect, data, evaluation, windgen
from s3rp.errors import ConfigError, DataError, EvalError
from s3rp.grid import GridSpec
from s3rp.model import ModelConfig, S3RPModel

GRID = GridSpec(n_hr=32, n_lr=8, spacing_lr=1.0 / 8)


def tiny_model(mode="interpolation", seed=0):
    torch.manual_seed(seed)
    net = S3RPModel(ModelConfig(latent_channels=4, hidden_channels=8, mode=mode, grid=GRID))
    net.set_normalization([0.0, 0.0, 0.5], [0.01, 0.01, 0.5])
    return net


@pytest.fixture(scope="module")
def toy_dataset():
    records = []
    for s in range(2):
        wind = windgen.generate_wind(windgen.WindConfig(n_modes=3, n_steps=16, seed=s), GRID)
        cfg = advect.SimConfig(grid=GRID, n_steps=16, k_diag=(2e-6, 2e-6), emission_rate=0.02, seed=s)
        records.append(advect.simulate_sources(cfg, wind))
    return data.build_dataset(records, sequences_per_sim=2, seq_len=12, seed=0)


def lr_input(toy_dataset):
    return toy_dataset.holdout_items()[0].lr


class TestMcPredict:
    def test_shapes_and_moments(self, toy_dataset):
        net = tiny_model()
        ens = evaluation.mc_predict(net, lr_input(toy_dataset), m=5, seed=0, chunk=2)
        assert ens.samples.shape == (5, 12, 32, 32, 3)
        np.testing.assert_allclose(ens.mean, ens.samples.mean(axis=0, dtype=np.float64), atol=1e-10)
        np.testing.assert_allclose(ens.std, ens.samples.std(axis=0, dtype=np.float64), atol=1e-10)

    def test_m_below_two_rejected(self, toy_dataset):
        with pytest.raises(ConfigError):
            evaluation.mc_predict(tiny_model(), lr_input(toy_dataset), m=1)

    def test_deterministic_under_seed(self, toy_dataset):
        net = tiny_model()
        a = evaluation.mc_predict(net, lr_input(toy_dataset), m=4, seed=3, chunk=2)
        b = evaluation.mc_predict(net, lr_input(toy_dataset), m=4, seed=3, chunk=2)
        assert np.array_equal(a.samples, b.samples)


class TestMse:
    def test_exact_match(self):
        y = np.random.default_rng(0).normal(size=(3, 8, 8, 3))
        assert evaluation.mse(y, y) == 0.0

    def test_constant_offset(self):
        y = np.random.default_rng(1).normal(size=(3, 8, 8, 3))
        assert abs(evaluation.mse(y + 0.01, y) - 1e-4) <= 1e-12

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(2)
        a = rng.normal(size=(2, 4, 4, 3))
        b = rng.normal(size=(2, 4, 4, 3))
        total = sum((a[idx] - b[idx]) ** 2 for idx in np.ndindex(*a.shape))
        assert abs(evaluation.mse(a, b) - total / a.size) <= 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            evaluation.mse(np.zeros((2, 4, 4, 3)), np.zeros((2, 8, 8, 3)))


def synthetic_ensemble(m, sites_shape, seed, loc=0.0, scale=1.0):
    rng = np.random.default_rng(seed)
    samples = rng.normal(loc, scale, size=(m,) + sites_shape).astype(np.float32)
    return evaluation.McEnsemble.from_samples(samples)


class TestEcp:
    def test_truth_equals_mean(self):
        ens = synthetic_ensemble(8, (2, 4, 4, 3), seed=0)
        assert evaluation.ecp(ens, ens.mean, 1.0) == 1.0
        assert evaluation.ecp(ens, ens.mean, 0.001) == 1.0

    def test_monotone_in_k(self):
        ens = synthetic_ensemble(16, (2, 8, 8, 3), seed=1)
        y = np.random.default_rng(2).normal(size=(2, 8, 8, 3))
        values = [evaluation.ecp(ens, y, k) for k in (0.5, 1.0, 2.0, 3.0)]
        assert values == sorted(values)

    def test_gaussian_calibration(self):
        # Unit-normal ensembles around independent unit-normal truth on ~1e6
        # sites: nominal Gaussian coverage at 1 and 2 sigma.
        shape = (1, 578, 578, 3)
        ens = synthetic_ensemble(100, shape, seed=3)
        y = np.random.default_rng(4).normal(size=shape)
        assert abs(evaluation.ecp(ens, y, 1.0) - 0.683) <= 0.01
        assert abs(evaluation.ecp(ens, y, 2.0) - 0.954) <= 0.01

    def test_degenerate_sites(self):
        samples = np.zeros((4, 1, 2, 2, 3), dtype=np.float32)
        ens = evaluation.McEnsemble.from_samples(samples)
        y = np.zeros((1, 2, 2, 3))
        assert evaluation.ecp(ens, y, 2.0) == 1.0
        y2 = y + 0.5
        assert evaluation.ecp(ens, y2, 2.0) == 0.0


class TestEvaluate:
    def test_untrained_model_produces_finite_report(self, toy_dataset):
        net = tiny_model()
        report = evaluation.evaluate(net, toy_dataset, m=4, seed=0)
        doc = report.to_json()
        assert report.n_sequences == 2
        for v in (report.mse, report.ecp_1sigma, report.eps_advdiff, report.eps_div,
                  report.baseline.mse, report.baseline.eps_div):
            assert np.isfinite(v)
        assert report.ecp_2sigma >= report.ecp_1sigma
        assert '"ecp_1sigma": null' in doc  # baseline has no coverage columns

    def test_determinism(self, toy_dataset):
        net = tiny_model(seed=1)
        a = evaluation.evaluate(net, toy_dataset, m=4, seed=5)
        b = evaluation.evaluate(net, toy_dataset, m=4, seed=5)
        assert a.mse == b.mse and a.ecp_1sigma == b.ecp_1sigma

    def test_missing_holdout_rejected(self, toy_dataset):
        net = tiny_model()
        stripped = data.Dataset(**{**toy_dataset.__dict__, "holdout_idx": []})
        with pytest.raises(EvalError):
            evaluation.evaluate(net, stripped, m=4)


class TestErrorStdHistogram:
    def test_constant_std_one_column(self):
        # Two samples at base +- delta: the spread is exactly delta at every
        # site, so all histogram mass lands in a single std column.
        base = np.random.default_rng(1).normal(size=(2, 4, 4, 3)).astype(np.float32)
        samples = np.stack([base - 0.3, base + 0.3])
        ens = evaluation.McEnsemble.from_samples(samples)
        y = np.random.default_rng(2).normal(size=(2, 4, 4, 3))
        hist = evaluation.error_std_histogram(ens, y, n_bins=8)
        std_marginal = hist.counts.sum(axis=0)
        assert (std_marginal > 0).sum() == 1

    def test_constructed_proportionality_has_high_rank_corr(self):
        rng = np.random.default_rng(3)
        truth = rng.normal(size=(2, 8, 8, 3))
        err = np.abs(rng.normal(size=truth.shape))
        mean = truth + err * np.sign(rng.normal(size=truth.shape))
        std = 0.5 * err  # spread exactly proportional to the error
        samples = np.stack([mean - std, mean + std]).astype(np.float32)
        ens = evaluation.McEnsemble.from_samples(samples)
        hist = evaluation.error_std_histogram(ens, truth, n_bins=16)
        assert hist.rank_correlation >= 0.99

    def test_csv_emission(self, tmp_path):
        ens = synthetic_ensemble(4, (1, 4, 4, 3), seed=5)
        y = np.random.default_rng(6).normal(size=(1, 4, 4, 3))
        hist = evaluation.error_std_histogram(ens, y, n_bins=4)
        path = str(tmp_path / "hist.csv")
        evaluation.histogram_to_csv(hist, path)
        text = open(path).read()
        assert "rank_correlation" in text


class TestCoordinateTrace:
    def test_quiet_corner_has_near_zero_bands(self):
        samples = np.zeros((4, 6, 8, 8, 3), dtype=np.float32)
        samples[..., 4, 4, 2] = np.random.default_rng(0).normal(size=(4, 6))
        ens = evaluation.McEnsemble.from_samples(samples)
        y = np.zeros((6, 8, 8, 3))
        trace = evaluation.coordinate_trace(ens, y, (0, 0))
        lo, hi = trace.band(2.0)
        assert np.all(np.abs(hi - lo) < 1e-12)

    def test_out_of_range_coordinate(self):
        ens = synthetic_ensemble(3, (2, 4, 4, 3), seed=7)
        with pytest.raises(ConfigError):
            evaluation.coordinate_trace(ens, None, (9, 0))

    def test_csv_round(self, tmp_path):
        ens = synthetic_ensemble(3, (5, 4, 4, 3), seed=8)
        y = np.random.default_rng(9).normal(size=(5, 4, 4, 3))
        trace = evaluation.coordinate_trace(ens, y, (1, 2))
        path = str(tmp_path / "trace.csv")
        evaluation.trace_to_csv(trace, path)
        rows = open(path).read().strip().splitlines()
        assert len(rows) == 6  # header + 5 steps
        assert rows[0].startswith("t,truth,mean,std")
