import math

import numpy as np
import pytest
import torch

from s3rp import model as m
from s3rp.data import CorruptFileError
from s3rp.errors import ConfigError, ModelError
from s3rp.grid import GridSpec

GRID = GridSpec(n_hr=32, n_lr=8, spacing_lr=1.0 / 8)


def tiny_cfg(mode="interpolation", grid=GRID):
    return m.ModelConfig(
        latent_channels=4, hidden_channels=8, n_layers=1, phycell_order=2,
        phycell_kernel=5, kernel_size=3, mode=mode, grid=grid,
    )


def tiny_model(mode="interpolation", seed=0, grid=GRID):
    torch.manual_seed(seed)
    return m.S3RPModel(tiny_cfg(mode, grid))


def lr_batch(b=2, t=5, seed=0, grid=GRID):
    gen = torch.Generator().manual_seed(seed)
    x = torch.randn(b, t, 3, grid.n_lr, grid.n_lr, generator=gen)
    x[:, :, 2] = x[:, :, 2].abs()
    return x


class TestEncoder:
    def test_zero_input_zero_state_contract(self):
        net = tiny_model()
        state = net.init_state(2)
        mu, sigma, _ = net.encode_step(torch.zeros(2, 3, 8, 8), state)
        assert torch.isfinite(mu).all() and torch.isfinite(sigma).all()
        assert (sigma > 0).all()

    def test_determinism(self):
        net = tiny_model()
        x = lr_batch()[:, 0]
        s = net.init_state(2)
        out1 = net.encode_step(x, s)
        out2 = net.encode_step(x, s)
        assert torch.equal(out1[0], out2[0]) and torch.equal(out1[1], out2[1])

    def test_memory_propagates(self):
        net = tiny_model()
        x = lr_batch(b=1, t=6, seed=1)
        x2 = x.clone()
        x2[:, 0] += 0.5

        def run(seq):
            state = net.init_state(1)
            for t in range(6):
                mu, sigma, state = net.encode_step(seq[:, t], state)
            return mu, sigma

        mu_a, sig_a = run(x)
        mu_b, sig_b = run(x2)
        assert (mu_a - mu_b).abs().max() > 0
        assert (sig_a - sig_b).abs().max() > 0

    def test_shape_mismatch_rejected(self):
        net = tiny_model()
        with pytest.raises(ModelError):
            net.encode_step(torch.zeros(2, 3, 16, 16), net.init_state(2))


class TestSampleLatent:
    def test_zero_noise_returns_mean(self):
        mu = torch.randn(2, 4, 8, 8)
        sigma = torch.rand(2, 4, 8, 8) + 0.1
        assert torch.equal(m.S3RPModel.sample_latent(mu, sigma, torch.zeros_like(mu)), mu)

    def test_tiny_sigma_limit(self):
        mu = torch.randn(1, 4, 4, 4)
        noise = torch.randn_like(mu)
        z = m.S3RPModel.sample_latent(mu, torch.full_like(mu, 1e-12), noise)
        assert (z - mu).abs().max() < 1e-10

    def test_sample_mean_obeys_clt(self):
        gen = torch.Generator().manual_seed(3)
        mu = torch.tensor([0.7, -1.2])
        sigma = torch.tensor([0.5, 2.0])
        noise = torch.randn(10_000, 2, generator=gen)
        z = m.S3RPModel.sample_latent(mu, sigma, noise)
        err = (z.mean(0) - mu).abs()
        assert (err <= 4 * sigma / 100).all()


class TestPrior:
    def test_first_step_is_well_defined(self):
        net = tiny_model()
        mu1, sig1, _ = net.prior_step(net.init_state(2))
        mu2, sig2, _ = net.prior_step(net.init_state(2))
        assert torch.equal(mu1, mu2)
        assert (sig1 > 0).all()

    def test_prior_depends_on_previous_latent(self):
        net = tiny_model()
        s = net.init_state(1)
        _, _, s = net.prior_step(s)
        s.prev_z = torch.randn(1, 4, 8, 8)
        mu_a, _, _ = net.prior_step(s)
        s.prev_z = s.prev_z + 1.0
        mu_b, _, _ = net.prior_step(s)
        assert (mu_a - mu_b).abs().max() > 0


def kernel_moments(kernel: torch.Tensor) -> np.ndarray:
    """Independent moment computation: plain double loop over taps."""
    kernel = kernel.detach()
    k = kernel.shape[-1]
    c = k // 2
    out = np.zeros((k, k))
    for a in range(k):
        for b in range(k):
            s = 0.0
            for u in range(k):
                for v in range(k):
                    s += float(kernel[u, v]) * (u - c) ** a * (v - c) ** b / (
                        math.factorial(a) * math.factorial(b)
                    )
            out[a, b] = s
    return out


class TestPhyCell:
    def test_gate_identity_when_input_matches_prediction(self):
        net = tiny_model()
        cell = net.decoder.phycell
        h = torch.randn(1, 8, 8, 8)
        h_tilde = h + cell.phi(h)
        out = cell(h, h_tilde)
        assert torch.allclose(out, h_tilde, atol=1e-6)

    def test_zeroed_combination_is_pure_memory(self):
        net = tiny_model()
        cell = net.decoder.phycell
        with torch.no_grad():
            cell.phi.combine.weight.zero_()
        h = torch.randn(1, 8, 8, 8)
        assert torch.equal(h + cell.phi(h), h)

    def test_moment_constraints_hold(self):
        net = tiny_model()
        phi = net.decoder.phycell.phi
        kernels = phi.kernels()
        for q, (a, b) in enumerate(phi.signatures):
            moments = kernel_moments(kernels[q])
            for aa in range(5):
                for bb in range(5):
                    if aa + bb <= 2:
                        target = 1.0 if (aa, bb) == (a, b) else 0.0
                        assert abs(moments[aa, bb] - target) <= 1e-6

    def test_moment_constraints_survive_updates(self):
        net = tiny_model()
        phi = net.decoder.phycell.phi
        opt = torch.optim.Adam(phi.parameters(), lr=1e-2)
        h = torch.randn(2, 8, 8, 8)
        for _ in range(5):
            opt.zero_grad()
            loss = (phi(h) ** 2).mean()
            loss.backward()
            opt.step()
            kernels = phi.kernels()
            for q, (a, b) in enumerate(phi.signatures):
                moments = kernel_moments(kernels[q])
                assert abs(moments[a, b] - 1.0) <= 1e-6
                assert abs(moments[0, 0]) <= 1e-6


class TestDecoder:
    def seeded_state(self, net, b=1):
        state = net.init_state(b)
        x0 = lr_batch(b=b, t=1, seed=5)[:, 0]
        state.prev_y = net.upsample_first_frame(net.normalize(x0))
        return state

    def test_determinism(self):
        net = tiny_model()
        state = self.seeded_state(net)
        z = torch.randn(1, 4, 8, 8)
        y1, _ = net.decode_step(z, state)
        y2, _ = net.decode_step(z, state)
        assert torch.equal(y1, y2)

    def test_output_shape(self):
        net = tiny_model()
        state = self.seeded_state(net, b=2)
        y, _ = net.decode_step(torch.randn(2, 4, 8, 8), state)
        assert y.shape == (2, 3, 32, 32)

    def test_default_grid_shape(self):
        torch.manual_seed(0)
        net = m.S3RPModel(m.ModelConfig(latent_channels=2, hidden_channels=4, grid=GridSpec()))
        state = net.init_state(1)
        state.prev_y = torch.zeros(1, 3, 128, 128)
        y, _ = net.decode_step(torch.randn(1, 2, 16, 16), state)
        assert y.shape == (1, 3, 128, 128)

    def test_latent_drives_output(self):
        net = tiny_model()
        state = self.seeded_state(net)
        z = torch.randn(1, 4, 8, 8)
        y1, _ = net.decode_step(z, state)
        y2, _ = net.decode_step(z + 0.5, state)
        assert (y1 - y2).abs().max() > 0

    def test_uninitialized_state_rejected(self):
        net = tiny_model()
        with pytest.raises(ModelError):
            net.decode_step(torch.randn(1, 4, 8, 8), net.init_state(1))


class TestGeneratorOutput:
    def test_replicated_input_recovers_exactly(self):
        net = tiny_model()
        x = torch.randn(2, 3, 8, 8, dtype=torch.float64)
        y = torch.repeat_interleave(torch.repeat_interleave(x, 4, dim=-2), 4, dim=-1)
        assert torch.equal(net.generator_output(y), x)

    def test_constant(self):
        net = tiny_model()
        y = torch.full((1, 3, 32, 32), 1.5)
        assert torch.allclose(net.generator_output(y), torch.full((1, 3, 8, 8), 1.5))

    def test_matches_block_mean_oracle(self):
        net = tiny_model()
        y = torch.randn(1, 3, 32, 32, dtype=torch.float64)
        out = net.generator_output(y)
        for ch in range(3):
            for i in range(8):
                for j in range(8):
                    block = y[0, ch, 4 * i : 4 * i + 4, 4 * j : 4 * j + 4]
                    assert abs(out[0, ch, i, j] - block.mean()) <= 1e-12


class TestRollout:
    def test_interpolation_shapes(self):
        net = tiny_model()
        x = lr_batch(b=1, t=9)
        res = net.rollout(x, noise=0)
        assert res.y_norm.shape == (1, 9, 3, 32, 32)
        assert len(res.steps) == 9

    def test_extrapolation_free_run_length(self):
        net = tiny_model(mode="extrapolation")
        x = lr_batch(b=1, t=9, seed=2)
        res = net.rollout(x, horizon=12, noise=1)
        assert res.y_norm.shape == (1, 12, 3, 32, 32)

    def test_identical_noise_identical_rollout(self):
        net = tiny_model(mode="extrapolation")
        x = lr_batch(b=2, t=6, seed=3)
        a = net.rollout(x, horizon=9, noise=7)
        b = net.rollout(x, horizon=9, noise=7)
        assert torch.equal(a.y_norm, b.y_norm)
        c = net.rollout(x, horizon=9, noise=8)
        assert not torch.equal(a.y_norm, c.y_norm)

    def test_c_only_uses_wind_forecast(self):
        net = tiny_model(mode="c_only")
        x = lr_batch(b=1, t=10, seed=4)
        res = net.rollout(x, horizon=10, observed=6, noise=0)
        assert res.y_norm.shape == (1, 10, 3, 32, 32)
        assert res.n_observed == 6

    def test_mode_mismatch_rejected(self):
        net = tiny_model(mode="interpolation")
        with pytest.raises(ConfigError):
            net.rollout(lr_batch(), mode="extrapolation")

    def test_interpolation_cannot_extrapolate(self):
        net = tiny_model()
        with pytest.raises(ConfigError):
            net.rollout(lr_batch(b=1, t=5), horizon=8)

    def test_free_run_stays_bounded(self):
        net = tiny_model(mode="extrapolation", seed=1)
        x = lr_batch(b=1, t=6, seed=5)
        res = net.rollout(x, horizon=36, noise=2)
        assert torch.isfinite(res.y_norm).all()
        data_range = net.normalize(x).abs().max()
        assert res.y_norm.abs().max() <= 10 * max(float(data_range), 1.0)


class TestCheckpoint:
    def test_round_trip_reproduces_outputs_bitwise(self, tmp_path):
        net = tiny_model(seed=4)
        net.set_normalization([0.1, -0.2, 1.0], [1.5, 0.5, 2.0])
        path = str(tmp_path / "ck.s3ck")
        m.save_checkpoint(net, path, step=17)
        ckpt = m.load_checkpoint(path)
        assert ckpt.step == 17
        net2 = m.model_from_checkpoint(ckpt)
        x = lr_batch(b=1, t=5, seed=6)
        a = net.rollout(x, noise=3)
        b = net2.rollout(x, noise=3)
        assert torch.equal(a.y_norm, b.y_norm)

    def test_bad_magic(self, tmp_path):
        path = str(tmp_path / "junk")
        open(path, "wb").write(b"XXXX" + b"\x00" * 32)
        with pytest.raises(CorruptFileError):
            m.load_checkpoint(path)

    def test_optimizer_state_round_trip(self, tmp_path):
        net = tiny_model(seed=8)
        opt = torch.optim.Adam(net.parameters(), lr=1e-3)
        loss = net.rollout(lr_batch(b=2, t=4, seed=9), noise=0).y_norm.square().mean()
        loss.backward()
        opt.step()
        path = str(tmp_path / "ck.s3ck")
        m.save_checkpoint(net, path, step=1, optimizer=opt)
        ckpt = m.load_checkpoint(path)
        net2 = m.model_from_checkpoint(ckpt)
        opt2 = torch.optim.Adam(net2.parameters(), lr=1e-3)
        opt2.load_state_dict(ckpt.optimizer_state)
        for (k1, v1), (k2, v2) in zip(
            opt.state_dict()["state"].items(), opt2.state_dict()["state"].items()
        ):
            assert k1 == k2
            for key in v1:
                if isinstance(v1[key], torch.Tensor):
                    assert torch.equal(v1[key], v2[key])


def test_invalid_config_rejected():
    with pytest.raises(ConfigError):
        m.ModelConfig(latent_channels=0)
    with pytest.raises(ConfigError):
        m.ModelConfig(mode="nope")
    with pytest.raises(ConfigError):
        m.ModelConfig(kernel_size=4)
    with pytest.raises(ConfigError):
        m.ModelConfig(grid=GridSpec(n_hr=48, n_lr=8, spacing_lr=1 / 8))  # ratio 6
