"""Recurrent Wasserstein autoencoder for probabilistic 8x super-resolution.

The encoder is a probabilistic ConvLSTM over LR frames emitting per-step
latent mean/std fields; a separate recurrent network provides the conditional
prior over latents; the decoder is deterministic, combining a PhyCell branch
(moment-constrained convolutions approximating spatial derivatives, with a
gated input correction) and a ConvLSTM branch for residual dynamics, followed
by a learned transposed-convolution ladder from the LR-shaped latent to the
HR frame. The first HR frame is always the bilinear upsampling of the first
LR frame.

Three rollout modes share the weights: ``interpolation`` reconstructs frame t
from LR frames 0..t, ``extrapolation`` predicts frame t+1 from frames 0..t
(free-running from the learned prior beyond the observed window), and
``c_only`` predicts the next concentration while super-resolving a given LR
wind forecast.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .data import CorruptFileError, VersionError, block_mean
from .errors import ConfigError, ModelError
from .grid import GridSpec

CHECKPOINT_MAGIC = b"S3CK"
CHECKPOINT_VERSION = 1

MODES = ("interpolation", "extrapolation", "c_only")


@dataclass(frozen=True)
class ModelConfig:
    latent_channels: int = 16
    hidden_channels: int = 64
    n_layers: int = 1
    phycell_order: int = 2
    phycell_kernel: int = 5
    kernel_size: int = 3
    mode: str = "interpolation"
    grid: GridSpec = field(default_factory=GridSpec)

    def __post_init__(self) -> None:
        if self.latent_channels < 1 or self.hidden_channels < 1 or self.n_layers < 1:
            raise ConfigError("channel and layer counts must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.phycell_kernel % 2 == 0 or self.kernel_size % 2 == 0:
            raise ConfigError("kernel sizes must be odd")
        if self.phycell_order < 1 or self.phycell_order > self.phycell_kernel - 1:
            raise ConfigError("phycell_order must be in [1, kernel-1]")
        r = self.grid.ratio
        if r & (r - 1):
            raise ConfigError(f"grid ratio must be a power of two, got {r}")


@dataclass
class LatentState:
    """Per-step latent record: sampled z plus posterior and prior moments."""

    z: torch.Tensor
    mu: torch.Tensor
    sigma: torch.Tensor
    mu_p: torch.Tensor
    sigma_p: torch.Tensor


@dataclass
class RecurrentState:
    """All recurrent memory. ``reset`` state is all zeros; ``prev_y`` stays
    unset until the rollout seeds it with the bilinear first frame."""

    enc: list[tuple[torch.Tensor, torch.Tensor]]
    prior: tuple[torch.Tensor, torch.Tensor]
    prev_z: torch.Tensor
    phy_h: torch.Tensor
    dec: list[tuple[torch.Tensor, torch.Tensor]]
    prev_y: torch.Tensor | None = None


@dataclass
class RolloutResult:
    """Normalized HR outputs plus the per-step latent records."""

    y_norm: torch.Tensor  # [B, T_out, 3, H, W]
    steps: list[LatentState]
    n_observed: int


class ConvLSTMCell(nn.Module):
    def __init__(self, in_ch: int, hid_ch: int, kernel: int):
        super().__init__()
        self.hid_ch = hid_ch
        self.gates = nn.Conv2d(
            in_ch + hid_ch, 4 * hid_ch, kernel, padding=kernel // 2, padding_mode="circular"
        )
        # Positive forget bias keeps early memories alive.
        with torch.no_grad():
            self.gates.bias[hid_ch : 2 * hid_ch].fill_(1.0)

    def forward(self, x, state):
        h, c = state
        i, f, o, g = torch.chunk(self.gates(torch.cat([x, h], dim=1)), 4, dim=1)
        c_new = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
        h_new = torch.sigmoid(o) * torch.tanh(c_new)
        return h_new, c_new


def derivative_signatures(order: int) -> list[tuple[int, int]]:
    """Mixed-derivative signatures (a, b) with 1 <= a+b <= order."""
    return [(a, b) for total in range(1, order + 1) for a in range(total + 1) for b in [total - a]]


class MomentConstrainedConv(nn.Module):
    """Depthwise convolutions whose kernels approximate spatial derivatives.

    Each kernel is parameterized in moment space: the moments of total order
    <= ``order`` are pinned to the derivative's signature (1 at its own (a,b),
    0 elsewhere), while the higher moments are free parameters. The kernel is
    the inverse moment transform of that matrix, so the constraint holds
    exactly after every optimizer update. A learned 1x1 combination mixes the
    per-channel derivative responses back to ``channels`` outputs.

    The moment transform is kept in float64 (as plain tensors, outside the
    module dtype) so the pinned moments survive to ~1e-13 even when the rest
    of the model runs in float32; the convolution itself runs in float64 and
    casts back, which is cheap at LR field sizes.
    """

    def __init__(self, channels: int, order: int, kernel: int):
        super().__init__()
        self.channels = channels
        self.kernel = kernel
        self.signatures = derivative_signatures(order)
        n_der = len(self.signatures)

        coords = np.arange(kernel, dtype=np.float64) - kernel // 2
        a_mat = np.stack([coords**p / math.factorial(p) for p in range(kernel)])
        self._ainv = torch.from_numpy(np.linalg.inv(a_mat))

        pinned = np.zeros((n_der, kernel, kernel))
        mask = np.zeros((kernel, kernel), dtype=bool)
        for a in range(kernel):
            for b in range(kernel):
                if a + b <= order:
                    mask[a, b] = True
        for q, (a, b) in enumerate(self.signatures):
            pinned[q, a, b] = 1.0
        self._pinned = torch.from_numpy(pinned)
        self._free_mask = torch.from_numpy(~mask)
        n_free = int(self._free_mask.sum())
        self.free_moments = nn.Parameter(0.01 * torch.randn(n_der, n_free, dtype=torch.float64))
        self.combine = nn.Conv2d(channels * n_der, channels, 1, bias=False)
        # Derivative kernels have large L1 norms; a small mixing init keeps
        # the recurrence h + Phi(h) contractive until training shapes it.
        nn.init.normal_(self.combine.weight, std=0.02)

    def kernels(self) -> torch.Tensor:
        """Constrained kernels ``[n_der, kernel, kernel]`` in float64."""
        moments = self._pinned.clone()
        moments[:, self._free_mask] = self.free_moments
        ainv = self._ainv
        return torch.einsum("au,quv,bv->qab", ainv, moments, ainv)

    def forward(self, h: torch.Tensor) -> torch.Tensor:
        k = self.kernels()
        n_der = k.shape[0]
        weight = k[:, None].repeat(self.channels, 1, 1, 1)
        pad = self.kernel // 2
        hp = F.pad(h.to(torch.float64), (pad, pad, pad, pad), mode="circular")
        resp = F.conv2d(hp, weight, groups=self.channels)
        return self.combine(resp.to(h.dtype))


class PhyCell(nn.Module):
    """Recurrent cell with a physical prediction and a gated correction.

    Prediction: ``h_tilde = h + Phi(h)`` where ``Phi`` combines the
    moment-constrained derivative responses of the hidden field. Correction:
    ``h' = h_tilde + G * (e - h_tilde)`` with a learned gate ``G in (0, 1)``
    computed from the prediction and the encoded input ``e``.
    """

    def __init__(self, channels: int, order: int, kernel: int, gate_kernel: int):
        super().__init__()
        self.phi = MomentConstrainedConv(channels, order, kernel)
        self.gate = nn.Conv2d(
            2 * channels, channels, gate_kernel, padding=gate_kernel // 2, padding_mode="circular"
        )
        with torch.no_grad():
            self.gate.bias.fill_(1.0)  # start trusting the encoded input

    def forward(self, h: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        h_tilde = h + self.phi(h)
        g = torch.sigmoid(self.gate(torch.cat([h_tilde, e], dim=1)))
        return h_tilde + g * (e - h_tilde)


def _conv(in_ch, out_ch, kernel):
    return nn.Conv2d(in_ch, out_ch, kernel, padding=kernel // 2, padding_mode="circular")


class _Encoder(nn.Module):
    def __init__(self, cfg: ModelConfig, in_ch: int = 3):
        super().__init__()
        k, hid = cfg.kernel_size, cfg.hidden_channels
        self.stem = _conv(in_ch, hid, k)
        self.cells = nn.ModuleList(
            [ConvLSTMCell(hid, hid, k) for _ in range(cfg.n_layers)]
        )
        self.head_mu = _conv(hid, cfg.latent_channels, k)
        self.head_sigma = _conv(hid, cfg.latent_channels, k)

    def forward(self, x, states):
        h = F.leaky_relu(self.stem(x), 0.1)
        new_states = []
        for cell, st in zip(self.cells, states):
            h, c = cell(h, st)
            new_states.append((h, c))
        mu = self.head_mu(h)
        sigma = F.softplus(self.head_sigma(h)) + 1e-6
        return mu, sigma, new_states


class _Prior(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k, hid, lat = cfg.kernel_size, cfg.hidden_channels, cfg.latent_channels
        self.stem = _conv(lat, hid, k)
        self.cell = ConvLSTMCell(hid, hid, k)
        self.head_mu = _conv(hid, lat, k)
        self.head_sigma = _conv(hid, lat, k)

    def forward(self, prev_z, state):
        h = F.leaky_relu(self.stem(prev_z), 0.1)
        h, c = self.cell(h, state)
        mu = self.head_mu(h)
        sigma = F.softplus(self.head_sigma(h)) + 1e-6
        return mu, sigma, (h, c)


class _Decoder(nn.Module):
    """Deterministic decoder: PhyCell + ConvLSTM at LR scale, then a
    transposed-convolution ladder (x2 per stage) to the HR mesh, plus a
    bicubic skip from an LR estimate decoded out of the latent features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        k, hid, lat = cfg.kernel_size, cfg.hidden_channels, cfg.latent_channels
        self.n_stages = int(round(math.log2(cfg.grid.ratio)))
        downs = []
        ch = 3
        for stage in range(self.n_stages):
            downs.append(nn.Conv2d(ch, hid, 4, stride=2, padding=1, padding_mode="circular"))
            # Saturating last stage: keeps the output->input feedback loop
            # from amplifying during free-running generation.
            downs.append(nn.Tanh() if stage == self.n_stages - 1 else nn.LeakyReLU(0.1))
            ch = hid
        self.prev_enc = nn.Sequential(*downs)
        self.fuse = _conv(lat + hid, hid, k)
        self.phycell = PhyCell(hid, cfg.phycell_order, cfg.phycell_kernel, k)
        self.cells = nn.ModuleList([ConvLSTMCell(hid, hid, k) for _ in range(cfg.n_layers)])
        self.merge = _conv(2 * hid, hid, k)
        self.lr_head = _conv(hid, 3, k)
        ladder = []
        for _ in range(self.n_stages):
            ladder.append(nn.ConvTranspose2d(hid, hid, 4, stride=2, padding=1))
            ladder.append(nn.LeakyReLU(0.1))
        self.ladder = nn.Sequential(*ladder)
        self.head = _conv(hid, 3, k)
        with torch.no_grad():
            # Start near the bicubic skip so early training refines, not
            # replaces, the smooth estimate.
            self.head.weight.mul_(0.1)
            self.head.bias.zero_()
        self.ratio = cfg.grid.ratio

    def forward(self, z, prev_y, phy_h, lstm_states):
        prev_feat = self.prev_enc(prev_y)
        e = F.leaky_relu(self.fuse(torch.cat([z, prev_feat], dim=1)), 0.1)
        phy_h = self.phycell(phy_h, e)
        h = e
        new_states = []
        for cell, st in zip(self.cells, lstm_states):
            h, c = cell(h, st)
            new_states.append((h, c))
        merged = F.leaky_relu(self.merge(torch.cat([phy_h, h], dim=1)), 0.1)
        lr_est = self.lr_head(merged)
        skip = F.interpolate(lr_est, scale_factor=self.ratio, mode="bicubic", align_corners=False)
        y = skip + self.head(self.ladder(merged))
        return y, phy_h, new_states


def _as_generator(noise, device="cpu") -> torch.Generator:
    if isinstance(noise, torch.Generator):
        return noise
    gen = torch.Generator(device=device)
    gen.manual_seed(int(noise))
    return gen


class S3RPModel(nn.Module):
    """Recurrent probabilistic encoder, learned recurrent prior, and
    deterministic two-branch decoder. Works on normalized fields; the
    per-channel normalization statistics are stored as buffers."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.encoder = _Encoder(cfg)
        self.prior = _Prior(cfg)
        self.decoder = _Decoder(cfg)
        self.register_buffer("norm_mean", torch.zeros(3))
        self.register_buffer("norm_std", torch.ones(3))

    # -- normalization ----------------------------------------------------

    def set_normalization(self, mean, std) -> None:
        with torch.no_grad():
            self.norm_mean.copy_(torch.as_tensor(mean, dtype=self.norm_mean.dtype))
            self.norm_std.copy_(torch.as_tensor(std, dtype=self.norm_std.dtype))

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        """Per-channel affine normalization of a ``[..., 3, N, N]`` tensor."""
        shape = (3, 1, 1)
        return (x - self.norm_mean.view(shape)) / self.norm_std.view(shape)

    def denormalize(self, y: torch.Tensor) -> torch.Tensor:
        shape = (3, 1, 1)
        return y * self.norm_std.view(shape) + self.norm_mean.view(shape)

    # -- single steps ------------------------------------------------------

    def init_state(self, batch: int, device=None, dtype=None) -> RecurrentState:
        p = next(self.parameters())
        device = device or p.device
        dtype = dtype or p.dtype
        hid, lat = self.cfg.hidden_channels, self.cfg.latent_channels
        n = self.cfg.grid.n_lr

        def zeros(ch):
            return torch.zeros(batch, ch, n, n, device=device, dtype=dtype)

        return RecurrentState(
            enc=[(zeros(hid), zeros(hid)) for _ in range(self.cfg.n_layers)],
            prior=(zeros(hid), zeros(hid)),
            prev_z=zeros(lat),
            phy_h=zeros(hid),
            dec=[(zeros(hid), zeros(hid)) for _ in range(self.cfg.n_layers)],
            prev_y=None,
        )

    def encode_step(self, x_t: torch.Tensor, state: RecurrentState):
        """One encoder step on a normalized LR frame ``[B, 3, n, n]``."""
        n = self.cfg.grid.n_lr
        if x_t.shape[-2:] != (n, n) or x_t.shape[-3] != 3:
            raise ModelError(f"expected [B, 3, {n}, {n}] frame, got {tuple(x_t.shape)}")
        mu, sigma, enc = self.encoder(x_t, state.enc)
        new = RecurrentState(
            enc=enc, prior=state.prior, prev_z=state.prev_z,
            phy_h=state.phy_h, dec=state.dec, prev_y=state.prev_y,
        )
        return mu, sigma, new

    @staticmethod
    def sample_latent(mu: torch.Tensor, sigma: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
        return mu + sigma * noise

    def prior_step(self, state: RecurrentState):
        mu_p, sigma_p, prior = self.prior(state.prev_z, state.prior)
        new = RecurrentState(
            enc=state.enc, prior=prior, prev_z=state.prev_z,
            phy_h=state.phy_h, dec=state.dec, prev_y=state.prev_y,
        )
        return mu_p, sigma_p, new

    def phycell_step(self, h: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        return self.decoder.phycell(h, e)

    def decode_step(self, z: torch.Tensor, state: RecurrentState):
        """One decoder step; requires ``state.prev_y`` to be seeded."""
        if state.prev_y is None:
            raise ModelError("decoder state is uninitialized: prev_y has not been seeded")
        y, phy_h, dec = self.decoder(z, state.prev_y, state.phy_h, state.dec)
        new = RecurrentState(
            enc=state.enc, prior=state.prior, prev_z=state.prev_z,
            phy_h=phy_h, dec=dec, prev_y=y,
        )
        return y, new

    def generator_output(self, y_hr: torch.Tensor) -> torch.Tensor:
        """Block-mean downsampling of an HR frame: G(z) = DS(decoder(z))."""
        return block_mean(y_hr.movedim(-3, -1), self.cfg.grid.ratio).movedim(-1, -3)

    def upsample_first_frame(self, x0: torch.Tensor) -> torch.Tensor:
        """Bilinear upsampling used for the initial HR frame."""
        return F.interpolate(x0, scale_factor=self.cfg.grid.ratio, mode="bilinear", align_corners=False)

    # -- rollout -----------------------------------------------------------

    def rollout(
        self,
        x_seq: torch.Tensor,
        mode: str | None = None,
        horizon: int | None = None,
        noise=0,
        observed: int | None = None,
    ) -> RolloutResult:
        """Run the network over a physical-units LR sequence ``[B, T, 3, n, n]``.

        ``horizon`` is the total number of output frames (default: T).
        In extrapolation mode, steps beyond the observed window draw z from
        the learned prior. In c_only mode the encoder consumes the current
        concentration together with the next-step wind; ``observed`` bounds
        the window where the concentration channel is taken from ``x_seq``
        (beyond it, the model's own downsampled prediction is fed back while
        the provided wind forecast is still used).
        """
        mode = mode or self.cfg.mode
        if mode != self.cfg.mode:
            raise ConfigError(f"model was built for mode {self.cfg.mode!r}, asked for {mode!r}")
        if x_seq.dim() != 5:
            raise ModelError(f"expected [B, T, 3, n, n] input, got {tuple(x_seq.shape)}")
        b, t_in = x_seq.shape[0], x_seq.shape[1]
        horizon = t_in if horizon is None else int(horizon)
        if horizon < 1:
            raise ConfigError("horizon must be >= 1")
        observed = t_in if observed is None else int(observed)
        if observed > t_in:
            raise ConfigError("observed window exceeds the provided sequence")
        if mode == "interpolation" and horizon > t_in:
            raise ConfigError("interpolation mode cannot run beyond the observed window")
        if mode == "c_only" and horizon > t_in:
            raise ConfigError("c_only mode needs LR wind through the full horizon")

        p = next(self.parameters())
        x = self.normalize(x_seq.to(device=p.device, dtype=p.dtype))
        gen = _as_generator(noise, device=p.device)
        state = self.init_state(b, device=p.device, dtype=p.dtype)
        state.prev_y = self.upsample_first_frame(x[:, 0])

        outputs = [state.prev_y]
        steps: list[LatentState] = []

        def draw(shape_like):
            return torch.randn(
                shape_like.shape, generator=gen, device=shape_like.device, dtype=shape_like.dtype
            )

        if mode == "interpolation":
            for t in range(horizon):
                mu_p, sigma_p, state = self.prior_step(state)
                mu, sigma, state = self.encode_step(x[:, t], state)
                z = self.sample_latent(mu, sigma, draw(mu))
                state.prev_z = z
                steps.append(LatentState(z=z, mu=mu, sigma=sigma, mu_p=mu_p, sigma_p=sigma_p))
                if t >= 1:
                    y, state = self.decode_step(z, state)
                    outputs.append(y)
            n_obs = horizon
        else:
            for t in range(horizon - 1):
                mu_p, sigma_p, state = self.prior_step(state)
                if mode == "extrapolation":
                    if t < observed:
                        mu, sigma, state = self.encode_step(x[:, t], state)
                        z = self.sample_latent(mu, sigma, draw(mu))
                    else:
                        mu, sigma = mu_p, sigma_p
                        z = self.sample_latent(mu_p, sigma_p, draw(mu_p))
                else:  # c_only: concentration at t plus wind at t+1
                    if t < observed:
                        c_now = x[:, t, 2:3]
                    else:
                        c_now = self.generator_output(outputs[t])[:, 2:3]
                    frame = torch.cat([x[:, t + 1, :2], c_now], dim=1)
                    mu, sigma, state = self.encode_step(frame, state)
                    z = self.sample_latent(mu, sigma, draw(mu))
                state.prev_z = z
                steps.append(LatentState(z=z, mu=mu, sigma=sigma, mu_p=mu_p, sigma_p=sigma_p))
                y, state = self.decode_step(z, state)
                outputs.append(y)
            n_obs = min(observed, horizon)

        return RolloutResult(y_norm=torch.stack(outputs, dim=1), steps=steps, n_observed=n_obs)


@dataclass
class Checkpoint:
    """Everything needed to reproduce a model (and resume training)."""

    model_cfg: ModelConfig
    state: dict
    step: int
    optimizer_state: dict | None
    torch_rng: bytes | None
    numpy_rng: dict | None


def _cfg_to_dict(cfg: ModelConfig) -> dict:
    g = cfg.grid
    return {
        "latent_channels": cfg.latent_channels,
        "hidden_channels": cfg.hidden_channels,
        "n_layers": cfg.n_layers,
        "phycell_order": cfg.phycell_order,
        "phycell_kernel": cfg.phycell_kernel,
        "kernel_size": cfg.kernel_size,
        "mode": cfg.mode,
        "grid": {"n_hr": g.n_hr, "n_lr": g.n_lr, "spacing_lr": g.spacing_lr, "origin": list(g.origin)},
    }


def _cfg_from_dict(d: dict) -> ModelConfig:
    g = d["grid"]
    return ModelConfig(
        latent_channels=d["latent_channels"],
        hidden_channels=d["hidden_channels"],
        n_layers=d["n_layers"],
        phycell_order=d["phycell_order"],
        phycell_kernel=d["phycell_kernel"],
        kernel_size=d["kernel_size"],
        mode=d["mode"],
        grid=GridSpec(n_hr=g["n_hr"], n_lr=g["n_lr"], spacing_lr=g["spacing_lr"], origin=tuple(g["origin"])),
    )


_DTYPE_CODES = {"f4": torch.float32, "f8": torch.float64, "u1": torch.uint8, "i8": torch.int64}


def _tensor_bytes(t: torch.Tensor) -> tuple[bytes, str]:
    a = t.detach().cpu().numpy()
    code = {"float32": "f4", "float64": "f8", "uint8": "u1", "int64": "i8"}[str(a.dtype)]
    return np.ascontiguousarray(a).astype(f"<{code}").tobytes(), code


def save_checkpoint(
    model: S3RPModel,
    path: str,
    step: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
    torch_rng: bytes | None = None,
    numpy_rng: dict | None = None,
) -> None:
    """Write magic, version, length-prefixed JSON header, then the named
    arrays (model state, then optimizer state) little-endian."""
    entries: list[tuple[str, torch.Tensor]] = list(model.state_dict().items())
    opt_meta = None
    if optimizer is not None:
        opt_state = optimizer.state_dict()
        opt_meta = {"param_groups": opt_state["param_groups"], "tensors": [], "scalars": {}}
        for pid, st in opt_state["state"].items():
            for key, val in st.items():
                name = f"opt.{pid}.{key}"
                if isinstance(val, torch.Tensor):
                    entries.append((name, val))
                    opt_meta["tensors"].append(name)
                else:
                    opt_meta["scalars"][name] = val
    if torch_rng is not None:
        entries.append(("rng.torch", torch.frombuffer(bytearray(torch_rng), dtype=torch.uint8).clone()))

    manifest = []
    blobs = []
    for name, tensor in entries:
        raw, code = _tensor_bytes(tensor)
        manifest.append({"name": name, "shape": list(tensor.shape), "dtype": code})
        blobs.append(raw)
    header = {
        "config": _cfg_to_dict(model.cfg),
        "step": step,
        "manifest": manifest,
        "optimizer": opt_meta,
        "numpy_rng": numpy_rng,
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for raw in blobs:
            f.write(raw)


def _read_exact(f: io.BufferedReader, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptFileError(f"truncated checkpoint while reading {what}")
    return buf


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != CHECKPOINT_MAGIC:
            raise CorruptFileError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != CHECKPOINT_VERSION:
            raise VersionError(f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
        (n,) = struct.unpack("<Q", _read_exact(f, 8, "header length"))
        try:
            header = json.loads(_read_exact(f, n, "header").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptFileError(f"malformed checkpoint header: {exc}") from exc
        arrays: dict[str, torch.Tensor] = {}
        for entry in header["manifest"]:
            shape = tuple(entry["shape"])
            code = entry["dtype"]
            count = int(np.prod(shape)) if shape else 1
            raw = _read_exact(f, count * np.dtype(code).itemsize, entry["name"])
            arr = np.frombuffer(raw, dtype=f"<{code}").reshape(shape).copy()
            arrays[entry["name"]] = torch.from_numpy(arr).to(_DTYPE_CODES[code])

    cfg = _cfg_from_dict(header["config"])
    state = {k: v for k, v in arrays.items() if not k.startswith(("opt.", "rng."))}
    optimizer_state = None
    if header["optimizer"] is not None:
        meta = header["optimizer"]
        opt_state: dict = {"param_groups": meta["param_groups"], "state": {}}
        for name in meta["tensors"]:
            _, pid, key = name.split(".", 2)
            opt_state["state"].setdefault(int(pid), {})[key] = arrays[name]
        for name, val in meta["scalars"].items():
            _, pid, key = name.split(".", 2)
            opt_state["state"].setdefault(int(pid), {})[key] = val
        optimizer_state = opt_state
    torch_rng = bytes(arrays["rng.torch"].numpy().tobytes()) if "rng.torch" in arrays else None
    return Checkpoint(
        model_cfg=cfg,
        state=state,
        step=header["step"],
        optimizer_state=optimizer_state,
        torch_rng=torch_rng,
        numpy_rng=header["numpy_rng"],
    )


def model_from_checkpoint(ckpt: Checkpoint) -> S3RPModel:
    model = S3RPModel(ckpt.model_cfg)
    model.load_state_dict(ckpt.state)
    return model
