"""Training objective: reconstruction + latent divergence + physics terms.

The reconstruction compares downsampled decoder outputs with the observed LR
frames in normalized space; the divergence between the per-step posterior and
the learned conditional prior is an inverse-multiquadric MMD; the physics
term penalizes the transport residual ``|d_t c + div(c u)|^2`` and the wind
divergence ``|div u|^2`` of the denormalized HR rollout, using the shared
central/forward stencils. Everything consumes LR data and model outputs
only; high-resolution ground truth never enters.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from . import diffops
from .errors import ConfigError, DataError, ModelError
from .model import RolloutResult, S3RPModel, _as_generator


@dataclass(frozen=True)
class LossWeights:
    """``total = recon + mmd_weight * mmd + phys_weight * (adv + div_weight * div)``.

    ``mmd_bandwidth`` overrides the inverse-multiquadric scale C (default:
    2 * latent dimensionality, matching a unit-variance prior).
    """

    mmd_weight: float = 1.0
    div_weight: float = 1.0
    phys_weight: float = 0.1
    mmd_bandwidth: float | None = None

    def __post_init__(self) -> None:
        if min(self.mmd_weight, self.div_weight, self.phys_weight) < 0:
            raise ConfigError("loss weights must be >= 0")
        if self.mmd_bandwidth is not None and self.mmd_bandwidth <= 0:
            raise ConfigError("mmd_bandwidth must be positive")


@dataclass
class LossBreakdown:
    recon: torch.Tensor
    mmd: torch.Tensor
    phys_adv: torch.Tensor
    phys_div: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict:
        return {
            "recon": float(self.recon.detach()),
            "mmd": float(self.mmd.detach()),
            "phys_adv": float(self.phys_adv.detach()),
            "phys_div": float(self.phys_div.detach()),
            "total": float(self.total.detach()),
        }


def reconstruction_loss(target: torch.Tensor, generated: torch.Tensor) -> torch.Tensor:
    """Mean squared difference over pixels and channels."""
    if target.shape != generated.shape:
        raise DataError(f"shape mismatch: {tuple(target.shape)} vs {tuple(generated.shape)}")
    return torch.mean((target - generated) ** 2)


def mmd(
    samples_q: torch.Tensor,
    samples_p: torch.Tensor,
    bandwidth: float | None = None,
    biased: bool = False,
    clamp: bool = False,
) -> torch.Tensor:
    """Squared maximum mean discrepancy with the inverse-multiquadric kernel
    ``k(a, b) = C / (C + |a - b|^2)``.

    The default estimator is the unbiased U-statistic (diagonal terms
    excluded), which can be negative for close distributions; ``biased=True``
    uses the V-statistic, which is exactly zero for identical sample sets.
    ``clamp=True`` floors the value at zero for reporting; leave it off when
    the value is differentiated.
    """
    q = samples_q.reshape(samples_q.shape[0], -1)
    p = samples_p.reshape(samples_p.shape[0], -1)
    if q.shape[0] < 2 or p.shape[0] < 2:
        raise DataError("mmd needs at least 2 samples per set")
    if q.shape[1] != p.shape[1]:
        raise DataError("sample sets have different dimensionality")
    c = bandwidth if bandwidth is not None else 2.0 * q.shape[1]

    def kernel(a, b):
        d2 = torch.cdist(a, b) ** 2
        return c / (c + d2)

    kqq, kpp, kqp = kernel(q, q), kernel(p, p), kernel(q, p)
    n, m = q.shape[0], p.shape[0]
    if biased:
        val = kqq.mean() + kpp.mean() - 2.0 * kqp.mean()
    else:
        sum_qq = (kqq.sum() - kqq.diagonal().sum()) / (n * (n - 1))
        sum_pp = (kpp.sum() - kpp.diagonal().sum()) / (m * (m - 1))
        val = sum_qq + sum_pp - 2.0 * kqp.mean()
    if clamp:
        val = torch.clamp(val, min=0.0)
    return val


def physics_loss(
    yhat_seq: torch.Tensor, ds: float, dt: float, skip_first: bool = True
) -> tuple[torch.Tensor, torch.Tensor]:
    """Transport and divergence residuals of an HR rollout ``[B, T, 3, H, W]``.

    Returns means of ``(d_t c + div(c u))^2`` over valid transitions and of
    ``div(u)^2`` over frames. ``skip_first`` drops frame 0 (the bilinear
    initialization is not a prediction of the dynamics). Differentiable in
    the input.
    """
    if yhat_seq.dim() == 4:
        yhat_seq = yhat_seq[None]
    needed = 3 if skip_first else 2
    if yhat_seq.shape[1] < needed:
        raise DataError(f"physics loss needs at least {needed} frames, got {yhat_seq.shape[1]}")
    y = yhat_seq[:, 1:] if skip_first else yhat_seq
    u = y[:, :, :2].movedim(2, -1)  # [B, T', H, W, 2]
    c = y[:, :, 2]  # [B, T', H, W]

    dcdt = (c[:, 1:] - c[:, :-1]) / dt
    adv = diffops.advective_flux_div(c[:, :-1], u[:, :-1], ds)
    phys_adv = torch.mean((dcdt + adv) ** 2)
    phys_div = torch.mean(diffops.divergence(u, ds) ** 2)
    return phys_adv, phys_div


def total_loss(
    batch_lr: torch.Tensor,
    model: S3RPModel,
    weights: LossWeights,
    noise=0,
    dt: float = 1.0,
    rollout: RolloutResult | None = None,
) -> LossBreakdown:
    """Full objective on a physical-units LR batch ``[B, T, 3, n, n]``.

    Reconstruction is summed over emitted steps t = 1..T-1 (mean within a
    step); the MMD between per-step posterior samples and fresh samples from
    the conditional prior is summed over all encoder steps; the physics terms
    are evaluated on the denormalized HR rollout. Consumes LR data only: HR
    inputs are rejected by shape.
    """
    n_lr = model.cfg.grid.n_lr
    if batch_lr.dim() != 5 or batch_lr.shape[-1] != n_lr or batch_lr.shape[-2] != n_lr:
        raise ModelError(
            f"total_loss consumes LR sequences [B, T, 3, {n_lr}, {n_lr}]; got {tuple(batch_lr.shape)}"
        )
    if batch_lr.shape[0] < 2:
        raise DataError("need batch size >= 2 for the divergence estimator")
    p = next(model.parameters())
    gen = _as_generator(noise, device=p.device)
    if rollout is None:
        rollout = model.rollout(batch_lr, noise=gen)
    x_norm = model.normalize(batch_lr.to(device=p.device, dtype=p.dtype))

    recon = batch_lr.new_zeros((), dtype=p.dtype)
    t_out = rollout.y_norm.shape[1]
    for t in range(1, t_out):
        recon = recon + reconstruction_loss(
            x_norm[:, t], model.generator_output(rollout.y_norm[:, t])
        )

    mmd_sum = batch_lr.new_zeros((), dtype=p.dtype)
    for step in rollout.steps:
        eps = torch.randn(step.mu_p.shape, generator=gen, device=p.device, dtype=p.dtype)
        prior_samples = step.mu_p + step.sigma_p * eps
        mmd_sum = mmd_sum + mmd(step.z, prior_samples, bandwidth=weights.mmd_bandwidth)

    y_phys = model.denormalize(rollout.y_norm)
    ds = model.cfg.grid.spacing_hr
    phys_adv, phys_div = physics_loss(y_phys, ds=ds, dt=dt)

    total = (
        recon
        + weights.mmd_weight * mmd_sum
        + weights.phys_weight * (phys_adv + weights.div_weight * phys_div)
    )
    return LossBreakdown(recon=recon, mmd=mmd_sum, phys_adv=phys_adv, phys_div=phys_div, total=total)
