"""Self-supervised training loop over LR sequences.

The trainer consumes only the dataset's LR training surface. Each step
samples a batch of fixed-length chunks, evaluates the full objective,
clips the global gradient norm, and steps an adaptive-moment optimizer.
Checkpoints carry the optimizer state and both RNG states, so a resumed run
reproduces the uninterrupted trajectory bit for bit in single-stream mode.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np
import torch

from .data import Dataset
from .errors import ConfigError, NumericError
from .model import Checkpoint, ModelConfig, S3RPModel, load_checkpoint, model_from_checkpoint, save_checkpoint
from .objective import LossWeights, total_loss

LOG_COLUMNS = ("step", "recon", "mmd", "phys_adv", "phys_div", "total")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 4
    seq_len: int = 30
    lr: float = 2e-4
    optimizer: str = "adam"
    max_steps: int = 2000
    checkpoint_interval: int = 500
    grad_clip: float = 1.0
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.optimizer != "adam":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.max_steps < 0 or self.checkpoint_interval < 1:
            raise ConfigError("max_steps must be >= 0 and checkpoint_interval >= 1")
        if self.grad_clip <= 0:
            raise ConfigError("grad_clip must be positive")


def _sample_batch(
    sequences: list[np.ndarray], batch_size: int, seq_len: int, rng: np.random.Generator
) -> torch.Tensor:
    """Stack random same-length chunks: ``[B, T, 3, n, n]`` physical units."""
    t_min = min(s.shape[0] for s in sequences)
    chunk = min(seq_len, t_min)
    out = []
    for _ in range(batch_size):
        seq = sequences[int(rng.integers(0, len(sequences)))]
        start = int(rng.integers(0, seq.shape[0] - chunk + 1))
        out.append(seq[start : start + chunk])
    arr = np.stack(out)  # [B, T, n, n, 3]
    return torch.from_numpy(arr).permute(0, 1, 4, 2, 3).contiguous()


class _LossLog:
    def __init__(self, path: str, append: bool):
        exists = os.path.exists(path) and append
        self._fh = open(path, "a" if append else "w", newline="")
        self._writer = csv.writer(self._fh)
        if not exists:
            self._writer.writerow(LOG_COLUMNS)

    def write(self, step: int, values: dict) -> None:
        self._writer.writerow([step] + [f"{values[k]:.8e}" for k in LOG_COLUMNS[1:]])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def _run_loop(
    model: S3RPModel,
    optimizer: torch.optim.Optimizer,
    train_cfg: TrainConfig,
    dataset: Dataset,
    out_dir: str,
    weights: LossWeights,
    start_step: int,
    noise_gen: torch.Generator,
    batch_rng: np.random.Generator,
    append_log: bool,
) -> Checkpoint:
    os.makedirs(out_dir, exist_ok=True)
    sequences = dataset.train_lr_arrays()
    log = _LossLog(os.path.join(out_dir, "loss_log.csv"), append=append_log)

    def checkpoint(step: int, name: str) -> str:
        path = os.path.join(out_dir, name)
        save_checkpoint(
            model,
            path,
            step=step,
            optimizer=optimizer,
            torch_rng=bytes(noise_gen.get_state().numpy().tobytes()),
            numpy_rng=batch_rng.bit_generator.state,
        )
        return path

    step = start_step
    try:
        while step < train_cfg.max_steps:
            batch = _sample_batch(sequences, train_cfg.batch_size, train_cfg.seq_len, batch_rng)
            breakdown = total_loss(batch, model, weights, noise=noise_gen, dt=dataset.dt)
            if not torch.isfinite(breakdown.total):
                checkpoint(step, "diagnostic_nan.s3ck")
                raise NumericError(
                    f"non-finite loss at step {step}: {breakdown.as_floats()}; "
                    f"diagnostic state dumped to {out_dir}/diagnostic_nan.s3ck"
                )
            optimizer.zero_grad()
            breakdown.total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
            optimizer.step()
            step += 1
            log.write(step, breakdown.as_floats())
            if step % train_cfg.checkpoint_interval == 0 and step < train_cfg.max_steps:
                checkpoint(step, f"ckpt_{step:07d}.s3ck")
        final_path = checkpoint(step, "ckpt_final.s3ck")
    finally:
        log.close()
    return load_checkpoint(final_path)


def train(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: Dataset,
    out_dir: str,
    weights: LossWeights = LossWeights(),
) -> Checkpoint:
    """Train a fresh model; returns the final checkpoint (also on disk as
    ``out_dir/ckpt_final.s3ck``, with a CSV loss log alongside)."""
    torch.manual_seed(train_cfg.seed)
    model = S3RPModel(model_cfg)
    model.set_normalization(dataset.norm_mean, dataset.norm_std)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    noise_gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    batch_rng = np.random.default_rng(train_cfg.seed + 2)
    return _run_loop(
        model, optimizer, train_cfg, dataset, out_dir, weights,
        start_step=0, noise_gen=noise_gen, batch_rng=batch_rng, append_log=False,
    )


def resume(
    checkpoint_path: str,
    train_cfg: TrainConfig,
    dataset: Dataset,
    out_dir: str,
    weights: LossWeights = LossWeights(),
) -> Checkpoint:
    """Continue training from a checkpoint up to ``train_cfg.max_steps``.

    Optimizer moments and both RNG streams are restored, so a resumed run
    matches the uninterrupted one; a changed learning rate takes effect from
    the first resumed step.
    """
    ckpt = load_checkpoint(checkpoint_path)
    model = model_from_checkpoint(ckpt)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    if ckpt.optimizer_state is not None:
        optimizer.load_state_dict(ckpt.optimizer_state)
        for group in optimizer.param_groups:
            group["lr"] = train_cfg.lr
    noise_gen = torch.Generator()
    if ckpt.torch_rng is not None:
        noise_gen.set_state(torch.frombuffer(bytearray(ckpt.torch_rng), dtype=torch.uint8).clone())
    batch_rng = np.random.default_rng()
    if ckpt.numpy_rng is not None:
        batch_rng.bit_generator.state = ckpt.numpy_rng
    return _run_loop(
        model, optimizer, train_cfg, dataset, out_dir, weights,
        start_step=ckpt.step, noise_gen=noise_gen, batch_rng=batch_rng, append_log=True,
    )
