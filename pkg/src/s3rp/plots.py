"""File-based figures for evaluation outputs (no interactive backends)."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import CoordinateTrace, ErrorStdHistogram, McEnsemble


def plot_snapshots(ensemble: McEnsemble, y_hr, path: str, n_cols: int = 4) -> None:
    """Truth / ensemble mean / ensemble std of the concentration channel at
    evenly spaced timesteps."""
    y = np.asarray(getattr(y_hr, "data", y_hr))
    t_idx = np.linspace(0, ensemble.mean.shape[0] - 1, n_cols).astype(int)
    fig, axes = plt.subplots(3, n_cols, figsize=(3 * n_cols, 9))
    vmax = max(y[..., 2].max(), ensemble.mean[..., 2].max(), 1e-12)
    for col, t in enumerate(t_idx):
        for row, (label, img, kw) in enumerate([
            ("truth c", y[t, ..., 2], {"vmin": 0, "vmax": vmax, "cmap": "viridis"}),
            ("mean c", ensemble.mean[t, ..., 2], {"vmin": 0, "vmax": vmax, "cmap": "viridis"}),
            ("std c", ensemble.std[t, ..., 2], {"cmap": "magma"}),
        ]):
            ax = axes[row, col]
            im = ax.imshow(img.T, origin="lower", **kw)
            ax.set_xticks([]), ax.set_yticks([])
            if col == 0:
                ax.set_ylabel(label)
            if row == 0:
                ax.set_title(f"t = {t}")
            fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_physics_maps(model_maps, baseline_maps, path: str) -> None:
    """Transport and divergence residual maps, model row vs baseline row."""
    fig, axes = plt.subplots(2, 2, figsize=(9, 8))
    rows = [("model", model_maps), ("bicubic", baseline_maps)]
    for r, (name, maps) in enumerate(rows):
        for c, (label, img) in enumerate([("transport residual", maps[0]), ("divergence residual", maps[1])]):
            ax = axes[r, c]
            im = ax.imshow(img.T, origin="lower", cmap="inferno")
            ax.set_title(f"{name}: {label}")
            ax.set_xticks([]), ax.set_yticks([])
            fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_trace(trace: CoordinateTrace, path: str, observed: int | None = None) -> None:
    fig, ax = plt.subplots(figsize=(8, 4.5))
    lo2, hi2 = trace.band(2.0)
    lo1, hi1 = trace.band(1.0)
    ax.fill_between(trace.t, lo2, hi2, color="tab:blue", alpha=0.2, label="2 sigma")
    ax.fill_between(trace.t, lo1, hi1, color="tab:blue", alpha=0.35, label="1 sigma")
    ax.plot(trace.t, trace.mean, color="tab:blue", label="mean")
    ax.plot(trace.t, trace.sample, "--", color="tab:gray", lw=1, label="one sample")
    finite = np.isfinite(trace.truth)
    ax.plot(trace.t[finite], trace.truth[finite], color="black", lw=1.2, label="truth")
    if observed is not None and observed < len(trace.t):
        ax.axvline(observed - 0.5, color="red", ls=":", lw=1, label="forecast start")
    ax.set_xlabel("t")
    ax.set_ylabel("c")
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_histogram(hist: ErrorStdHistogram, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 5))
    counts = np.where(hist.counts > 0, hist.counts, np.nan)
    pc = ax.pcolormesh(hist.err_edges, hist.std_edges, counts.T, cmap="viridis", norm="log")
    ax.set_xlabel("|c - c*|")
    ax.set_ylabel("predicted std")
    ax.set_title(f"rank correlation = {hist.rank_correlation:.3f}")
    fig.colorbar(pc, ax=ax)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_loss_log(csv_path: str, path: str) -> None:
    with open(csv_path) as f:
        rows = list(csv.DictReader(f))
    steps = [int(r["step"]) for r in rows]
    fig, ax = plt.subplots(figsize=(8, 4.5))
    for key in ("total", "recon", "mmd", "phys_adv", "phys_div"):
        ax.plot(steps, [float(r[key]) for r in rows], label=key, lw=1)
    ax.set_xlabel("step")
    ax.set_yscale("symlog", linthresh=1e-8)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
