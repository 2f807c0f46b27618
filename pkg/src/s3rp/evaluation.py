"""Monte-Carlo evaluation: error, coverage, physics residuals, baselines.

A frozen model is rolled out M times with independent noise streams; the
per-pixel ensemble mean and spread give the point estimate and the
prediction intervals. Metrics mirror a table row per mode: MSE of the
ensemble mean against HR truth, empirical coverage of the 1-sigma and
2-sigma intervals, and the transport/divergence residuals, next to a bicubic
baseline row (which, being deterministic, has no coverage entries).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np
import torch
from scipy import stats

from . import data as data_mod
from .data import Dataset, FieldSequence, SequenceItem
from .diffops import physics_errors
from .errors import ConfigError, DataError, EvalError
from .model import S3RPModel


@dataclass
class McEnsemble:
    """M stochastic rollouts plus per-site moments, channel-last layout."""

    samples: np.ndarray  # [M, T, N, N, 3], float32
    mean: np.ndarray  # [T, N, N, 3], float64
    std: np.ndarray  # [T, N, N, 3], float64, population (ddof=0)

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "McEnsemble":
        mean = samples.mean(axis=0, dtype=np.float64)
        std = samples.std(axis=0, dtype=np.float64)
        return cls(samples=samples, mean=mean, std=std)


def _to_batched_torch(x, model: S3RPModel, m: int) -> torch.Tensor:
    arr = np.asarray(getattr(x, "data", x), dtype=np.float32)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise DataError(f"expected LR sequence [T, n, n, 3], got {arr.shape}")
    t = torch.from_numpy(arr).permute(0, 3, 1, 2)
    return t[None].expand(m, *t.shape).contiguous()


def mc_predict(
    model: S3RPModel,
    x_seq,
    mode: str | None = None,
    m: int = 100,
    horizon: int | None = None,
    observed: int | None = None,
    seed: int = 0,
    chunk: int = 20,
) -> McEnsemble:
    """M independent rollouts of one LR sequence, chunked to bound memory."""
    if m < 2:
        raise ConfigError(f"Monte-Carlo evaluation needs M >= 2, got {m}")
    model.eval()
    outs = []
    with torch.no_grad():
        done = 0
        while done < m:
            size = min(chunk, m - done)
            batch = _to_batched_torch(x_seq, model, size)
            res = model.rollout(batch, mode=mode, horizon=horizon, observed=observed, noise=seed + done)
            y = model.denormalize(res.y_norm)
            outs.append(y.permute(0, 1, 3, 4, 2).to(torch.float32).numpy())
            done += size
    return McEnsemble.from_samples(np.concatenate(outs, axis=0))


def mse(ensemble_mean: np.ndarray, y_hr: np.ndarray, channel: int | None = None) -> float:
    """Mean squared error over time, pixels, and channels."""
    a = np.asarray(ensemble_mean, dtype=np.float64)
    b = np.asarray(getattr(y_hr, "data", y_hr), dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"shape mismatch: {a.shape} vs {b.shape}")
    if channel is not None:
        a, b = a[..., channel], b[..., channel]
    return float(np.mean((a - b) ** 2))


_DEGENERATE_STD = 1e-12


def ecp(ensemble: McEnsemble, y_hr, k_sigma: float, channel: int | None = None) -> float:
    """Fraction of sites where ``|truth - mean| <= k_sigma * std``.

    Sites with (near-)zero spread count as covered only when the error is
    itself below the degeneracy threshold.
    """
    y = np.asarray(getattr(y_hr, "data", y_hr), dtype=np.float64)
    mean, std = ensemble.mean, ensemble.std
    if channel is not None:
        y, mean, std = y[..., channel], mean[..., channel], std[..., channel]
    err = np.abs(y - mean)
    degenerate = std < _DEGENERATE_STD
    covered = np.where(degenerate, err < _DEGENERATE_STD, err <= k_sigma * std)
    return float(np.mean(covered))


def ecp_quantile(ensemble: McEnsemble, y_hr, level: float, channel: int | None = None) -> float:
    """Coverage of the central sample-quantile interval of mass ``level``."""
    y = np.asarray(getattr(y_hr, "data", y_hr), dtype=np.float64)
    samples = ensemble.samples
    if channel is not None:
        y, samples = y[..., channel], samples[..., channel]
    lo = np.quantile(samples, (1 - level) / 2, axis=0)
    hi = np.quantile(samples, (1 + level) / 2, axis=0)
    return float(np.mean((y >= lo) & (y <= hi)))


@dataclass
class BaselineRow:
    mse: float
    mse_c: float
    eps_advdiff: float
    eps_div: float


@dataclass
class EvalReport:
    """One table row per mode plus the bicubic baseline row."""

    mode: str
    n_sequences: int
    mc_samples: int
    mse: float
    mse_c: float
    ecp_1sigma: float
    ecp_2sigma: float
    ecp_1sigma_per_channel: list[float]
    ecp_2sigma_per_channel: list[float]
    ecp_68_quantile: float
    ecp_95_quantile: float
    eps_advdiff: float
    eps_div: float
    baseline: BaselineRow

    def __post_init__(self) -> None:
        if not (0.0 <= self.ecp_1sigma <= 1.0 and 0.0 <= self.ecp_2sigma <= 1.0):
            raise EvalError("coverage outside [0, 1]")
        if self.ecp_2sigma < self.ecp_1sigma:
            raise EvalError("2-sigma coverage below 1-sigma coverage")

    def to_json(self, path: str | None = None) -> str:
        doc = dict(self.__dict__)
        doc["baseline"] = {**self.baseline.__dict__, "ecp_1sigma": None, "ecp_2sigma": None}
        text = json.dumps(doc, indent=2)
        if path:
            with open(path, "w") as f:
                f.write(text)
        return text


def evaluate(
    model: S3RPModel,
    dataset: Dataset,
    m: int = 100,
    seed: int = 0,
    max_items: int | None = None,
) -> EvalReport:
    """Full metric suite on the hold-out split (requires stored HR truth)."""
    items = dataset.holdout_items()
    if max_items is not None:
        items = items[:max_items]
    if not items:
        raise EvalError("dataset has no hold-out sequences")
    ds, dt = dataset.grid.spacing_hr, dataset.dt

    acc: dict[str, list[float]] = {k: [] for k in (
        "mse", "mse_c", "e1", "e2", "q68", "q95", "adv", "div",
        "b_mse", "b_mse_c", "b_adv", "b_div",
    )}
    e1_ch = np.zeros(3)
    e2_ch = np.zeros(3)
    for idx, item in enumerate(items):
        if item.hr is None:
            raise EvalError("hold-out item is missing HR ground truth")
        q = dataset.source_field(item.weights)
        ens = mc_predict(model, item.lr, m=m, seed=seed + 10_000 * idx)
        acc["mse"].append(mse(ens.mean, item.hr))
        acc["mse_c"].append(mse(ens.mean, item.hr, channel=2))
        acc["e1"].append(ecp(ens, item.hr, 1.0))
        acc["e2"].append(ecp(ens, item.hr, 2.0))
        acc["q68"].append(ecp_quantile(ens, item.hr, 0.6827))
        acc["q95"].append(ecp_quantile(ens, item.hr, 0.9545))
        for ch in range(3):
            e1_ch[ch] += ecp(ens, item.hr, 1.0, channel=ch)
            e2_ch[ch] += ecp(ens, item.hr, 2.0, channel=ch)
        phys = physics_errors(ens.mean, item.k_diag, q, ds, dt)
        acc["adv"].append(phys.eps_advdiff)
        acc["div"].append(phys.eps_div)

        bicubic = data_mod.upsample_bicubic(item.lr)
        acc["b_mse"].append(mse(bicubic.data, item.hr))
        acc["b_mse_c"].append(mse(bicubic.data, item.hr, channel=2))
        b_phys = physics_errors(bicubic.data, item.k_diag, q, ds, dt)
        acc["b_adv"].append(b_phys.eps_advdiff)
        acc["b_div"].append(b_phys.eps_div)

    n = len(items)
    mean_of = lambda k: float(np.mean(acc[k]))
    return EvalReport(
        mode=model.cfg.mode,
        n_sequences=n,
        mc_samples=m,
        mse=mean_of("mse"),
        mse_c=mean_of("mse_c"),
        ecp_1sigma=mean_of("e1"),
        ecp_2sigma=mean_of("e2"),
        ecp_1sigma_per_channel=list(e1_ch / n),
        ecp_2sigma_per_channel=list(e2_ch / n),
        ecp_68_quantile=mean_of("q68"),
        ecp_95_quantile=mean_of("q95"),
        eps_advdiff=mean_of("adv"),
        eps_div=mean_of("div"),
        baseline=BaselineRow(
            mse=mean_of("b_mse"),
            mse_c=mean_of("b_mse_c"),
            eps_advdiff=mean_of("b_adv"),
            eps_div=mean_of("b_div"),
        ),
    )


@dataclass
class ErrorStdHistogram:
    counts: np.ndarray  # [n_bins, n_bins]
    err_edges: np.ndarray
    std_edges: np.ndarray
    rank_correlation: float


def error_std_histogram(ensemble: McEnsemble, y_hr, n_bins: int = 64) -> ErrorStdHistogram:
    """2D histogram of per-site absolute concentration error against the
    predicted spread, plus their rank correlation over all sites. The std
    axis is clipped at its 99.9th percentile for readability."""
    y = np.asarray(getattr(y_hr, "data", y_hr), dtype=np.float64)
    if y.shape != ensemble.mean.shape:
        raise DataError(f"shape mismatch: {y.shape} vs {ensemble.mean.shape}")
    err = np.abs(ensemble.mean[..., 2] - y[..., 2]).ravel()
    std = ensemble.std[..., 2].ravel()
    std_cap = np.quantile(std, 0.999)
    if std_cap <= 0:
        std_cap = max(std.max(), _DEGENERATE_STD)
    counts, err_edges, std_edges = np.histogram2d(
        err, np.minimum(std, std_cap), bins=n_bins, range=[[0, max(err.max(), 1e-30)], [0, std_cap]]
    )
    rho = stats.spearmanr(err, std).statistic
    return ErrorStdHistogram(
        counts=counts, err_edges=err_edges, std_edges=std_edges,
        rank_correlation=float(rho) if np.isfinite(rho) else 0.0,
    )


def histogram_to_csv(hist: ErrorStdHistogram, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["# rank_correlation", f"{hist.rank_correlation:.6f}"])
        w.writerow(["err_lo", "err_hi", "std_lo", "std_hi", "count"])
        for i in range(hist.counts.shape[0]):
            for j in range(hist.counts.shape[1]):
                w.writerow([
                    f"{hist.err_edges[i]:.6e}", f"{hist.err_edges[i + 1]:.6e}",
                    f"{hist.std_edges[j]:.6e}", f"{hist.std_edges[j + 1]:.6e}",
                    int(hist.counts[i, j]),
                ])


@dataclass
class CoordinateTrace:
    """Per-time series at one pixel: truth, ensemble mean/std, one sample."""

    t: np.ndarray
    truth: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    sample: np.ndarray

    def band(self, k: float) -> tuple[np.ndarray, np.ndarray]:
        return self.mean - k * self.std, self.mean + k * self.std

    def mean_band_width(self, k: float, t_slice: slice = slice(None)) -> float:
        return float(np.mean(2.0 * k * self.std[t_slice]))


def coordinate_trace(
    ensemble: McEnsemble, y_hr, coord: tuple[int, int], channel: int = 2
) -> CoordinateTrace:
    i, j = coord
    t_total, n = ensemble.mean.shape[0], ensemble.mean.shape[1]
    if not (0 <= i < n and 0 <= j < n):
        raise ConfigError(f"coordinate {coord} outside the {n}x{n} mesh")
    y = np.asarray(getattr(y_hr, "data", y_hr), dtype=np.float64) if y_hr is not None else None
    t_truth = 0 if y is None else min(t_total, y.shape[0])
    truth = np.full(t_total, np.nan)
    if y is not None:
        truth[:t_truth] = y[:t_truth, i, j, channel]
    return CoordinateTrace(
        t=np.arange(t_total),
        truth=truth,
        mean=ensemble.mean[:, i, j, channel].copy(),
        std=ensemble.std[:, i, j, channel].copy(),
        sample=ensemble.samples[0, :, i, j, channel].astype(np.float64),
    )


def trace_to_csv(trace: CoordinateTrace, path: str) -> None:
    lo1, hi1 = trace.band(1.0)
    lo2, hi2 = trace.band(2.0)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "truth", "mean", "std", "lo_1s", "hi_1s", "lo_2s", "hi_2s", "sample"])
        for k in range(len(trace.t)):
            w.writerow([
                int(trace.t[k]),
                f"{trace.truth[k]:.8e}", f"{trace.mean[k]:.8e}", f"{trace.std[k]:.8e}",
                f"{lo1[k]:.8e}", f"{hi1[k]:.8e}", f"{lo2[k]:.8e}", f"{hi2[k]:.8e}",
                f"{trace.sample[k]:.8e}",
            ])
