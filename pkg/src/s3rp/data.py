"""Field sequences, resolution changes, and dataset assembly/persistence.

A fully assembled dataset stores, per sequence, the low-resolution training
input and (optionally) the high-resolution ground truth plus the simulation
metadata needed by the physics diagnostics. High-resolution arrays are kept
for evaluation only: the training-facing accessors expose LR data and the
LR-derived normalization statistics, nothing else.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .advect import SimRecord, superpose
from .errors import ConfigError, DataError
from .grid import GridSpec

MAGIC = b"S3RP"
FORMAT_VERSION = 1

HR = "HR"
LR = "LR"


class CorruptFileError(DataError):
    """Dataset container is truncated or has a malformed header."""


class VersionError(DataError):
    """Dataset container was written with an unsupported format version."""


@dataclass
class FieldSequence:
    """3-channel field series ``data[t, i, j, ch]`` with channels (u, v, c)."""

    data: np.ndarray
    resolution: str
    grid: GridSpec

    def __post_init__(self) -> None:
        if self.data.ndim != 4 or self.data.shape[-1] != 3:
            raise DataError(f"expected [T, N, N, 3] data, got shape {self.data.shape}")
        if self.resolution not in (HR, LR):
            raise DataError(f"resolution must be 'HR' or 'LR', got {self.resolution!r}")
        n = self.grid.n_hr if self.resolution == HR else self.grid.n_lr
        if self.data.shape[1] != n or self.data.shape[2] != n:
            raise DataError(f"{self.resolution} sequence has shape {self.data.shape}, expected N={n}")
        if not np.all(np.isfinite(self.data)):
            raise DataError("field sequence contains non-finite values")
        if self.data[..., 2].min() < -1e-12:
            raise DataError(f"concentration channel is negative: min = {self.data[..., 2].min():.3e}")


def block_mean(a, ratio: int):
    """Mean over non-overlapping ``ratio x ratio`` blocks of the spatial axes
    of a channel-last array ``[..., N, N, C]``. Works on numpy and torch."""
    *lead, nx, ny, ch = a.shape
    if nx % ratio or ny % ratio:
        raise DataError(f"spatial dims {nx}x{ny} not divisible by ratio {ratio}")
    view = a.reshape(*lead, nx // ratio, ratio, ny // ratio, ratio, ch)
    # One axis at a time: single-axis reductions use pairwise summation, so
    # constant blocks average back to the constant exactly.
    return view.mean(-2).mean(-3)


def downsample(y: FieldSequence) -> FieldSequence:
    """Block-average an HR sequence onto the LR mesh (per channel, per time)."""
    if y.resolution != HR:
        raise DataError("downsample expects an HR sequence")
    out = block_mean(y.data, y.grid.ratio)
    return FieldSequence(data=out, resolution=LR, grid=y.grid)


def upsample_replicate(x: FieldSequence) -> FieldSequence:
    """Nearest-neighbour upsampling: each LR cell fills its HR block."""
    if x.resolution != LR:
        raise DataError("upsample_replicate expects an LR sequence")
    r = x.grid.ratio
    out = np.repeat(np.repeat(x.data, r, axis=1), r, axis=2)
    return FieldSequence(data=out, resolution=HR, grid=x.grid)


def _axis_taps(n_lr: int, ratio: int, kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Tap indices and weights mapping LR samples (at block centers) to the
    HR positions of one axis. Indices are clamped at the edges, so constants
    are reproduced everywhere and affine ramps in the interior."""
    s = (np.arange(n_lr * ratio) + 0.5) / ratio - 0.5
    i0 = np.floor(s).astype(np.int64)
    t = s - i0
    if kind == "linear":
        offsets = np.array([0, 1])
        weights = np.stack([1.0 - t, t], axis=-1)
    elif kind == "catmull_rom":
        offsets = np.array([-1, 0, 1, 2])
        t2, t3 = t * t, t * t * t
        weights = np.stack(
            [
                -0.5 * t3 + t2 - 0.5 * t,
                1.5 * t3 - 2.5 * t2 + 1.0,
                -1.5 * t3 + 2.0 * t2 + 0.5 * t,
                0.5 * t3 - 0.5 * t2,
            ],
            axis=-1,
        )
    else:
        raise ConfigError(f"unknown interpolation kind {kind!r}")
    idx = np.clip(i0[:, None] + offsets[None, :], 0, n_lr - 1)
    return idx, weights


def _interp_axis(a: np.ndarray, idx: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    out = np.zeros(a.shape[:axis] + (idx.shape[0],) + a.shape[axis + 1 :], dtype=a.dtype)
    for k in range(idx.shape[1]):
        taps = np.take(a, idx[:, k], axis=axis)
        shape = [1] * a.ndim
        shape[axis] = idx.shape[0]
        out += w[:, k].reshape(shape).astype(a.dtype) * taps
    return out


def _upsample(x: FieldSequence, kind: str) -> FieldSequence:
    if x.resolution != LR:
        raise DataError("upsampling expects an LR sequence")
    idx, w = _axis_taps(x.grid.n_lr, x.grid.ratio, kind)
    out = _interp_axis(_interp_axis(x.data, idx, w, axis=1), idx, w, axis=2)
    out[..., 2] = np.maximum(out[..., 2], 0.0)
    return FieldSequence(data=out, resolution=HR, grid=x.grid)


def upsample_bilinear(x: FieldSequence) -> FieldSequence:
    """Bilinear interpolation with LR samples at HR block centers; the
    concentration channel is clipped at zero."""
    return _upsample(x, "linear")


def upsample_bicubic(x: FieldSequence) -> FieldSequence:
    """Catmull-Rom cubic interpolation, same sample placement and clipping
    as the bilinear variant."""
    return _upsample(x, "catmull_rom")


@dataclass
class SequenceItem:
    """One training/evaluation sequence with its simulation metadata."""

    lr: FieldSequence
    hr: FieldSequence | None
    k_diag: tuple[float, float]
    weights: np.ndarray
    sim_seed: int
    start: int


@dataclass
class Dataset:
    """Immutable bundle of sequences plus LR-only normalization statistics."""

    items: list[SequenceItem]
    train_idx: list[int]
    holdout_idx: list[int]
    grid: GridSpec
    dt: float
    norm_mean: np.ndarray
    norm_std: np.ndarray
    source_locations: list[tuple[float, float]]
    source_width: float
    emission_rate: float
    seed: int

    def train_lr_arrays(self) -> list[np.ndarray]:
        """LR arrays of the training split. This is the only surface the
        trainer consumes; HR ground truth is never exposed through it."""
        return [self.items[i].lr.data for i in self.train_idx]

    def holdout_items(self) -> list[SequenceItem]:
        return [self.items[i] for i in self.holdout_idx]

    def source_field(self, weights: np.ndarray) -> np.ndarray:
        """Superposed emission field matching a sequence's source weights."""
        from .advect import gaussian_source

        q = np.zeros((self.grid.n_hr, self.grid.n_hr))
        for w, loc in zip(np.asarray(weights), self.source_locations):
            q += w * gaussian_source(self.grid, loc, self.source_width, self.emission_rate)
        return q


def _assemble_hr(record: SimRecord, weights: np.ndarray, start: int, seq_len: int) -> FieldSequence:
    c = superpose(record.per_source_c, weights).c[start : start + seq_len]
    u = record.wind.u[start : start + seq_len]
    data = np.concatenate([u, c[..., None]], axis=-1).astype(np.float32)
    return FieldSequence(data=data, resolution=HR, grid=record.grid)


def build_dataset(
    sim_records: list[SimRecord],
    sequences_per_sim: int,
    seq_len: int,
    seed: int,
    dt: float = 1.0,
    holdout_fraction: float = 0.25,
    store_hr: bool = True,
) -> Dataset:
    """Turn raw simulations into (LR, HR) sequence pairs.

    Per sequence: draw nonnegative superposition weights (renormalized to sum
    to one), pick a window start, assemble the 3-channel HR sequence, and
    derive LR by block averaging. The last ``holdout_fraction`` of each
    simulation's sequences form the hold-out split; normalization statistics
    come from the training-split LR data only.
    """
    if not sim_records:
        raise DataError("no simulation records given")
    rng = np.random.default_rng(seed)
    ref = sim_records[0]
    items: list[SequenceItem] = []
    train_idx: list[int] = []
    holdout_idx: list[int] = []
    n_holdout = int(round(sequences_per_sim * holdout_fraction))
    if holdout_fraction > 0 and sequences_per_sim >= 2:
        n_holdout = max(1, n_holdout)
    for record in sim_records:
        if record.n_steps < seq_len:
            raise DataError(f"simulation has {record.n_steps} steps, need >= {seq_len}")
        if record.grid != ref.grid:
            raise DataError("all simulation records must share one grid")
        for s in range(sequences_per_sim):
            weights = rng.uniform(0.0, 1.0, size=len(record.per_source_c))
            weights /= weights.sum()
            start = int(rng.integers(0, record.n_steps - seq_len + 1))
            hr = _assemble_hr(record, weights, start, seq_len)
            lr = downsample(hr)
            idx = len(items)
            items.append(
                SequenceItem(
                    lr=lr,
                    hr=hr if store_hr else None,
                    k_diag=record.k_diag,
                    weights=weights,
                    sim_seed=record.seed,
                    start=start,
                )
            )
            (holdout_idx if s >= sequences_per_sim - n_holdout else train_idx).append(idx)
    if not train_idx:
        raise DataError("holdout_fraction leaves no training sequences")

    train_lr = np.concatenate([items[i].lr.data.reshape(-1, 3) for i in train_idx], axis=0)
    norm_mean = train_lr.mean(axis=0, dtype=np.float64)
    norm_std = np.maximum(train_lr.std(axis=0, dtype=np.float64), 1e-12)
    return Dataset(
        items=items,
        train_idx=train_idx,
        holdout_idx=holdout_idx,
        grid=ref.grid,
        dt=dt,
        norm_mean=norm_mean,
        norm_std=norm_std,
        source_locations=list(ref.source_locations),
        source_width=ref.source_width,
        emission_rate=ref.emission_rate,
        seed=seed,
    )


def _grid_to_dict(grid: GridSpec) -> dict:
    return {
        "n_hr": grid.n_hr,
        "n_lr": grid.n_lr,
        "spacing_lr": grid.spacing_lr,
        "origin": list(grid.origin),
    }


def _grid_from_dict(d: dict) -> GridSpec:
    return GridSpec(
        n_hr=d["n_hr"], n_lr=d["n_lr"], spacing_lr=d["spacing_lr"], origin=tuple(d["origin"])
    )


def save_dataset(ds: Dataset, path: str) -> None:
    """Write the container: magic, version, length-prefixed JSON metadata,
    then the raw float32 arrays in C order, little-endian."""
    arrays: list[np.ndarray] = []
    item_meta = []
    for item in ds.items:
        entry = {
            "k_diag": list(item.k_diag),
            "weights": [float(w) for w in item.weights],
            "sim_seed": item.sim_seed,
            "start": item.start,
            "has_hr": item.hr is not None,
            "lr_shape": list(item.lr.data.shape),
        }
        arrays.append(item.lr.data)
        if item.hr is not None:
            entry["hr_shape"] = list(item.hr.data.shape)
            arrays.append(item.hr.data)
        item_meta.append(entry)
    meta = {
        "grid": _grid_to_dict(ds.grid),
        "dt": ds.dt,
        "norm_mean": [float(v) for v in ds.norm_mean],
        "norm_std": [float(v) for v in ds.norm_std],
        "train_idx": ds.train_idx,
        "holdout_idx": ds.holdout_idx,
        "source_locations": [list(p) for p in ds.source_locations],
        "source_width": ds.source_width,
        "emission_rate": ds.emission_rate,
        "seed": ds.seed,
        "items": item_meta,
    }
    blob = json.dumps(meta).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", FORMAT_VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def _read_exact(f: io.BufferedReader, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise CorruptFileError(f"truncated file while reading {what}")
    return buf


def load_dataset(path: str) -> Dataset:
    """Read a container written by :func:`save_dataset`; bit-exact round trip."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != MAGIC:
            raise CorruptFileError(f"{path} is not a dataset container (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise VersionError(f"unsupported container version {version}, expected {FORMAT_VERSION}")
        (meta_len,) = struct.unpack("<Q", _read_exact(f, 8, "metadata length"))
        try:
            meta = json.loads(_read_exact(f, meta_len, "metadata").decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CorruptFileError(f"malformed metadata block: {exc}") from exc

        grid = _grid_from_dict(meta["grid"])
        items = []
        for entry in meta["items"]:
            lr_shape = tuple(entry["lr_shape"])
            lr_raw = _read_exact(f, int(np.prod(lr_shape)) * 4, "LR array")
            lr = np.frombuffer(lr_raw, dtype="<f4").reshape(lr_shape).copy()
            hr_fs = None
            if entry["has_hr"]:
                hr_shape = tuple(entry["hr_shape"])
                hr_raw = _read_exact(f, int(np.prod(hr_shape)) * 4, "HR array")
                hr = np.frombuffer(hr_raw, dtype="<f4").reshape(hr_shape).copy()
                hr_fs = FieldSequence(data=hr, resolution=HR, grid=grid)
            items.append(
                SequenceItem(
                    lr=FieldSequence(data=lr, resolution=LR, grid=grid),
                    hr=hr_fs,
                    k_diag=tuple(entry["k_diag"]),
                    weights=np.asarray(entry["weights"]),
                    sim_seed=entry["sim_seed"],
                    start=entry["start"],
                )
            )
    return Dataset(
        items=items,
        train_idx=list(meta["train_idx"]),
        holdout_idx=list(meta["holdout_idx"]),
        grid=grid,
        dt=meta["dt"],
        norm_mean=np.asarray(meta["norm_mean"]),
        norm_std=np.asarray(meta["norm_std"]),
        source_locations=[tuple(p) for p in meta["source_locations"]],
        source_width=meta["source_width"],
        emission_rate=meta["emission_rate"],
        seed=meta["seed"],
    )
