"""JSON toolkit configuration: one file, eight sections, full validation.

Every field has a default; unknown sections or keys are rejected before any
work starts. The typed accessors hand the validated sections to the modules
that consume them (grid geometry, wind process, transport simulation,
dataset assembly, model, loss weights, training loop, evaluation).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError
from .grid import GridSpec
from .model import ModelConfig
from .objective import LossWeights
from .train import TrainConfig
from .windgen import WindConfig


@dataclass(frozen=True)
class SimSection:
    n_sims: int = 10
    n_steps: int = 120
    dt: float = 1.0
    k_min: float = 1e-6
    k_max: float = 5e-6
    source_lattice: int = 4
    source_width: float = 2.0
    emission_rate: float = 0.005
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_sims < 1 or self.n_steps < 2:
            raise ConfigError("sim section needs n_sims >= 1 and n_steps >= 2")
        if not 0 <= self.k_min <= self.k_max:
            raise ConfigError("diffusivity range must satisfy 0 <= k_min <= k_max")
        if self.source_lattice < 1:
            raise ConfigError("source_lattice must be >= 1")


@dataclass(frozen=True)
class WindSection:
    n_modes: int = 8
    energy_slope: float = 3.0
    tau_scaling: float = 1.0
    amplitude: float = 1.0
    tau_base: float | None = None
    target_rms_speed: float | None = None
    cfl_cap: float = 0.45


@dataclass(frozen=True)
class DatasetSection:
    sequences_per_sim: int = 4
    seq_len: int = 90
    holdout_fraction: float = 0.25
    store_hr: bool = True
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sequences_per_sim < 1 or self.seq_len < 2:
            raise ConfigError("dataset section needs sequences_per_sim >= 1 and seq_len >= 2")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ConfigError("holdout_fraction must be in [0, 1)")


@dataclass(frozen=True)
class ModelSection:
    latent_channels: int = 16
    hidden_channels: int = 64
    n_layers: int = 1
    phycell_order: int = 2
    phycell_kernel: int = 5
    kernel_size: int = 3
    mode: str = "interpolation"


@dataclass(frozen=True)
class LossSection:
    mmd_weight: float = 1.0
    div_weight: float = 1.0
    phys_weight: float = 0.1
    mmd_bandwidth: float | None = None


@dataclass(frozen=True)
class EvalSection:
    mc_samples: int = 100
    seed: int = 0
    max_items: int | None = None
    histogram_bins: int = 64

    def __post_init__(self) -> None:
        if self.mc_samples < 2:
            raise ConfigError("eval.mc_samples must be >= 2")


_SECTION_TYPES = {
    "grid": GridSpec,
    "wind": WindSection,
    "sim": SimSection,
    "dataset": DatasetSection,
    "model": ModelSection,
    "loss": LossSection,
    "train": TrainConfig,
    "eval": EvalSection,
}


def _build_section(name: str, cls, overrides: dict):
    allowed = {f.name for f in dataclasses.fields(cls)}
    unknown = set(overrides) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    if "origin" in overrides:
        overrides = {**overrides, "origin": tuple(overrides["origin"])}
    return cls(**overrides)


@dataclass(frozen=True)
class ToolkitConfig:
    grid: GridSpec = field(default_factory=GridSpec)
    wind: WindSection = field(default_factory=WindSection)
    sim: SimSection = field(default_factory=SimSection)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    @classmethod
    def from_dict(cls, doc: dict) -> "ToolkitConfig":
        unknown = set(doc) - set(_SECTION_TYPES)
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        sections = {}
        for name, section_cls in _SECTION_TYPES.items():
            overrides = doc.get(name, {})
            if not isinstance(overrides, dict):
                raise ConfigError(f"section {name!r} must be an object")
            sections[name] = _build_section(name, section_cls, overrides)
        return cls(**sections)

    @classmethod
    def from_file(cls, path: str) -> "ToolkitConfig":
        try:
            with open(path) as f:
                doc = json.load(f)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"config file {path} must contain a JSON object")
        return cls.from_dict(doc)

    def resolved(self) -> dict:
        """Fully defaulted configuration as a JSON-ready dictionary."""
        return {name: dataclasses.asdict(getattr(self, name)) for name in _SECTION_TYPES}

    # -- typed accessors ----------------------------------------------------

    def wind_config(self, sim_index: int = 0) -> WindConfig:
        return WindConfig(
            domain_size=self.grid.domain_size,
            n_modes=self.wind.n_modes,
            energy_slope=self.wind.energy_slope,
            tau_scaling=self.wind.tau_scaling,
            dt=self.sim.dt,
            n_steps=self.sim.n_steps,
            seed=self.sim.seed + sim_index,
            amplitude=self.wind.amplitude,
            tau_base=self.wind.tau_base,
            target_rms_speed=self.wind.target_rms_speed,
            cfl_cap=self.wind.cfl_cap,
        )

    def model_config(self, mode: str | None = None) -> ModelConfig:
        m = self.model
        return ModelConfig(
            latent_channels=m.latent_channels,
            hidden_channels=m.hidden_channels,
            n_layers=m.n_layers,
            phycell_order=m.phycell_order,
            phycell_kernel=m.phycell_kernel,
            kernel_size=m.kernel_size,
            mode=mode or m.mode,
            grid=self.grid,
        )

    def loss_weights(self) -> LossWeights:
        w = self.loss
        return LossWeights(
            mmd_weight=w.mmd_weight,
            div_weight=w.div_weight,
            phys_weight=w.phys_weight,
            mmd_bandwidth=w.mmd_bandwidth,
        )


def load_config(path: str | None) -> ToolkitConfig:
    return ToolkitConfig() if path is None else ToolkitConfig.from_file(path)
