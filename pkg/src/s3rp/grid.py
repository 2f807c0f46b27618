"""Mesh geometry shared by the simulator, the dataset builder, and the model.

Fields live on cell centers of a square periodic domain. Arrays are indexed
``[..., i, j]`` with axis ``i`` along x and axis ``j`` along y, so the cell
center of ``(i, j)`` sits at ``origin + ((i + 0.5) * ds, (j + 0.5) * ds)``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigError


@dataclass(frozen=True)
class GridSpec:
    """High- and low-resolution mesh geometry with an integer coarsening ratio.

    ``n_hr`` must equal ``ratio * n_lr`` exactly; the low-resolution cell
    ``(I, J)`` is the block mean of the ``ratio x ratio`` high-resolution
    cells it covers, so both meshes tile the same domain.
    """

    n_hr: int = 128
    n_lr: int = 16
    spacing_lr: float = 1.0 / 16.0
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        if self.n_lr < 1 or self.n_hr < 2:
            raise ConfigError(f"grid sizes out of range: n_hr={self.n_hr}, n_lr={self.n_lr}")
        if self.n_hr % self.n_lr != 0:
            raise ConfigError(f"n_hr={self.n_hr} is not an integer multiple of n_lr={self.n_lr}")
        if self.ratio < 2:
            raise ConfigError(f"downsampling ratio must be >= 2, got {self.ratio}")
        if not self.spacing_lr > 0:
            raise ConfigError(f"spacing_lr must be positive, got {self.spacing_lr}")

    @property
    def ratio(self) -> int:
        return self.n_hr // self.n_lr

    @property
    def spacing_hr(self) -> float:
        return self.spacing_lr / self.ratio

    @property
    def domain_size(self) -> float:
        return self.n_lr * self.spacing_lr
