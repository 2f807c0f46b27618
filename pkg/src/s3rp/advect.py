"""Explicit advection-diffusion transport of point-source concentrations.

One step is forward Euler: flux-limited (van Leer) upwind advection in
conservative form, central-difference diffusion, and source injection, all
with periodic boundaries. The conservative flux form makes the cell sum of c
exact up to round-off, and the limited upwind fluxes keep c nonnegative
whenever the stability conditions hold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffops import diffusion_term
from .errors import ConfigError, DataError, StabilityError
from .grid import GridSpec
from .windgen import WindConfig, WindField

_AXES = (-2, -1)


def default_source_lattice(n_per_axis: int = 4) -> list[tuple[float, float]]:
    """Source locations at the centers of an ``n x n`` partition of the unit
    domain (fractional coordinates, scaled by the domain size at use)."""
    pts = [(i + 0.5) / n_per_axis for i in range(n_per_axis)]
    return [(x, y) for x in pts for y in pts]


@dataclass(frozen=True)
class SimConfig:
    """One simulation: grid, wind parameters, diffusivity, and sources.

    ``source_locations`` are fractional coordinates in [0, 1)^2 of the
    domain; ``source_width`` is the Gaussian emission footprint std in
    multiples of the HR spacing.
    """

    grid: GridSpec = field(default_factory=GridSpec)
    wind: WindConfig = field(default_factory=WindConfig)
    k_diag: tuple[float, float] = (2e-6, 2e-6)
    source_locations: list[tuple[float, float]] = field(default_factory=default_source_lattice)
    source_width: float = 2.0
    emission_rate: float = 1.0
    dt: float = 1.0
    n_steps: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if min(self.k_diag) < 0:
            raise ConfigError(f"diffusivities must be >= 0, got {self.k_diag}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 2:
            raise ConfigError(f"n_steps must be >= 2, got {self.n_steps}")
        for loc in self.source_locations:
            if not (0.0 <= loc[0] < 1.0 and 0.0 <= loc[1] < 1.0):
                raise ConfigError(f"source location {loc} outside the unit domain")
        ds = self.grid.spacing_hr
        if max(self.k_diag) * self.dt / ds**2 > 0.25:
            raise ConfigError(
                f"explicit diffusion unstable: max(k)*dt/ds^2 = "
                f"{max(self.k_diag) * self.dt / ds**2:.3g} > 0.25"
            )


@dataclass
class ConcentrationField:
    """Concentration series ``c[t, i, j]`` on the HR mesh of ``grid``."""

    c: np.ndarray
    grid: GridSpec

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.c)):
            raise DataError("concentration contains non-finite values")
        if self.c.min() < -1e-12:
            raise DataError(f"concentration has negative values: min = {self.c.min():.3e}")


@dataclass
class SimRecord:
    """Wind plus the 16 per-source concentration histories of one simulation."""

    wind: WindField
    per_source_c: list[ConcentrationField]
    k_diag: tuple[float, float]
    source_locations: list[tuple[float, float]]
    source_width: float
    emission_rate: float
    seed: int

    def __post_init__(self) -> None:
        t = self.per_source_c[0].c.shape[0]
        for f in self.per_source_c:
            if f.c.shape[0] != t or f.grid != self.wind.grid:
                raise DataError("simulation fields disagree on length or grid")

    @property
    def n_steps(self) -> int:
        return self.per_source_c[0].c.shape[0]

    @property
    def grid(self) -> GridSpec:
        return self.wind.grid


def gaussian_source(grid: GridSpec, location: tuple[float, float], width: float, rate: float) -> np.ndarray:
    """Emission field: a periodically wrapped Gaussian blob whose cell-sum
    times the cell area equals ``rate`` (injection per unit time)."""
    n, ds, dom = grid.n_hr, grid.spacing_hr, grid.domain_size
    centers = (np.arange(n) + 0.5) * ds
    x0, y0 = location[0] * dom, location[1] * dom
    dx = np.remainder(centers - x0 + dom / 2, dom) - dom / 2
    dy = np.remainder(centers - y0 + dom / 2, dom) - dom / 2
    sigma = width * ds
    blob = np.exp(-(dx[:, None] ** 2 + dy[None, :] ** 2) / (2.0 * sigma**2))
    return rate * blob / (blob.sum() * ds * ds)


def _van_leer(r: np.ndarray) -> np.ndarray:
    return (r + np.abs(r)) / (1.0 + np.abs(r))


def advective_tendency(c: np.ndarray, u: np.ndarray, ds: float, limiter: str | None = "van_leer") -> np.ndarray:
    """Advection tendency ``-div(c u)`` from upwind face fluxes.

    ``limiter="van_leer"`` adds the slope-limited second-order correction;
    ``limiter=None`` is pure donor-cell upwind, which is linear in c.
    """
    if limiter not in ("van_leer", None):
        raise ConfigError(f"unknown limiter {limiter!r}")
    out = np.zeros_like(c)
    for comp, ax in enumerate(_AXES):
        un = u[..., comp]
        uf = 0.5 * (un + np.roll(un, -1, axis=ax))
        c_up = np.roll(c, -1, axis=ax)
        delta = c_up - c
        face = np.where(uf >= 0, c, c_up)
        if limiter == "van_leer":
            num = np.where(uf >= 0, np.roll(delta, 1, axis=ax), np.roll(delta, -1, axis=ax))
            r = np.divide(num, delta, out=np.zeros_like(delta), where=delta != 0)
            corr = 0.5 * _van_leer(r) * delta
            face = face + np.where(uf >= 0, corr, -corr)
        flux = uf * face
        out -= (flux - np.roll(flux, 1, axis=ax)) / ds
    return out


def step_concentration(
    c: np.ndarray,
    u: np.ndarray,
    k_diag: tuple[float, float],
    q: np.ndarray | float,
    dt: float,
    ds: float,
    limiter: str | None = "van_leer",
) -> np.ndarray:
    """Advance the concentration by one explicit step of length ``dt``.

    Refuses to step when the advective CFL number ``max|u| dt/ds`` exceeds 1
    or the diffusion number ``max(k) dt/ds^2`` exceeds 0.25.
    """
    speed_max = float(np.sqrt(np.max(np.sum(u**2, axis=-1))))
    if speed_max * dt / ds > 1.0 + 1e-12:
        raise StabilityError(f"advective CFL violated: max|u|*dt/ds = {speed_max * dt / ds:.3g} > 1")
    if max(k_diag) * dt / ds**2 > 0.25 + 1e-12:
        raise StabilityError(
            f"diffusion number violated: max(k)*dt/ds^2 = {max(k_diag) * dt / ds**2:.3g} > 0.25"
        )
    return c + dt * (advective_tendency(c, u, ds, limiter) + diffusion_term(c, k_diag, ds) + q)


def simulate_sources(cfg: SimConfig, wind: WindField) -> SimRecord:
    """Run each source's concentration from a zero initial condition.

    Frame t+1 uses the wind at frame t, so ``wind`` must provide at least
    ``cfg.n_steps`` frames. The sources are independent; each history keeps
    all ``n_steps`` frames including the zero initial one.
    """
    if wind.u.shape[0] < cfg.n_steps:
        raise DataError(f"wind has {wind.u.shape[0]} steps, need >= {cfg.n_steps}")
    grid, ds = cfg.grid, cfg.grid.spacing_hr
    fields = []
    for loc in cfg.source_locations:
        q = gaussian_source(grid, loc, cfg.source_width, cfg.emission_rate)
        c = np.zeros((cfg.n_steps, grid.n_hr, grid.n_hr))
        for t in range(cfg.n_steps - 1):
            c[t + 1] = step_concentration(c[t], wind.u[t], cfg.k_diag, q, cfg.dt, ds)
        fields.append(ConcentrationField(c=c, grid=grid))
    return SimRecord(
        wind=wind,
        per_source_c=fields,
        k_diag=cfg.k_diag,
        source_locations=list(cfg.source_locations),
        source_width=cfg.source_width,
        emission_rate=cfg.emission_rate,
        seed=cfg.seed,
    )


def superpose(per_source_c: list[ConcentrationField], weights: np.ndarray) -> ConcentrationField:
    """Time-point-wise weighted sum of per-source concentrations."""
    weights = np.asarray(weights, dtype=np.float64)
    if len(per_source_c) != weights.shape[0]:
        raise DataError(f"{len(per_source_c)} fields but {weights.shape[0]} weights")
    if not np.all(np.isfinite(weights)) or weights.min() < 0:
        raise DataError("superposition weights must be finite and >= 0")
    total = np.zeros_like(per_source_c[0].c)
    for w, f in zip(weights, per_source_c):
        total += w * f.c
    return ConcentrationField(c=total, grid=per_source_c[0].grid)
