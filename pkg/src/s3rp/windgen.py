"""Time-correlated, discretely divergence-free 2D wind fields.

The velocity is the rotated gradient of a scalar streamfunction, so its
central-difference divergence vanishes identically (the two mixed-derivative
stencils commute). The streamfunction is a sum of Fourier modes whose
coefficients follow independent Ornstein-Uhlenbeck processes: mode variance
decays as ``|k|^-energy_slope`` and mode relaxation time as
``|k|^-tau_scaling``, which gives a multiscale field that is both spatially
and temporally correlated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffops import _ddx, divergence
from .errors import ConfigError, DataError
from .grid import GridSpec


@dataclass(frozen=True)
class WindConfig:
    """Parameters of the stochastic streamfunction.

    ``amplitude`` scales every mode's stationary std; ``tau_base`` is the
    relaxation time of the |k|=1 mode (default 50*dt). ``target_rms_speed``
    sets the post-scaling RMS speed (default: one domain length per 100
    steps); ``cfl_cap`` then bounds the peak of |u_x|+|u_y| at
    ``cfl_cap * ds_hr / dt`` so the explicit transport solver stays stable,
    and takes precedence over the RMS target whenever the two conflict.
    """

    domain_size: float = 1.0
    n_modes: int = 8
    energy_slope: float = 3.0
    tau_scaling: float = 1.0
    dt: float = 1.0
    n_steps: int = 100
    seed: int = 0
    amplitude: float = 1.0
    tau_base: float | None = None
    target_rms_speed: float | None = None
    cfl_cap: float = 0.45

    def __post_init__(self) -> None:
        if self.n_modes < 1:
            raise ConfigError(f"n_modes must be >= 1, got {self.n_modes}")
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 2:
            raise ConfigError(f"n_steps must be >= 2, got {self.n_steps}")
        if not self.domain_size > 0:
            raise ConfigError(f"domain_size must be positive, got {self.domain_size}")
        if self.amplitude < 0:
            raise ConfigError(f"amplitude must be >= 0, got {self.amplitude}")
        if not 0 < self.cfl_cap <= 1:
            raise ConfigError(f"cfl_cap must be in (0, 1], got {self.cfl_cap}")


@dataclass
class WindField:
    """Velocity series ``u[t, i, j, comp]`` on the HR mesh of ``grid``."""

    u: np.ndarray
    grid: GridSpec

    def max_relative_divergence(self) -> float:
        """max over t of RMS(div u_t) / RMS(|u_t|); 0 for an all-zero field."""
        speed_rms = np.sqrt(np.mean(np.sum(self.u**2, axis=-1), axis=(1, 2)))
        div_rms = np.sqrt(np.mean(divergence(self.u, self.grid.spacing_hr) ** 2, axis=(1, 2)))
        mask = speed_rms > 0
        if not mask.any():
            return 0.0
        return float(np.max(div_rms[mask] / speed_rms[mask]))


def _mode_table(cfg: WindConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Wavevectors of the half-plane k-lattice with per-mode (sigma, tau)."""
    kx, ky = np.meshgrid(
        np.arange(0, cfg.n_modes + 1),
        np.arange(-cfg.n_modes, cfg.n_modes + 1),
        indexing="ij",
    )
    keep = (kx > 0) | ((kx == 0) & (ky > 0))
    k = np.stack([kx[keep], ky[keep]], axis=-1).astype(np.float64)
    kmag = np.sqrt(np.sum(k**2, axis=-1))
    sigma = cfg.amplitude * kmag ** (-cfg.energy_slope / 2.0)
    tau_base = cfg.tau_base if cfg.tau_base is not None else 50.0 * cfg.dt
    tau = tau_base * kmag ** (-cfg.tau_scaling)
    return k, sigma, tau


def ou_series(
    rng: np.random.Generator,
    sigma: np.ndarray,
    tau: np.ndarray,
    dt: float,
    n_steps: int,
) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck paths, one per entry of ``sigma``.

    Uses the exact discretization ``a' = rho a + sigma sqrt(1 - rho^2) xi``
    with ``rho = exp(-dt/tau)``, so the lag-n autocorrelation is
    ``exp(-n dt / tau)`` and the marginal variance is ``sigma^2`` at every
    step. Returns shape ``(n_steps,) + sigma.shape``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    tau = np.asarray(tau, dtype=np.float64)
    rho = np.exp(-dt / tau)
    innov = sigma * np.sqrt(1.0 - rho**2)
    out = np.empty((n_steps,) + sigma.shape)
    out[0] = sigma * rng.standard_normal(sigma.shape)
    for t in range(1, n_steps):
        out[t] = rho * out[t - 1] + innov * rng.standard_normal(sigma.shape)
    return out


def sample_streamfunction(cfg: WindConfig, n: int) -> np.ndarray:
    """Sample the streamfunction on an ``n x n`` periodic mesh.

    Returns ``psi[t, i, j]`` for ``t = 0..n_steps-1``. Identical config and
    ``n`` reproduce the same array bit-for-bit.
    """
    k, sigma, tau = _mode_table(cfg)
    rng = np.random.default_rng(cfg.seed)
    # Two OU coefficients per wavevector: cos and sin quadratures.
    coeff = ou_series(rng, np.stack([sigma, sigma], -1), np.stack([tau, tau], -1), cfg.dt, cfg.n_steps)

    centers = (np.arange(n) + 0.5) / n * cfg.domain_size
    x, y = np.meshgrid(centers, centers, indexing="ij")
    phase = (
        2.0 * np.pi / cfg.domain_size * (k[:, 0, None, None] * x + k[:, 1, None, None] * y)
    )
    basis = np.stack([np.cos(phase), np.sin(phase)], axis=1)
    return np.einsum("tmp,mpij->tij", coeff, basis)


def wind_from_streamfunction(psi: np.ndarray, grid: GridSpec) -> WindField:
    """Velocity ``u = (dpsi/dy, -dpsi/dx)`` via the shared central stencils.

    Because the same stencils define the divergence operator, the discrete
    divergence of the result cancels exactly (up to round-off).
    """
    psi = np.asarray(psi, dtype=np.float64)
    if not np.all(np.isfinite(psi)):
        raise DataError("streamfunction contains non-finite values")
    if psi.ndim != 3 or psi.shape[-1] != grid.n_hr or psi.shape[-2] != grid.n_hr:
        raise DataError(f"expected [T, {grid.n_hr}, {grid.n_hr}] streamfunction, got {psi.shape}")
    ds = grid.spacing_hr
    u = np.stack([_ddx(psi, ds, axis=-1), -_ddx(psi, ds, axis=-2)], axis=-1)
    return WindField(u=u, grid=grid)


def generate_wind(cfg: WindConfig, grid: GridSpec) -> WindField:
    """Sample a wind realization on ``grid`` and rescale its magnitude.

    The field is scaled to ``target_rms_speed`` and then, if necessary,
    scaled further down so that ``max(|u_x|+|u_y|) * dt / ds_hr <= cfl_cap``.
    Rescaling is uniform, so the divergence-free construction is preserved.
    """
    psi = sample_streamfunction(cfg, grid.n_hr)
    field = wind_from_streamfunction(psi, grid)
    u = field.u

    rms = float(np.sqrt(np.mean(np.sum(u**2, axis=-1))))
    if rms > 0:
        target = cfg.target_rms_speed
        if target is None:
            target = cfg.domain_size / (100.0 * cfg.dt)
        scale = target / rms
        l1_peak = float(np.max(np.abs(u[..., 0]) + np.abs(u[..., 1])))
        cap = cfg.cfl_cap * grid.spacing_hr / cfg.dt
        if l1_peak * scale > cap:
            scale = cap / l1_peak
        u = u * scale
    return WindField(u=u, grid=grid)
