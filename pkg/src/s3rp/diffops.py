"""Discrete differential operators and physics-residual diagnostics.

All operators use second-order central differences in space, forward
differences in time, and periodic boundaries, matching the data-generating
simulation. They accept either numpy arrays or torch tensors and return the
same kind; the torch path stays differentiable, so the training objective and
the evaluation diagnostics share one set of stencils.

Array conventions: scalar fields are ``[..., N, N]`` (trailing axes x, y),
vector fields are ``[..., N, N, 2]`` with components (u_x, u_y), and
3-channel frames are ``[..., N, N, 3]`` ordered (u, v, c).

Squared norms are averaged over pixels (and time steps where applicable)
rather than summed, so values are comparable across resolutions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, EvalError

try:
    import torch
except ImportError:  # pragma: no cover - torch is a hard dependency elsewhere
    torch = None


def _roll(a, shift: int, axis: int):
    if torch is not None and isinstance(a, torch.Tensor):
        return torch.roll(a, shifts=shift, dims=axis)
    return np.roll(a, shift, axis=axis)


def _ddx(f, ds: float, axis: int):
    """Central difference along ``axis`` with periodic wrap."""
    return (_roll(f, -1, axis) - _roll(f, 1, axis)) / (2.0 * ds)


def _d2dx2(f, ds: float, axis: int):
    """Second-order central second derivative along ``axis``, periodic."""
    return (_roll(f, -1, axis) - 2.0 * f + _roll(f, 1, axis)) / (ds * ds)


@dataclass(frozen=True)
class StencilSpec:
    """Record of the discretization: central-2 in space, forward in time,
    periodic boundaries, with grid spacing ``ds`` and time step ``dt``."""

    ds: float
    dt: float
    spatial: str = "central-2"
    temporal: str = "forward"
    boundary: str = "periodic"

    def __post_init__(self) -> None:
        if not (self.ds > 0 and self.dt > 0):
            raise DataError(f"ds and dt must be positive, got ds={self.ds}, dt={self.dt}")


def ddt(series, dt: float):
    """Forward time difference of a ``[T, ...]`` series: (f[t+1] - f[t]) / dt."""
    if series.shape[0] < 2:
        raise DataError(f"need at least 2 time steps, got {series.shape[0]}")
    return (series[1:] - series[:-1]) / dt


def divergence(v, ds: float):
    """Divergence of a ``[..., N, N, 2]`` vector field, central, periodic."""
    return _ddx(v[..., 0], ds, axis=-2) + _ddx(v[..., 1], ds, axis=-1)


def advective_flux_div(c, u, ds: float):
    """Divergence of the advective flux c*u for scalar c ``[..., N, N]``."""
    return _ddx(c * u[..., 0], ds, axis=-2) + _ddx(c * u[..., 1], ds, axis=-1)


def diffusion_term(c, k_diag, ds: float):
    """Anisotropic diffusion k_x * d2c/dx2 + k_y * d2c/dy2 for diagonal k."""
    kx, ky = float(k_diag[0]), float(k_diag[1])
    return kx * _d2dx2(c, ds, axis=-2) + ky * _d2dx2(c, ds, axis=-1)


@dataclass
class PhysicsErrors:
    """Mean-squared transport and divergence residuals plus per-pixel maps."""

    eps_advdiff: float
    eps_div: float
    advdiff_map: np.ndarray
    div_map: np.ndarray


def physics_errors(yhat, k_diag, q, ds: float, dt: float) -> PhysicsErrors:
    """Residuals of the transport equation and the incompressibility
    constraint, evaluated on a ``[T, N, N, 3]`` sequence.

    The transport residual at step t is
    ``(c[t+1] - c[t])/dt + div(c[t] u[t]) - div(k grad c[t]) - q``;
    the divergence residual is ``div(u[t])`` at every step. Both are reported
    as means of squares over all pixels and valid steps, together with
    time-averaged per-pixel squared-residual maps.
    """
    arr = getattr(yhat, "data", yhat)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[-1] != 3:
        raise DataError(f"expected [T, N, N, 3] sequence, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise DataError("physics residuals need at least 2 time steps")
    if k_diag is None or q is None:
        raise EvalError("physics_errors requires the simulation metadata (k_diag, q)")

    u = arr[..., :2]
    c = arr[..., 2]
    resid = ddt(c, dt)
    for t in range(arr.shape[0] - 1):
        resid[t] += advective_flux_div(c[t], u[t], ds)
        resid[t] -= diffusion_term(c[t], k_diag, ds)
    resid -= np.asarray(q, dtype=np.float64)

    div = divergence(u, ds)
    advdiff_map = np.mean(resid**2, axis=0)
    div_map = np.mean(div**2, axis=0)
    return PhysicsErrors(
        eps_advdiff=float(np.mean(resid**2)),
        eps_div=float(np.mean(div**2)),
        advdiff_map=advdiff_map,
        div_map=div_map,
    )
