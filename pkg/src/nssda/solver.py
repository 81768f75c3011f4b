"""Kurganov-Tadmor central scheme with minmod reconstruction and TVDRK3 stepping.

Arrays are laid out ``(..., n, p)`` (cells, then channels); leading axes batch
independent states such as ensemble members. Every routine works on plain
numpy arrays and on :class:`~nssda.autodiff.DVar` values, so the neural flux
rollout can be differentiated end to end.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from nssda import autodiff as ad
from nssda import kernels

logger = logging.getLogger(__name__)

FLAT_TOL = kernels._kernels_py.FLAT_TOL


class SolverDivergence(RuntimeError):
    """Non-finite values appeared while stepping."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class FluxProvider(Protocol):
    """Pointwise flux and local wave-speed estimate for a conserved state."""

    def flux(self, u):
        """Map ``(..., p)`` conserved states to ``(..., p)`` fluxes."""

    def max_wave_speed(self, u_plus, u_minus):
        """Nonnegative ``(...)`` speed bound for interface pairs ``(..., p)``."""


@dataclass
class SolverConfig:
    """Time stepping between observations: ``substeps`` TVDRK3 steps per ``dt``."""

    dt: float
    substeps: int = 1
    cfl: float = 1.0

    def __post_init__(self):
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")


@dataclass
class SolverStats:
    cfl_violations: int = 0
    max_speed: float = 0.0


def minmod_psi(r):
    """Limiter ``max(0, min(r, (1 + r) / 2, 1))``."""
    return ad.maximum(0.0, ad.minimum(ad.minimum(r, ad.scale(ad.add(r, 1.0), 0.5)), 1.0))


def pad_ghosts(u, boundary):
    """Append two ghost cells per side.

    ``boundary`` is ``(left, right)`` conserved states for Dirichlet data or
    ``None`` for periodic wrap-around.
    """
    if boundary is None:
        return ad.concatenate([ad.take(u, np.s_[..., -2:, :]), u, ad.take(u, np.s_[..., :2, :])], axis=-2)
    left, right = boundary
    shape = u.shape[:-2] + (2, u.shape[-1])
    gl = np.broadcast_to(np.asarray(left, dtype=np.float64), shape)
    gr = np.broadcast_to(np.asarray(right, dtype=np.float64), shape)
    return ad.concatenate([gl, u, gr], axis=-2)


def limited_slopes(ue, frozen: bool = False):
    """Undivided limited slopes ``psi(r) (u_{j+1} - u_j)`` for cells ``1..m-2``.

    ``ue`` is ``(..., m, p)``. Where ``|u_{j+1} - u_j| < 1e-14`` the slope is 0.
    With ``frozen`` the limiter values are taken from the forward pass and
    treated as constants by the tape.
    """
    dl = ad.sub(ad.take(ue, np.s_[..., 1:-1, :]), ad.take(ue, np.s_[..., :-2, :]))
    dr = ad.sub(ad.take(ue, np.s_[..., 2:, :]), ad.take(ue, np.s_[..., 1:-1, :]))
    flat = np.abs(ad.value_of(dr)) < FLAT_TOL
    den = ad.where(flat, 1.0, dr)
    if frozen:
        psi = minmod_psi(ad.value_of(dl) / ad.value_of(den))
    else:
        psi = minmod_psi(ad.div(dl, den))
    return ad.where(flat, 0.0, ad.mul(psi, dr))


def reconstruct_interfaces(ue, slopes):
    """Left/right traces ``(u_minus, u_plus)`` at the ``m-3`` interior interfaces."""
    u_minus = ad.add(ad.take(ue, np.s_[..., 1:-2, :]), ad.scale(ad.take(slopes, np.s_[..., :-1, :]), 0.5))
    u_plus = ad.sub(ad.take(ue, np.s_[..., 2:-1, :]), ad.scale(ad.take(slopes, np.s_[..., 1:, :]), 0.5))
    return u_minus, u_plus


def _flux_pair(u_plus, u_minus, flux: FluxProvider):
    n = u_plus.shape[-2]
    both = flux.flux(ad.concatenate([u_plus, u_minus], axis=-2))
    return ad.take(both, np.s_[..., :n, :]), ad.take(both, np.s_[..., n:, :])


def kt_flux(u_plus, u_minus, flux: FluxProvider, speed=None):
    """``H = (F(u+) + F(u-)) / 2 - a / 2 (u+ - u-)`` with ``a`` the local speed."""
    f_plus, f_minus = _flux_pair(u_plus, u_minus, flux)
    if speed is None:
        speed = flux.max_wave_speed(u_plus, u_minus)
    a = ad.reshape(speed, tuple(speed.shape) + (1,))
    central = ad.scale(ad.add(f_plus, f_minus), 0.5)
    return ad.sub(central, ad.mul(ad.scale(a, 0.5), ad.sub(u_plus, u_minus)))


def semidiscrete_rhs(u, flux: FluxProvider, dx: float, boundary, *, frozen_limiter=False, stats=None):
    """Tendency ``-(H_{i+1/2} - H_{i-1/2}) / dx`` for every cell."""
    ue = pad_ghosts(u, boundary)
    if ad.is_dvar(ue):
        slopes = limited_slopes(ue, frozen=frozen_limiter)
        u_minus, u_plus = reconstruct_interfaces(ue, slopes)
    else:
        u_minus, u_plus = kernels.interface_states(ue)
        f_plus, f_minus = _flux_pair(u_plus, u_minus, flux)
        speed = flux.max_wave_speed(u_plus, u_minus)
        if not (ad.is_dvar(f_plus) or ad.is_dvar(speed)):
            if stats is not None and speed.size:
                stats.max_speed = max(stats.max_speed, float(np.max(speed)))
            return kernels.kt_assemble(u_plus, u_minus, f_plus, f_minus, speed, dx)
    speed = flux.max_wave_speed(u_plus, u_minus)
    if stats is not None:
        stats.max_speed = max(stats.max_speed, float(np.max(ad.value_of(speed))))
    h = kt_flux(u_plus, u_minus, flux, speed=speed)
    diff = ad.sub(ad.take(h, np.s_[..., 1:, :]), ad.take(h, np.s_[..., :-1, :]))
    return ad.scale(diff, -1.0 / dx)


def _axpy(a, x, b, y, c=None, z=None):
    # a*x + b*y (+ c*z), tape-aware
    out = ad.add(ad.scale(x, a) if a != 1.0 else x, ad.scale(y, b) if b != 1.0 else y)
    if z is not None:
        out = ad.add(out, ad.scale(z, c))
    return out


def tvdrk3_step(u, flux: FluxProvider, dt: float, dx: float, boundary, *, frozen_limiter=False,
                stats: SolverStats | None = None, cfl: float | None = None):
    """One Shu-Osher TVDRK3 step of size ``dt``."""
    local = SolverStats()

    def rhs(v, s=None):
        return semidiscrete_rhs(v, flux, dx, boundary, frozen_limiter=frozen_limiter, stats=s)

    u1 = ad.add(u, ad.scale(rhs(u, local), dt))
    u2 = _axpy(0.75, u, 0.25, ad.add(u1, ad.scale(rhs(u1), dt)))
    u3 = _axpy(1.0 / 3.0, u, 2.0 / 3.0, ad.add(u2, ad.scale(rhs(u2), dt)))
    if stats is not None:
        stats.max_speed = max(stats.max_speed, local.max_speed)
        if cfl is not None and dt * local.max_speed > cfl * dx:
            stats.cfl_violations += 1
    return u3


def _finite(u) -> np.ndarray:
    v = ad.value_of(u)
    return np.isfinite(v).all(axis=(-2, -1))


def step(u, flux: FluxProvider, config: SolverConfig, dx: float, boundary, *, frozen_limiter=False,
         stats: SolverStats | None = None):
    """Advance by one observation interval ``config.dt`` using ``config.substeps`` sub-steps."""
    dt_sub = config.dt / config.substeps
    for _ in range(config.substeps):
        u = tvdrk3_step(u, flux, dt_sub, dx, boundary, frozen_limiter=frozen_limiter, stats=stats,
                        cfl=config.cfl)
    return u


def evolve(u0, flux: FluxProvider, config: SolverConfig, steps: int, dx: float, boundary,
           stats: SolverStats | None = None) -> np.ndarray:
    """States at ``t_j = j dt`` for ``j = 0..steps``, shape ``(steps+1, ..., n, p)``."""
    u = np.asarray(u0, dtype=np.float64)
    out = np.empty((steps + 1,) + u.shape)
    out[0] = u
    for j in range(1, steps + 1):
        u = step(u, flux, config, dx, boundary, stats=stats)
        if not np.all(_finite(u)):
            raise SolverDivergence("non-finite state", step=j)
        out[j] = u
    if stats is not None and stats.cfl_violations:
        logger.warning("CFL limit exceeded on %d sub-steps", stats.cfl_violations)
    return out
