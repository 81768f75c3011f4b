"""Analytic fluxes, problem presets, ground-truth generation and synthetic observations."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from nssda import rng
from nssda.core import (
    CONSERVED,
    PHYSICAL,
    FieldState,
    Grid1D,
    PositivityError,
    SystemSpec,
    Trajectory,
    euler,
    shallow_water,
)
from nssda.solver import SolverConfig, SolverStats, evolve


class SweFlux:
    """Shallow water flux ``(hu, hu^2 + g h^2 / 2)``."""

    def __init__(self, g: float = 1.0):
        self.g = g

    def flux(self, u):
        h, m = u[..., 0], u[..., 1]
        if np.any(~(h > 0)):
            raise PositivityError("nonpositive depth in shallow water flux")
        return np.stack([m, m * m / h + 0.5 * self.g * h * h], axis=-1)

    def speed(self, u):
        h, m = u[..., 0], u[..., 1]
        if np.any(~(h > 0)):
            raise PositivityError("nonpositive depth in shallow water flux")
        return np.abs(m / h) + np.sqrt(self.g * h)

    def max_wave_speed(self, u_plus, u_minus):
        return np.maximum(self.speed(u_plus), self.speed(u_minus))


class EulerFlux:
    """Compressible Euler flux for ``(rho, rho u, E)`` with ideal-gas ``gamma``."""

    def __init__(self, gamma: float = 1.4):
        self.gamma = gamma

    def pressure(self, u):
        rho, m, e = u[..., 0], u[..., 1], u[..., 2]
        p = (self.gamma - 1.0) * (e - 0.5 * m * m / rho)
        if np.any(~(rho > 0)) or np.any(~(p > 0)):
            raise PositivityError("nonpositive density or pressure in Euler flux")
        return p

    def flux(self, u):
        rho, m, e = u[..., 0], u[..., 1], u[..., 2]
        p = self.pressure(u)
        vel = m / rho
        return np.stack([m, m * vel + p, vel * (e + p)], axis=-1)

    def speed(self, u):
        p = self.pressure(u)
        return np.abs(u[..., 1] / u[..., 0]) + np.sqrt(self.gamma * p / u[..., 0])

    def max_wave_speed(self, u_plus, u_minus):
        return np.maximum(self.speed(u_plus), self.speed(u_minus))


class BurgersFlux:
    """``f(u) = u^2 / 2``; test problem only."""

    def flux(self, u):
        return 0.5 * u * u

    def max_wave_speed(self, u_plus, u_minus):
        return np.maximum(np.abs(u_plus[..., 0]), np.abs(u_minus[..., 0]))


def analytic_flux(spec: SystemSpec):
    if spec.name == "swe":
        return SweFlux(spec.constant)
    if spec.name == "euler":
        return EulerFlux(spec.constant)
    if spec.name == "burgers-test":
        return BurgersFlux()
    raise ValueError(f"no analytic flux for {spec.name!r}")


# Dam break (shallow water, g = 1)
DAM_BREAK = dict(h_l=3.5691196, h_r=1.178673, u_l=-0.064667, u_r=-0.045197, x0=0.003832)
# Shu-Osher (Euler, gamma = 1.4)
SHU_OSHER = dict(
    rho_l=3.857135, u_l=2.62936, p_l=10.33333, p_r=1.0, x_left=-4.0, x1=3.29867, gamma=1.4
)


@dataclass(frozen=True)
class ProblemPreset:
    """One benchmark problem with its default experiment sizes."""

    name: str
    system: str
    a: float
    b: float
    n: int
    dt: float
    J: int
    l_train: int
    sigma2: float
    epochs: int

    @property
    def grid(self) -> Grid1D:
        return Grid1D(self.a, self.b, self.n)

    def spec(self) -> SystemSpec:
        base = shallow_water(1.0) if self.system == "swe" else euler(SHU_OSHER["gamma"])
        left = base.to_conserved(initial_physical(self.name, np.array([self.a])))[0]
        right = base.to_conserved(initial_physical(self.name, np.array([self.b])))[0]
        return base.with_boundary(left, right)

    def with_overrides(self, **kw) -> "ProblemPreset":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})


PRESETS = {
    "dam-break": ProblemPreset("dam-break", "swe", -5.0, 5.0, 512, 0.005, 200, 20, 0.1, 100),
    "shu-osher": ProblemPreset("shu-osher", "euler", -5.0, 5.0, 512, 0.002, 800, 20, 0.2, 500),
}


def get_preset(name: str) -> ProblemPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def initial_physical(name: str, x: np.ndarray) -> np.ndarray:
    """Physical-frame initial data of a preset evaluated pointwise at ``x``."""
    x = np.asarray(x, dtype=np.float64)
    if name == "dam-break":
        c = DAM_BREAK
        left = x < c["x0"]
        h = np.where(left, c["h_l"], c["h_r"])
        u = np.where(left, c["u_l"], c["u_r"])
        return np.stack([h, u], axis=-1)
    if name == "shu-osher":
        c = SHU_OSHER
        x1 = c["x1"]
        wave = 1.0 + 0.2 * np.sin(5.0 * x)
        tapered = 1.0 + 0.2 * np.sin(5.0 * x) * np.exp(-((x - x1) ** 4))
        left = x <= c["x_left"]
        rho = np.where(left, c["rho_l"], np.where(x <= x1, wave, tapered))
        u = np.where(left, c["u_l"], 0.0)
        p = np.where(left, c["p_l"], c["p_r"])
        return np.stack([rho, u, p], axis=-1)
    raise ValueError(f"unknown preset {name!r}")


def make_initial(preset: ProblemPreset, grid: Grid1D | None = None) -> FieldState:
    grid = preset.grid if grid is None else grid
    spec = preset.spec()
    return FieldState(initial_physical(preset.name, grid.centers), PHYSICAL, spec.physical_names)


def generate_truth(preset: ProblemPreset, grid: Grid1D | None = None, refine: int = 4,
                   steps: int | None = None, stats: SolverStats | None = None) -> Trajectory:
    """Reference trajectory on ``grid`` in the physical frame.

    The initial cell values are prolonged onto a ``refine``-times finer grid,
    evolved with the analytic flux and ``refine`` sub-steps per ``dt``, and
    averaged back onto ``grid`` at every observation time.
    """
    grid = preset.grid if grid is None else grid
    steps = preset.J if steps is None else steps
    spec = preset.spec()
    v0 = initial_physical(preset.name, grid.centers)
    u0 = spec.to_conserved(v0)
    fine0 = np.repeat(u0, refine, axis=0)
    cfg = SolverConfig(dt=preset.dt, substeps=refine, cfl=1.0)
    fine = evolve(fine0, analytic_flux(spec), cfg, steps, grid.dx / refine, spec.boundary, stats=stats)
    coarse = fine.reshape(steps + 1, grid.n, refine, spec.p).mean(axis=2)
    states = spec.to_physical(coarse)
    states[0] = v0
    return Trajectory(spec.name, PHYSICAL, grid.dx, preset.dt, states,
                      meta={"preset": preset.name, "refine": refine})


@dataclass(frozen=True)
class NoiseModel:
    """I.i.d. Gaussian observation noise of variance ``sigma2``."""

    sigma2: float
    seed: int = 0


def observe(traj: Trajectory, noise: NoiseModel) -> Trajectory:
    """``y_j = v_j + eta_j``; draws are taken in (time, channel, cell) order."""
    if traj.frame != PHYSICAL:
        raise ValueError("observations are taken of physical-frame trajectories")
    gen = rng.stream(noise.seed, "observation")
    steps, n, p = traj.states.shape
    eta = gen.standard_normal((steps, p, n))
    y = traj.states + np.sqrt(noise.sigma2) * np.swapaxes(eta, 1, 2)
    meta = dict(traj.meta, sigma2=noise.sigma2, seed=noise.seed)
    return Trajectory(traj.system, PHYSICAL, traj.dx, traj.dt, y, meta=meta)


def to_conserved_trajectory(traj: Trajectory, spec: SystemSpec) -> Trajectory:
    return Trajectory(traj.system, CONSERVED, traj.dx, traj.dt, spec.to_conserved(traj.states),
                      meta=dict(traj.meta))
