"""Grids, field states, physical/conserved transforms and error metrics."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PHYSICAL = "physical"
CONSERVED = "conserved"

#: lower bound applied to depth/density and internal energy before dividing
FLOOR = 1e-6


class PositivityError(ValueError):
    """A physical state has nonpositive depth, density or pressure."""


class SnapshotFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Uniform cell-centered grid on ``[a, b]`` with ``n`` cells."""

    a: float
    b: float
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"grid needs at least one cell, got n={self.n}")
        if not self.b > self.a:
            raise ValueError(f"empty interval [{self.a}, {self.b}]")

    @property
    def dx(self) -> float:
        return (self.b - self.a) / self.n

    @property
    def centers(self) -> np.ndarray:
        return self.a + (np.arange(self.n) + 0.5) * self.dx

    def refined(self, factor: int) -> "Grid1D":
        return Grid1D(self.a, self.b, self.n * factor)


@dataclass
class FloorLog:
    """Running count of cells clamped by the positivity floor."""

    count: int = 0

    def add(self, k: int) -> None:
        if k:
            self.count += int(k)
            logger.debug("positivity floor engaged on %d cells (total %d)", k, self.count)


@dataclass(frozen=True)
class SystemSpec:
    """A 1D hyperbolic system: channel names, constant, frame maps and boundary states.

    ``boundary`` holds the conserved-frame Dirichlet states ``(left, right)``;
    ``None`` selects periodic ghost cells.
    """

    name: str
    physical_names: tuple[str, ...]
    conserved_names: tuple[str, ...]
    constant: float = 1.0
    boundary: tuple[np.ndarray, np.ndarray] | None = None

    @property
    def p(self) -> int:
        return len(self.conserved_names)

    def with_boundary(self, left, right) -> "SystemSpec":
        left = np.asarray(left, dtype=np.float64)
        right = np.asarray(right, dtype=np.float64)
        return SystemSpec(
            self.name, self.physical_names, self.conserved_names, self.constant, (left, right)
        )

    def periodic(self) -> "SystemSpec":
        return SystemSpec(self.name, self.physical_names, self.conserved_names, self.constant)

    def names(self, frame: str) -> tuple[str, ...]:
        return self.physical_names if frame == PHYSICAL else self.conserved_names

    # array-level maps; arrays are (..., n, p)

    def clamp_physical(self, v: np.ndarray, floors: FloorLog | None = None) -> np.ndarray:
        """Floor depth/density (and pressure) of physical-frame values."""
        v = np.array(v, dtype=np.float64)
        idx = [0] if self.name == "swe" else [0, 2] if self.name == "euler" else []
        for k in idx:
            low = ~(v[..., k] >= FLOOR)
            if floors is not None:
                floors.add(np.count_nonzero(low))
            v[..., k] = np.where(low, FLOOR, v[..., k])
        return v

    def to_conserved(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=np.float64)
        if self.name == "swe":
            h, u = v[..., 0], v[..., 1]
            if np.any(~(h > 0)):
                raise PositivityError("nonpositive depth h")
            return np.stack([h, h * u], axis=-1)
        if self.name == "euler":
            rho, u, p = v[..., 0], v[..., 1], v[..., 2]
            if np.any(~(rho > 0)) or np.any(~(p > 0)):
                raise PositivityError("nonpositive density or pressure")
            gam = self.constant
            return np.stack([rho, rho * u, p / (gam - 1.0) + 0.5 * rho * u * u], axis=-1)
        return v.copy()

    def to_physical(self, u: np.ndarray, floors: FloorLog | None = None) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if self.name == "swe":
            h = u[..., 0]
            low = ~(h >= FLOOR)
            if floors is not None:
                floors.add(np.count_nonzero(low))
            h = np.where(low, FLOOR, h)
            return np.stack([h, u[..., 1] / h], axis=-1)
        if self.name == "euler":
            rho, mom, energy = u[..., 0], u[..., 1], u[..., 2]
            low = ~(rho >= FLOOR)
            rho = np.where(low, FLOOR, rho)
            vel = mom / rho
            eint = energy - 0.5 * mom * vel
            low_e = ~(eint >= FLOOR)
            if floors is not None:
                floors.add(np.count_nonzero(low) + np.count_nonzero(low_e))
            eint = np.where(low_e, FLOOR, eint)
            return np.stack([rho, vel, (self.constant - 1.0) * eint], axis=-1)
        return u.copy()


def shallow_water(g: float = 1.0) -> SystemSpec:
    return SystemSpec("swe", ("h", "u"), ("h", "hu"), g)


def euler(gamma: float = 1.4) -> SystemSpec:
    return SystemSpec("euler", ("rho", "u", "p"), ("rho", "rhou", "E"), gamma)


def burgers() -> SystemSpec:
    """Scalar Burgers, used only to verify the solver."""
    return SystemSpec("burgers-test", ("u",), ("u",), 1.0)


def system_by_name(name: str, constant: float | None = None) -> SystemSpec:
    if name == "swe":
        return shallow_water(1.0 if constant is None else constant)
    if name == "euler":
        return euler(1.4 if constant is None else constant)
    if name == "burgers-test":
        return burgers()
    raise ValueError(f"unknown system {name!r}")


@dataclass(frozen=True)
class FieldState:
    """Cell averages of ``p`` channels at one instant; ``values`` is ``(n, p)``."""

    values: np.ndarray
    frame: str
    names: tuple[str, ...]
    time: float = 0.0

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != len(self.names):
            raise ValueError(f"values {vals.shape} do not match channels {self.names}")
        if self.frame not in (PHYSICAL, CONSERVED):
            raise ValueError(f"unknown frame {self.frame!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]


def phi(state: FieldState, spec: SystemSpec) -> FieldState:
    """Physical -> conserved."""
    if state.frame != PHYSICAL:
        raise ValueError("phi expects a physical-frame state")
    return FieldState(spec.to_conserved(state.values), CONSERVED, spec.conserved_names, state.time)


def phi_inverse(state: FieldState, spec: SystemSpec, floors: FloorLog | None = None) -> FieldState:
    """Conserved -> physical, flooring depth/density and internal energy."""
    if state.frame != CONSERVED:
        raise ValueError("phi_inverse expects a conserved-frame state")
    vals = spec.to_physical(state.values, floors)
    return FieldState(vals, PHYSICAL, spec.physical_names, state.time)


def l2_norm(values: np.ndarray, dx: float) -> np.ndarray:
    """Per-channel ``sqrt(dx * sum_i u_i^2)`` over the cell axis (-2)."""
    return np.sqrt(dx * np.sum(np.square(values), axis=-2))


def relative_l2(u, u_true, dx: float = 1.0) -> np.ndarray:
    """Per-channel relative discrete l2 error ``||u - u_true|| / ||u_true||``."""
    if isinstance(u, FieldState) and isinstance(u_true, FieldState):
        if u.frame != u_true.frame or u.n != u_true.n:
            raise ValueError("states must share grid and frame")
    a = np.asarray(getattr(u, "values", u), dtype=np.float64)
    b = np.asarray(getattr(u_true, "values", u_true), dtype=np.float64)
    if a.ndim == 1:
        a, b = a[:, None], b[:, None]
    denom = l2_norm(b, dx)
    if np.any(denom == 0.0):
        raise ZeroDivisionError("reference state has zero norm")
    return l2_norm(a - b, dx) / denom


@dataclass
class Trajectory:
    """Sequence of states on one grid; ``states`` is ``(steps+1, n, p)``."""

    system: str
    frame: str
    dx: float
    dt: float
    states: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    @property
    def p(self) -> int:
        return self.states.shape[2]

    def __len__(self) -> int:
        return self.states.shape[0]


def write_snapshots(path, traj: Trajectory) -> None:
    """Write one trajectory: a header line then one channel-major row per step."""
    path = Path(path)
    header = (
        f"system={traj.system} n={traj.n} p={traj.p} dx={traj.dx!r} "
        f"dt={traj.dt!r} frame={traj.frame}"
    )
    rows = np.ascontiguousarray(np.swapaxes(traj.states, 1, 2)).reshape(len(traj), -1)
    with open(path, "w") as fh:
        fh.write("# " + header + "\n")
        np.savetxt(fh, rows, fmt="%.17g", delimiter=",")


def read_snapshots(path) -> Trajectory:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("# "):
            raise SnapshotFormatError(f"{path}: missing header line")
        try:
            fields = dict(item.split("=", 1) for item in first[2:].split())
            n, p = int(fields["n"]), int(fields["p"])
            dx, dt = float(fields["dx"]), float(fields["dt"])
            system, frame = fields["system"], fields["frame"]
        except (KeyError, ValueError) as exc:
            raise SnapshotFormatError(f"{path}: bad header {first!r}") from exc
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    if rows.shape[1] != n * p:
        raise SnapshotFormatError(f"{path}: rows have {rows.shape[1]} values, expected {n * p}")
    states = np.swapaxes(rows.reshape(-1, p, n), 1, 2).copy()
    return Trajectory(system, frame, dx, dt, states)
