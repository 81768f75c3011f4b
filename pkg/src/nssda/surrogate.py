"""Neural surrogates: the conservative neural-flux model (ESCFN) and a Neural ODE baseline."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from nssda import autodiff as ad
from nssda import rng
from nssda.solver import SolverConfig, step as solver_step

ACTIVATIONS = {"silu": ad.silu, "relu": ad.relu}
MAGIC = b"NSSDA1"


class CheckpointError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte {offset}")
        self.offset = offset


@dataclass
class MlpParams:
    """Fully connected net; the last layer has no bias.

    ``weights[m]`` is ``(dims[m+1], dims[m])``; ``biases`` has one entry per
    hidden layer. Entries may be numpy arrays or tape variables.
    """

    dims: tuple[int, ...]
    weights: list
    biases: list
    activation: str = "silu"

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        if len(self.weights) != len(self.dims) - 1 or len(self.biases) != len(self.dims) - 2:
            raise ValueError(f"parameter count does not match dims {self.dims}")
        for m, w in enumerate(self.weights):
            if tuple(w.shape) != (self.dims[m + 1], self.dims[m]):
                raise ValueError(f"layer {m} weight {w.shape} != {(self.dims[m + 1], self.dims[m])}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @classmethod
    def init(cls, dims, activation: str, gen: np.random.Generator) -> "MlpParams":
        """Fan-in uniform init ``U(-1/sqrt(d_in), 1/sqrt(d_in))``."""
        weights, biases = [], []
        for m in range(len(dims) - 1):
            bound = 1.0 / np.sqrt(dims[m])
            weights.append(gen.uniform(-bound, bound, size=(dims[m + 1], dims[m])))
            if m < len(dims) - 2:
                biases.append(gen.uniform(-bound, bound, size=dims[m + 1]))
        return cls(tuple(dims), weights, biases, activation)

    @classmethod
    def zeros(cls, dims, activation: str = "silu") -> "MlpParams":
        return cls(
            tuple(dims),
            [np.zeros((dims[m + 1], dims[m])) for m in range(len(dims) - 1)],
            [np.zeros(dims[m + 1]) for m in range(len(dims) - 2)],
            activation,
        )

    def arrays(self) -> list:
        """Parameters in layer order: ``W1, b1, W2, b2, ..., WM``."""
        out = []
        for m, w in enumerate(self.weights):
            out.append(w)
            if m < len(self.biases):
                out.append(self.biases[m])
        return out

    def with_arrays(self, arrays) -> "MlpParams":
        arrays = list(arrays)
        weights, biases = [], []
        i = 0
        for m in range(len(self.weights)):
            weights.append(arrays[i])
            i += 1
            if m < len(self.biases):
                biases.append(arrays[i])
                i += 1
        return MlpParams(self.dims, weights, biases, self.activation)

    @property
    def size(self) -> int:
        return sum(int(np.prod(a.shape)) for a in self.arrays())


def _silu_inplace(h):
    e = np.negative(h)
    with np.errstate(over="ignore"):
        np.exp(e, out=e)
    e += 1.0
    h /= e


def _relu_inplace(h):
    np.maximum(h, 0.0, out=h)


_INPLACE = {"silu": _silu_inplace, "relu": _relu_inplace}
BLOCK_ROWS = 512


def _mlp_blocked(params: MlpParams, x: np.ndarray) -> np.ndarray:
    # Constant-parameter evaluation in row blocks so the hidden activations
    # stay cache resident; same arithmetic as the tape path, op for op.
    act = _INPLACE[params.activation]
    rows = x.reshape(-1, x.shape[-1])
    out = np.empty((rows.shape[0], params.dims[-1]))
    w_last = params.weights[-1].T
    for s in range(0, rows.shape[0], BLOCK_ROWS):
        h = rows[s:s + BLOCK_ROWS]
        for w, b in zip(params.weights[:-1], params.biases):
            h = h @ w.T
            h += b
            act(h)
        np.matmul(h, w_last, out=out[s:s + BLOCK_ROWS])
    return out.reshape(x.shape[:-1] + (params.dims[-1],))


def mlp_forward(params: MlpParams, x):
    """``h_m = act(W_m h_{m-1} + b_m)`` for hidden layers, then ``W_M h_{M-1}``."""
    if x.shape[-1] != params.dims[0]:
        raise ad.ShapeError(f"input width {x.shape[-1]} != {params.dims[0]}")
    if not ad.is_dvar(x) and not any(ad.is_dvar(a) for a in params.arrays()):
        return _mlp_blocked(params, np.asarray(x, dtype=np.float64))
    act = ACTIVATIONS[params.activation]
    h = x
    for w, b in zip(params.weights[:-1], params.biases):
        h = act(ad.add(ad.matvec(w, h), b))
    return ad.matvec(params.weights[-1], h)


def spectral_radius(jac: np.ndarray) -> np.ndarray:
    """Largest eigenvalue modulus of each ``(..., p, p)`` matrix; closed form for p <= 2."""
    p = jac.shape[-1]
    if p == 1:
        return np.abs(jac[..., 0, 0])
    if p == 2:
        half_tr = 0.5 * (jac[..., 0, 0] + jac[..., 1, 1])
        det = jac[..., 0, 0] * jac[..., 1, 1] - jac[..., 0, 1] * jac[..., 1, 0]
        disc = half_tr * half_tr - det
        real = np.abs(half_tr) + np.sqrt(np.maximum(disc, 0.0))
        return np.where(disc >= 0.0, real, np.sqrt(np.abs(det)))
    return np.max(np.abs(np.linalg.eigvals(jac)), axis=-1)


class _Surrogate:
    """Shared plumbing: named nets, flat parameter views and tape binding."""

    kind = ""

    def nets(self) -> dict[str, MlpParams]:
        raise NotImplementedError

    def with_nets(self, nets: dict[str, MlpParams]):
        raise NotImplementedError

    def arrays(self) -> list:
        return [a for net in self.nets().values() for a in net.arrays()]

    def with_arrays(self, arrays):
        arrays = list(arrays)
        nets, i = {}, 0
        for name, net in self.nets().items():
            k = len(net.arrays())
            nets[name] = net.with_arrays(arrays[i : i + k])
            i += k
        return self.with_nets(nets)

    def bind(self, tape: ad.Tape):
        """Copy whose parameters are fresh leaves on ``tape``; returns ``(model, leaves)``."""
        leaves = [tape.leaf(a) for a in self.arrays()]
        return self.with_arrays(leaves), leaves

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(ad.value_of(a)) for a in self.arrays()])

    def with_flat(self, vec: np.ndarray):
        out, i = [], 0
        for a in self.arrays():
            k = int(np.prod(a.shape))
            out.append(np.asarray(vec[i : i + k], dtype=np.float64).reshape(a.shape))
            i += k
        return self.with_arrays(out)


@dataclass
class EscfnModel(_Surrogate):
    """KT scheme with a learned flux ``F(u)`` and a learned (or Jacobian) wave speed.

    Also acts as the flux provider handed to the finite-volume solver.
    """

    flux_net: MlpParams
    speed_net: MlpParams
    dx: float
    dt: float
    boundary: tuple | None = None
    wavespeed_mode: str = "learned"
    substeps: int = 1
    frozen_limiter: bool = False
    meta: dict = field(default_factory=dict)

    kind = "escfn"

    def __post_init__(self):
        if self.wavespeed_mode not in ("learned", "jacobian"):
            raise ValueError(f"unknown wave-speed mode {self.wavespeed_mode!r}")
        p = self.flux_net.dims[0]
        if self.flux_net.dims[-1] != p or self.speed_net.dims[0] != p:
            raise ValueError("flux net must map R^p to R^p and speed net must take p inputs")

    @property
    def p(self) -> int:
        return self.flux_net.dims[0]

    @classmethod
    def create(cls, p: int, dx: float, dt: float, boundary=None, seed: int = 0,
               hidden=(64,) * 5, speed_hidden=(64,) * 2, wavespeed_mode: str = "learned",
               substeps: int = 1) -> "EscfnModel":
        gen = rng.stream(seed, "params")
        flux_net = MlpParams.init((p, *hidden, p), "silu", gen)
        speed_net = MlpParams.init((p, *speed_hidden, 1), "relu", gen)
        return cls(flux_net, speed_net, dx, dt, boundary, wavespeed_mode, substeps,
                   meta={"seed": seed, "epochs": 0})

    def nets(self):
        return {"flux": self.flux_net, "speed": self.speed_net}

    def with_nets(self, nets):
        return replace(self, flux_net=nets["flux"], speed_net=nets["speed"])

    def flux(self, u):
        return mlp_forward(self.flux_net, u)

    def max_wave_speed(self, u_plus, u_minus):
        n = u_plus.shape[-2]
        both = ad.concatenate([u_plus, u_minus], axis=-2)
        if self.wavespeed_mode == "learned":
            s = ad.absolute(mlp_forward(self.speed_net, both))
            s = ad.reshape(s, s.shape[:-1])
        else:
            frozen = self.flux_net.with_arrays([ad.value_of(a) for a in self.flux_net.arrays()])
            jac = ad.jacobian(lambda x: mlp_forward(frozen, x), ad.value_of(both))
            s = spectral_radius(jac)
        return ad.maximum(ad.take(s, np.s_[..., :n]), ad.take(s, np.s_[..., n:]))

    def step(self, u, stats=None):
        """One observation interval of the learned scheme."""
        cfg = SolverConfig(dt=self.dt, substeps=self.substeps)
        return solver_step(u, self, cfg, self.dx, self.boundary, frozen_limiter=self.frozen_limiter,
                           stats=stats)

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "flux_dims": list(self.flux_net.dims),
            "flux_activation": self.flux_net.activation,
            "speed_dims": list(self.speed_net.dims),
            "speed_activation": self.speed_net.activation,
            "dx": self.dx,
            "dt": self.dt,
            "boundary": None if self.boundary is None else [list(map(float, b)) for b in self.boundary],
            "wavespeed_mode": self.wavespeed_mode,
            "substeps": self.substeps,
            "meta": self.meta,
        }


@dataclass
class NeuralOdeModel(_Surrogate):
    """``du/dt = f(u)`` on the flattened channel-major state, one RK4 step per ``dt``."""

    net: MlpParams
    n: int
    p: int
    dt: float
    meta: dict = field(default_factory=dict)

    kind = "node"

    def __post_init__(self):
        if self.net.dims[0] != self.n * self.p or self.net.dims[-1] != self.n * self.p:
            raise ValueError(f"net dims {self.net.dims} do not match state size {self.n * self.p}")

    @classmethod
    def create(cls, n: int, p: int, dt: float, seed: int = 0, hidden=(64,) * 4) -> "NeuralOdeModel":
        gen = rng.stream(seed, "params")
        net = MlpParams.init((n * p, *hidden, n * p), "silu", gen)
        return cls(net, n, p, dt, meta={"seed": seed, "epochs": 0})

    def nets(self):
        return {"net": self.net}

    def with_nets(self, nets):
        return replace(self, net=nets["net"])

    def rhs(self, u):
        if u.shape[-2:] != (self.n, self.p):
            raise ad.ShapeError(f"state shape {u.shape} != (..., {self.n}, {self.p})")
        lead = tuple(u.shape[:-2])
        flat = ad.reshape(ad.swapaxes(u), lead + (self.n * self.p,))
        out = mlp_forward(self.net, flat)
        return ad.swapaxes(ad.reshape(out, lead + (self.p, self.n)))

    def step(self, u, stats=None):
        h = self.dt
        k1 = self.rhs(u)
        k2 = self.rhs(ad.add(u, ad.scale(k1, 0.5 * h)))
        k3 = self.rhs(ad.add(u, ad.scale(k2, 0.5 * h)))
        k4 = self.rhs(ad.add(u, ad.scale(k3, h)))
        incr = ad.add(ad.add(k1, ad.scale(k2, 2.0)), ad.add(ad.scale(k3, 2.0), k4))
        return ad.add(u, ad.scale(incr, h / 6.0))

    def metadata(self) -> dict:
        return {
            "kind": self.kind,
            "dims": list(self.net.dims),
            "activation": self.net.activation,
            "n": self.n,
            "p": self.p,
            "dt": self.dt,
            "meta": self.meta,
        }


def escfn_step(model: EscfnModel, u, stats=None):
    return model.step(u, stats=stats)


def node_step(model: NeuralOdeModel, u):
    return model.step(u)


def save_checkpoint(model, path) -> None:
    """Magic bytes, u64 length + JSON metadata, then little-endian float64 parameters."""
    meta = json.dumps(model.metadata(), sort_keys=True).encode("utf-8")
    payload = model.flat().astype("<f8").tobytes()
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(meta)))
        fh.write(meta)
        fh.write(struct.pack("<Q", len(payload) // 8))
        fh.write(payload)


def load_checkpoint(path):
    data = Path(path).read_bytes()
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError("bad magic", 0)
    off = len(MAGIC)
    if len(data) < off + 8:
        raise CheckpointError("truncated metadata length", off)
    (mlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) < off + mlen:
        raise CheckpointError("truncated metadata block", off)
    try:
        meta = json.loads(data[off : off + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable metadata ({exc})", off) from None
    off += mlen
    if len(data) < off + 8:
        raise CheckpointError("truncated payload length", off)
    (count,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) != off + 8 * count:
        raise CheckpointError(f"payload holds {(len(data) - off) // 8} values, expected {count}", off)
    vec = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
    model = _skeleton(meta, off)
    if model.flat().size != count:
        raise CheckpointError("parameter count does not match metadata", off)
    return model.with_flat(vec)


def _skeleton(meta: dict, off: int):
    try:
        if meta["kind"] == "escfn":
            boundary = meta["boundary"]
            if boundary is not None:
                boundary = (np.array(boundary[0]), np.array(boundary[1]))
            return EscfnModel(
                MlpParams.zeros(meta["flux_dims"], meta["flux_activation"]),
                MlpParams.zeros(meta["speed_dims"], meta["speed_activation"]),
                meta["dx"], meta["dt"], boundary, meta["wavespeed_mode"], meta["substeps"],
                meta=meta.get("meta", {}),
            )
        if meta["kind"] == "node":
            return NeuralOdeModel(MlpParams.zeros(meta["dims"], meta["activation"]), meta["n"],
                                  meta["p"], meta["dt"], meta=meta.get("meta", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"incomplete metadata ({exc})", off) from None
    raise CheckpointError(f"unknown model kind {meta.get('kind')!r}", off)
