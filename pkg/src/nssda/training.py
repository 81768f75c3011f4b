"""Recurrent rollout loss, Adam, and the full-batch training loop."""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field, replace

import numpy as np

from nssda import autodiff as ad
from nssda.core import FloorLog, SystemSpec
from nssda.solver import SolverDivergence

logger = logging.getLogger(__name__)


class TrainingFailure(RuntimeError):
    def __init__(self, message: str, record: "TrainRecord"):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    l_train: int
    epochs: int = 100
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    differentiate_through_limiter: bool = True
    model_kind: str = "escfn"
    max_halvings: int = 10

    def __post_init__(self):
        if self.l_train < 1:
            raise ValueError("l_train must be positive")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


@dataclass
class TrainRecord:
    losses: list = field(default_factory=list)
    divergent: list = field(default_factory=list)
    lr_used: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    final_loss: float = float("nan")

    def __len__(self):
        return len(self.losses)

    def write_csv(self, path, timing: bool = True) -> None:
        """One row per epoch; ``timing=False`` drops the wall-clock column."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "divergent", "lr"] + (["seconds"] if timing else []))
            for e in range(len(self.losses)):
                row = [e + 1, repr(float(self.losses[e])), int(self.divergent[e]), repr(float(self.lr_used[e]))]
                w.writerow(row + ([f"{self.seconds[e]:.6f}"] if timing else []))


def preprocess(observations: np.ndarray, spec: SystemSpec, floors: FloorLog | None = None) -> np.ndarray:
    """Physical-frame snapshots ``(L+1, n, p)`` to conserved-frame training targets.

    Depth/density and pressure are floored first; the count lands in ``floors``.
    """
    floors = FloorLog() if floors is None else floors
    clamped = spec.clamp_physical(observations, floors)
    if floors.count:
        logger.info("preprocess floored %d cells", floors.count)
    return spec.to_conserved(clamped)


def rollout(model, u0, steps: int):
    """Free-run ``steps`` applications of ``model.step`` starting at ``u0``."""
    out = [u0]
    u = u0
    for j in range(1, steps + 1):
        u = model.step(u)
        if not np.isfinite(ad.value_of(u)).all():
            raise SolverDivergence("non-finite rollout state", step=j)
        out.append(u)
    return out


def recurrent_loss(model, targets, l_train: int):
    """``(1/L) sum_{j=1..L} ||N^j(y_0) - y_j||^2`` with a plain sum of squares.

    The ``j = 0`` term vanishes identically and is skipped. Returns a DVar when
    the model parameters live on a tape, otherwise a float.
    """
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape[0] < l_train + 1:
        raise ValueError(f"need {l_train + 1} snapshots, got {targets.shape[0]}")
    u = targets[0]
    total = 0.0
    for j in range(1, l_train + 1):
        u = model.step(u)
        if not np.isfinite(ad.value_of(u)).all():
            raise SolverDivergence("non-finite rollout state", step=j)
        term = ad.total(ad.square(ad.sub(u, targets[j])))
        total = ad.add(total, term)
    return ad.scale(total, 1.0 / l_train)


def loss_and_grad(model, targets, l_train: int):
    tape = ad.Tape()
    bound, leaves = model.bind(tape)
    loss = recurrent_loss(bound, targets, l_train)
    if not ad.is_dvar(loss):
        return float(loss), [np.zeros(leaf.shape) for leaf in leaves]
    grads = ad.backward(loss)
    return float(loss.value), [grads.get(leaf.id, np.zeros(leaf.shape)) for leaf in leaves]


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """One bias-corrected Adam update; returns ``(new_params, new_state)``."""
    b1, b2 = betas
    t = state.t + 1
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def train(model, targets, config: TrainConfig, log_every: int = 0):
    """Fit ``model`` to the conserved snapshots ``targets[0..L]``.

    One full rollout and one Adam step per epoch. When an epoch's rollout
    diverges, the previous update is undone and re-applied with a halved
    learning rate; the epoch is flagged in the record.
    """
    if hasattr(model, "frozen_limiter"):
        model = replace(model, frozen_limiter=not config.differentiate_through_limiter)
    record = TrainRecord()
    params = [np.array(ad.value_of(a)) for a in model.arrays()]
    state = AdamState.zeros_like(params)
    prev = None  # (params, state, grads, lr) of the last applied update
    halvings = 0
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        current = model.with_arrays(params)
        try:
            loss, grads = loss_and_grad(current, targets, config.l_train)
            ok = np.isfinite(loss) and all(np.isfinite(g).all() for g in grads)
        except SolverDivergence:
            ok = False
        if ok:
            halvings = 0
            base = (params, state)
            params, state = adam_step(params, grads, state, config.lr, config.betas, config.eps)
            prev = (*base, grads)
            record.losses.append(loss)
            record.divergent.append(False)
            record.lr_used.append(config.lr)
        else:
            halvings = min(halvings + 1, config.max_halvings)
            lr = config.lr * 0.5**halvings
            if prev is not None:
                p0, s0, g0 = prev
                params, state = adam_step(p0, g0, s0, lr, config.betas, config.eps)
            record.losses.append(float("nan"))
            record.divergent.append(True)
            record.lr_used.append(lr)
            logger.warning("epoch %d diverged; retrying previous update with lr=%g", epoch + 1, lr)
        record.seconds.append(time.perf_counter() - t0)
        if log_every and (epoch + 1) % log_every == 0:
            logger.info("epoch %d loss %.6g", epoch + 1, record.losses[-1])
    if config.epochs and all(record.divergent):
        raise TrainingFailure("every epoch diverged", record)
    trained = model.with_arrays(params)
    trained = replace(trained, meta=dict(trained.meta, epochs=trained.meta.get("epochs", 0) + config.epochs))
    try:
        record.final_loss = float(recurrent_loss(trained, targets, config.l_train))
    except SolverDivergence:
        record.final_loss = float("nan")
    trained.meta["final_loss"] = record.final_loss
    if hasattr(trained, "frozen_limiter"):
        trained = replace(trained, frozen_limiter=False)
    return trained, record
