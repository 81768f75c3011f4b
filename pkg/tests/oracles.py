"""Independent reference computations shared by the test modules."""
import numpy as np

from nssda import autodiff as ad
from nssda import solver, training
from nssda.physics import SweFlux
from nssda.solver import SolverConfig


def swe_targets(n=32, steps=3, dt=0.004, seed=0):
    """Conserved-frame SWE snapshots on a periodic unit interval."""
    gen = np.random.default_rng(seed)
    x = (np.arange(n) + 0.5) / n
    h = 1.5 + 0.3 * np.sin(2 * np.pi * x + gen.uniform(0, 2 * np.pi))
    hu = 0.2 * np.cos(2 * np.pi * x)
    u0 = np.column_stack([h, hu])
    return solver.evolve(u0, SweFlux(), SolverConfig(dt=dt), steps, 1.0 / n, None)


class PsiReplay:
    """Patch ``solver.minmod_psi`` to record limiter values once and replay them later."""

    def __init__(self, monkeypatch):
        self.values, self.mode, self.i = [], "record", 0
        orig = solver.minmod_psi

        def patched(r):
            if self.mode == "record":
                out = orig(r)
                self.values.append(np.array(ad.value_of(out)))
                return out
            out = self.values[self.i]
            self.i += 1
            return out

        monkeypatch.setattr(solver, "minmod_psi", patched)

    def replay(self):
        self.mode, self.i = "replay", 0


def taped_loss(model, targets, l_train):
    # evaluate through the tape so the limiter code path matches the gradient pass
    tape = ad.Tape()
    bound, _ = model.bind(tape)
    return float(ad.value_of(training.recurrent_loss(bound, targets, l_train)))


def fd_check(model, targets, l_train, count=20, h=1e-6, seed=0, replay=None):
    """Analytic vs central-difference gradient at ``count`` random parameter indices.

    Returns ``(analytic, numeric)`` arrays. With ``replay`` the limiter values of
    the gradient pass are frozen for the finite differences as well.
    """
    loss, grads = training.loss_and_grad(model, targets, l_train)
    flat_grad = np.concatenate([g.ravel() for g in grads])
    if replay is not None:
        replay.replay()
    theta = model.flat()
    idx = np.random.default_rng(seed).choice(theta.size, size=count, replace=False)
    numeric = []
    for k in idx:
        vals = []
        for sgn in (1.0, -1.0):
            t = theta.copy()
            t[k] += sgn * h
            if replay is not None:
                replay.i = 0
            vals.append(taped_loss(model.with_flat(t), targets, l_train))
        numeric.append((vals[0] - vals[1]) / (2 * h))
    return flat_grad[idx], np.array(numeric)


def fd_relative_error(analytic, numeric):
    scale = np.maximum(np.abs(numeric), 1e-3 * np.abs(numeric).max())
    return np.abs(analytic - numeric) / scale


def scalar_kalman(y, m0, p0, a, sigma2):
    """Exact filter means for ``v_{j+1} = a v_j`` observed with variance ``sigma2``."""
    m, p = m0, p0
    means = [m]
    for obs in y[1:]:
        m, p = a * m, a * a * p
        gain = p / (p + sigma2)
        m, p = m + gain * (obs - m), (1 - gain) * p
        means.append(m)
    return np.array(means)
