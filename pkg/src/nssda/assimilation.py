"""Ensemble transform Kalman filtering with covariance (ETKF) or gradient-moment (SETKF) weights.

Observations are dense and direct (``H = I``) with ``Sigma = sigma2 I``. Ensembles
are ``(K, n, p)`` arrays in the physical frame; analysis acts on all ``n p``
entries jointly.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from nssda import rng
from nssda.core import FloorLog, SystemSpec, relative_l2

logger = logging.getLogger(__name__)

WEIGHT_CONVENTIONS = ("covariance", "precision")


class EnsembleCollapse(RuntimeError):
    def __init__(self, step: int):
        super().__init__(f"every ensemble member diverged at step {step}")
        self.step = step


class FilterError(RuntimeError):
    pass


@dataclass
class FilterConfig:
    """Analysis settings.

    ``weight_convention='covariance'`` reads ``|v|_W^2 = v^T W^-1 v`` so ``W``
    acts as a prior variance; ``'precision'`` reads ``v^T W v``.
    """

    kind: str = "setkf"
    alpha: float = 1.01
    beta: float = 1e-3
    sigma2: float = 0.1
    w_floor: float = 1e-8
    seed: int = 0
    ensemble_size: int = 100
    init_std: float = 0.1
    weight_convention: str = "covariance"

    def __post_init__(self):
        if self.kind not in ("etkf", "setkf"):
            raise ValueError(f"unknown filter {self.kind!r}")
        if not (self.alpha > 0 and self.beta > 0 and self.w_floor > 0):
            raise ValueError("alpha, beta and w_floor must be positive")
        if self.weight_convention not in WEIGHT_CONVENTIONS:
            raise ValueError(f"unknown weight convention {self.weight_convention!r}")


@dataclass
class FilterStepSummary:
    j: int
    t: float
    prior_mean: np.ndarray
    posterior_mean: np.ndarray
    prior_error: np.ndarray | None
    posterior_error: np.ndarray | None
    w_min: float
    w_max: float
    diverged: int


@dataclass
class FilterResult:
    posterior_means: np.ndarray  # (J+1, n, p); index 0 is the initial ensemble mean
    summaries: list = field(default_factory=list)
    diverged_total: int = 0
    floors: int = 0

    def errors(self, which: str = "posterior") -> np.ndarray:
        key = "posterior_error" if which == "posterior" else "prior_error"
        return np.array([getattr(s, key) for s in self.summaries])


def init_ensemble(m0: np.ndarray, std: float, size: int, seed: int) -> np.ndarray:
    """``size`` members ``m0 + N(0, std^2 I)``, drawn member by member in (channel, cell) order."""
    if std < 0:
        raise ValueError("std must be nonnegative")
    m0 = np.asarray(m0, dtype=np.float64)
    n, p = m0.shape
    eta = rng.stream(seed, "ensemble").standard_normal((size, p, n))
    return m0[None] + std * np.swapaxes(eta, 1, 2)


def forecast(members: np.ndarray, model, spec: SystemSpec, floors: FloorLog | None = None):
    """Map each member physical -> conserved -> one surrogate step -> physical.

    Members whose step produces non-finite values keep their pre-step state.
    Returns ``(prior, n_diverged)``.
    """
    floors = FloorLog() if floors is None else floors
    u = spec.to_conserved(spec.clamp_physical(members, floors))
    with np.errstate(all="ignore"):
        stepped = np.asarray(model.step(u))
    bad = ~np.isfinite(stepped).all(axis=(-2, -1))
    if bad.any():
        stepped[bad] = u[bad]
    prior = spec.to_physical(stepped, floors)
    return prior, int(bad.sum())


def prior_stats(members: np.ndarray):
    """Sample mean and centred deviations; ``C = X^T X / (K - 1)`` stays factored."""
    if members.shape[0] < 2:
        raise ValueError("prior statistics need at least two members")
    mean = members.mean(axis=0)
    return mean, members - mean[None]


def weight_etkf(deviations: np.ndarray, alpha: float, w_floor: float = 1e-8) -> np.ndarray:
    """``alpha^2 diag(C)``, floored."""
    k = deviations.shape[0]
    diag = np.sum(deviations * deviations, axis=0) / (k - 1)
    return np.maximum(alpha * alpha * diag, w_floor)


def gradient_second_moment(members: np.ndarray, dx: float) -> np.ndarray:
    """Cell-centred mean over members of squared one-sided differences ``((v_{i+1} - v_i)/dx)^2``."""
    d = (members[:, 1:] - members[:, :-1]) / dx
    s_half = np.mean(d * d, axis=0)
    cell = np.empty(members.shape[1:])
    cell[1:-1] = 0.5 * (s_half[:-1] + s_half[1:])
    cell[0] = s_half[0]
    cell[-1] = s_half[-1]
    return cell


def weight_setkf(members: np.ndarray, beta: float, dx: float, w_floor: float = 1e-8) -> np.ndarray:
    """``beta S`` with ``S`` the gradient second moment per channel, floored."""
    return np.maximum(beta * gradient_second_moment(members, dx), w_floor)


def analysis_mean(prior_mean, weights, y, sigma2: float, convention: str = "covariance"):
    """Elementwise minimiser of ``|y - v|_Sigma^2 / 2 + |v - prior_mean|_W^2 / 2``."""
    if convention == "covariance":
        return (sigma2 * prior_mean + weights * y) / (sigma2 + weights)
    if convention == "precision":
        return (y + sigma2 * weights * prior_mean) / (1.0 + sigma2 * weights)
    raise ValueError(f"unknown weight convention {convention!r}")


def transform_matrix(deviations: np.ndarray, sigma2: float) -> np.ndarray:
    """Symmetric ``(I + X^T X / ((K-1) sigma2))^(-1/2)`` for deviations ``(K, ...)``."""
    k = deviations.shape[0]
    x = deviations.reshape(k, -1)
    gram = (x @ x.T) / ((k - 1) * sigma2)
    try:
        lam, q = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(gram)
        raise FilterError(f"eigendecomposition failed (condition number {cond:.3e})") from exc
    lam = np.maximum(lam, 0.0)
    return (q / np.sqrt(1.0 + lam)) @ q.T


def analysis_transform(deviations: np.ndarray, posterior_mean: np.ndarray, sigma2: float) -> np.ndarray:
    """Posterior members ``m + X T`` (square-root update of the deviations)."""
    k = deviations.shape[0]
    t = transform_matrix(deviations, sigma2)
    new_dev = (t @ deviations.reshape(k, -1)).reshape(deviations.shape)
    return posterior_mean[None] + new_dev


def analysis(prior: np.ndarray, y: np.ndarray, config: FilterConfig, dx: float):
    """One analysis step; returns ``(posterior_members, prior_mean, posterior_mean, W)``."""
    mean, dev = prior_stats(prior)
    if config.kind == "etkf":
        w = weight_etkf(dev, config.alpha, config.w_floor)
    else:
        w = weight_setkf(prior, config.beta, dx, config.w_floor)
    m = analysis_mean(mean, w, y, config.sigma2, config.weight_convention)
    return analysis_transform(dev, m, config.sigma2), mean, m, w


def assimilate(observations: np.ndarray, model, spec: SystemSpec, config: FilterConfig, m0: np.ndarray,
               dx: float, dt: float, truth: np.ndarray | None = None, steps: int | None = None,
               progress=None) -> FilterResult:
    """Filter from ``t = 0``: forecast with ``model`` then analyse ``y_{j+1}``, ``j = 0..J-1``."""
    observations = np.asarray(observations, dtype=np.float64)
    steps = observations.shape[0] - 1 if steps is None else steps
    members = init_ensemble(m0, config.init_std, config.ensemble_size, config.seed)
    floors = FloorLog()
    means = np.empty((steps + 1,) + members.shape[1:])
    means[0] = members.mean(axis=0)
    result = FilterResult(means)
    for j in range(steps):
        prior, bad = forecast(members, model, spec, floors)
        if bad == members.shape[0]:
            raise EnsembleCollapse(j + 1)
        result.diverged_total += bad
        members, mhat, m, w = analysis(prior, observations[j + 1], config, dx)
        means[j + 1] = m
        prior_err = post_err = None
        if truth is not None:
            prior_err = relative_l2(mhat, truth[j + 1], dx)
            post_err = relative_l2(m, truth[j + 1], dx)
        result.summaries.append(FilterStepSummary(j + 1, (j + 1) * dt, mhat, m, prior_err, post_err,
                                                  float(w.min()), float(w.max()), bad))
        if progress is not None:
            progress(j + 1)
    result.floors = floors.count
    if floors.count:
        logger.info("positivity floor engaged on %d cells during filtering", floors.count)
    return result


def write_summary_csv(path, result: FilterResult, names, free_run_errors=None) -> None:
    """One row per analysis step: errors per channel, weight range, divergence count."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        head = ["j", "t"] + [f"prior_{c}" for c in names] + [f"posterior_{c}" for c in names]
        if free_run_errors is not None:
            head += [f"prediction_{c}" for c in names]
        w.writerow(head + ["w_min", "w_max", "diverged"])
        for i, s in enumerate(result.summaries):
            row = [s.j, repr(s.t)]
            row += [repr(float(x)) for x in s.prior_error] + [repr(float(x)) for x in s.posterior_error]
            if free_run_errors is not None:
                row += [repr(float(x)) for x in free_run_errors[s.j]]
            w.writerow(row + [repr(s.w_min), repr(s.w_max), s.diverged])
