"""End-to-end twin experiments: truth, observations, training, free run, filtering, bundles.

A *bundle* is a directory of plot-ready CSV and snapshot files plus a
``manifest.json`` holding sha256 checksums of every deterministic file. Wall
clock timings are written separately and left out of the checksums.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from nssda import __version__
from nssda import assimilation as da
from nssda import physics, surrogate, training
from nssda.config import RunConfig
from nssda.core import SystemSpec, Trajectory, relative_l2, write_snapshots

logger = logging.getLogger(__name__)

FILTER_KINDS = ("etkf", "setkf")
OUTPUTS = ("free_run",) + FILTER_KINDS


@dataclass
class TwinData:
    """Truth and noisy observations for one resolved config."""

    config: RunConfig
    problem: physics.ProblemPreset
    spec: SystemSpec
    truth: Trajectory
    observations: Trajectory

    @property
    def dx(self) -> float:
        return self.problem.grid.dx


def make_twin(config: RunConfig) -> TwinData:
    config = config.resolved()
    problem = config.problem()
    truth = physics.generate_truth(problem)
    obs = physics.observe(truth, physics.NoiseModel(problem.sigma2, config.seed_observation))
    return TwinData(config, problem, problem.spec(), truth, obs)


def with_config(data: TwinData, config: RunConfig) -> TwinData:
    """Reuse truth and observations for a config that differs only downstream of them."""
    config = config.resolved()
    same = ("preset", "n", "dt", "J", "sigma2", "seed_observation")
    if any(getattr(config, k) != getattr(data.config, k) for k in same):
        raise ValueError("config changes the twin data; call make_twin instead")
    return replace(data, config=config, problem=config.problem())


def build_model(config: RunConfig, problem: physics.ProblemPreset, spec: SystemSpec):
    if config.model == "escfn":
        return surrogate.EscfnModel.create(spec.p, problem.grid.dx, problem.dt, spec.boundary,
                                           seed=config.seed_params, wavespeed_mode=config.wavespeed_mode)
    return surrogate.NeuralOdeModel.create(problem.n, spec.p, problem.dt, seed=config.seed_params)


def train_surrogate(data: TwinData):
    """Preprocess ``y_0..y_L`` and fit a fresh surrogate; returns ``(model, record)``."""
    cfg = data.config
    targets = training.preprocess(data.observations.states[:cfg.l_train + 1], data.spec)
    model = build_model(cfg, data.problem, data.spec)
    with np.errstate(over="ignore", invalid="ignore"):
        return training.train(model, targets, cfg.train_config())


def free_run(model, data: TwinData) -> np.ndarray:
    """Pure surrogate prediction from the preprocessed ``y_0``; physical frame, ``(J+1, n, p)``.

    States after a non-finite step are NaN.
    """
    spec = data.spec
    u = training.preprocess(data.observations.states[:1], spec)[0]
    out = np.full((data.problem.J + 1,) + u.shape, np.nan)
    out[0] = spec.to_physical(u)
    with np.errstate(all="ignore"):
        for j in range(1, data.problem.J + 1):
            u = np.asarray(model.step(u))
            if not np.isfinite(u).all():
                logger.warning("free run diverged at step %d", j)
                break
            out[j] = spec.to_physical(u)
    return out


def trajectory_errors(states: np.ndarray, truth: np.ndarray, dx: float) -> np.ndarray:
    """Per-step, per-channel relative l2 error; non-finite states score ``inf``."""
    errs = np.empty((states.shape[0], states.shape[2]))
    for j in range(states.shape[0]):
        if np.isfinite(states[j]).all():
            errs[j] = relative_l2(states[j], truth[j], dx)
        else:
            errs[j] = np.inf
    return errs


def run_filter(model, data: TwinData, kind: str) -> da.FilterResult:
    m0 = physics.make_initial(data.problem).values
    return da.assimilate(data.observations.states, model, data.spec, data.config.filter_config(kind), m0,
                         data.dx, data.problem.dt, truth=data.truth.states)


@dataclass
class ExperimentResult:
    """Outputs of one trained surrogate: free run plus any filter runs."""

    data: TwinData
    model: object
    record: training.TrainRecord | None
    prediction: np.ndarray
    prediction_errors: np.ndarray  # (J+1, p), row 0 is t = 0
    filters: dict

    def mean_errors(self, output: str) -> np.ndarray:
        """Time average over ``j = 1..J`` of the per-channel relative l2 error."""
        if output == "free_run":
            return self.prediction_errors[1:].mean(axis=0)
        return self.filters[output].errors().mean(axis=0)


def run_experiment(data: TwinData, filters=FILTER_KINDS, model=None, progress=None) -> ExperimentResult:
    record = None
    if model is None:
        model, record = train_surrogate(data)
    pred = free_run(model, data)
    errs = trajectory_errors(pred, data.truth.states, data.dx)
    results = {}
    for kind in filters:
        results[kind] = run_filter(model, data, kind)
        if progress is not None:
            progress(kind)
    return ExperimentResult(data, model, record, pred, errs, results)


# -- bundles -----------------------------------------------------------------

def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_errors_csv(path, errors: np.ndarray, names, dt: float) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "t"] + list(names))
        for j in range(1, errors.shape[0]):
            w.writerow([j, repr(j * dt)] + [repr(float(e)) for e in errors[j]])


def _snapshot(path, data: TwinData, states: np.ndarray, meta=None) -> None:
    write_snapshots(path, Trajectory(data.spec.name, "physical", data.dx, data.problem.dt, states, meta or {}))


def write_bundle(out, result: ExperimentResult, outputs=OUTPUTS, checkpoint: bool = True) -> dict:
    """Write every artefact of ``result`` under ``out`` and return the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    data = result.data
    names = data.spec.physical_names
    files = []

    def add(name):
        files.append(name)
        return out / name

    data.config.save(add("config.json"))
    if result.record is not None:
        result.record.write_csv(add("training_log.csv"), timing=False)
        result.record.write_csv(out / "timing.csv", timing=True)
    if checkpoint:
        surrogate.save_checkpoint(result.model, add("model.ckpt"))
    if "free_run" in outputs:
        _snapshot(add("free_run.csv"), data, result.prediction)
        _snapshot(add("free_run_final.csv"), data, result.prediction[-1:])
        _write_errors_csv(add("free_run_errors.csv"), result.prediction_errors, names, data.problem.dt)
    for kind, fr in result.filters.items():
        if kind not in outputs:
            continue
        pred = result.prediction_errors if "free_run" in outputs else None
        da.write_summary_csv(add(f"{kind}_errors.csv"), fr, names, free_run_errors=pred)
        _snapshot(add(f"{kind}_posterior_mean.csv"), data, fr.posterior_means)
        _snapshot(add(f"{kind}_final.csv"), data, fr.posterior_means[-1:])
    r = data.config
    manifest = {
        "software": "nssda",
        "version": __version__,
        "seeds": {"observation": r.seed_observation, "ensemble": r.seed_ensemble, "params": r.seed_params},
        "outputs": [o for o in outputs if o == "free_run" or o in result.filters],
        "summary": {o: [float(e) for e in result.mean_errors(o)]
                    for o in outputs if o == "free_run" or o in result.filters},
        "files": {name: _sha256(out / name) for name in sorted(files)},
        "volatile": ["timing.csv"] if result.record is not None else [],
    }
    manifest["checksum"] = bundle_checksum(manifest["files"])
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def bundle_checksum(files: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(files):
        h.update(f"{name}:{files[name]}\n".encode())
    return h.hexdigest()


def verify_bundle(out) -> bool:
    """Recompute checksums of a written bundle against its manifest."""
    out = Path(out)
    manifest = json.loads((out / "manifest.json").read_text())
    return all(_sha256(out / name) == digest for name, digest in manifest["files"].items())


def read_errors_csv(path) -> tuple[list, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    head, body = rows[0], rows[1:]
    return head, np.array([[float(x) for x in row] for row in body]) if body else np.empty((0, len(head)))


# -- figure grids --------------------------------------------------------------

def figure_variants(figure: str, base: RunConfig) -> dict:
    """Named configs behind each reproducible figure."""
    if figure == "fig-node-vs-escfn":
        cfg = base.with_overrides(preset="dam-break", l_train=10, sigma2=0.1)
        return {m: replace(cfg, model=m) for m in ("escfn", "node")}
    if figure == "fig-noise-trainsteps":
        cfg = base.with_overrides(preset="dam-break", model="escfn")
        return {f"L{L}_s{s2}": replace(cfg, l_train=L, sigma2=s2) for s2 in (0.1, 0.2) for L in (10, 20, 40)}
    if figure == "fig-euler":
        return {"escfn": base.with_overrides(preset="shu-osher", model="escfn", l_train=20, sigma2=0.2)}
    raise ValueError(f"unknown figure {figure!r}; choose from {FIGURES}")


FIGURES = ("fig-node-vs-escfn", "fig-noise-trainsteps", "fig-euler")


def reproduce(figure: str, base: RunConfig, out, progress=None) -> dict:
    """Run every variant of ``figure``; failures are recorded and the grid continues."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    variants = figure_variants(figure, base)
    twins = {}
    runs = {}
    curves = {}
    for name, cfg in variants.items():
        try:
            key = (cfg.preset, cfg.sigma2, cfg.seed_observation)
            if key not in twins:
                twins[key] = make_twin(cfg)
            data = with_config(twins[key], cfg)
            result = run_experiment(data)
            manifest = write_bundle(out / name, result)
            runs[name] = {"status": "ok", "checksum": manifest["checksum"], "summary": manifest["summary"]}
            t = np.arange(1, data.problem.J + 1) * data.problem.dt
            curves.setdefault("t", t)
            for o in OUTPUTS:
                errs = result.prediction_errors[1:] if o == "free_run" else result.filters[o].errors()
                for c, ch in enumerate(data.spec.physical_names):
                    curves[f"{name}/{o}/{ch}"] = errs[:, c]
        except Exception as exc:  # keep the grid going; the manifest records it
            logger.exception("variant %s failed", name)
            runs[name] = {"status": "failed", "error": type(exc).__name__, "message": str(exc)}
        if progress is not None:
            progress(name, runs[name]["status"])
    files = {}
    if curves:
        _write_curves(out / "curves.csv", curves)
        files["curves.csv"] = _sha256(out / "curves.csv")
    manifest = {
        "figure": figure,
        "version": __version__,
        "base_config": base.to_dict(),
        "runs": runs,
        "files": files,
        "checksum": bundle_checksum({**files, **{k: v.get("checksum", "failed") for k, v in runs.items()}}),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _write_curves(path, curves: dict) -> None:
    cols = ["t"] + sorted(k for k in curves if k != "t")
    rows = len(curves["t"])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(rows):
            w.writerow([repr(float(curves[c][i])) if len(curves[c]) > i else "" for c in cols])


def evaluate(path) -> dict:
    """Time-averaged and final-time errors for every error CSV in a bundle or figure directory."""
    path = Path(path)
    found = sorted(path.rglob("*_errors.csv")) if path.is_dir() else [path]
    if not found:
        raise FileNotFoundError(f"no *_errors.csv files under {path}")
    report = {}
    for f in found:
        head, table = read_errors_csv(f)
        cols = {h: table[:, i] for i, h in enumerate(head)} if table.size else {}
        metrics = {}
        for h, col in cols.items():
            if h in ("j", "t", "diverged") or h.startswith("w_"):
                continue
            metrics[h] = {"mean": float(np.mean(col)), "final": float(col[-1])}
        report[str(f.relative_to(path) if path.is_dir() else f.name)] = metrics
    return report
