"""Command-line driver for twin experiments.

Subcommands::

    nssda generate    --preset dam-break --out runs/db
    nssda train       --observations runs/db/observations.csv --out runs/db
    nssda assimilate  --checkpoint runs/db/model.ckpt --data runs/db --filter setkf --also-free-run
    nssda reproduce   fig-node-vs-escfn --out runs/fig1
    nssda evaluate    runs/fig1

Failures print a one-line JSON object on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from nssda import experiments as ex
from nssda import surrogate
from nssda.config import RunConfig
from nssda.core import read_snapshots, write_snapshots

logger = logging.getLogger("nssda")

# flag -> RunConfig field
OVERRIDES = {
    "preset": "preset",
    "n": "n",
    "dt": "dt",
    "J": "J",
    "l_train": "l_train",
    "sigma2": "sigma2",
    "epochs": "epochs",
    "lr": "lr",
    "ensemble_size": "ensemble_size",
    "filter": "filter",
    "alpha": "alpha",
    "beta": "beta",
    "weight_convention": "weight_convention",
    "seed_observation": "seed_observation",
    "seed_ensemble": "seed_ensemble",
    "seed_params": "seed_params",
    "model": "model",
    "wavespeed_mode": "wavespeed_mode",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config; flags below override its keys")
    p.add_argument("--preset", choices=("dam-break", "shu-osher"))
    p.add_argument("--n", type=int, help="Number of grid cells")
    p.add_argument("--dt", type=float, help="Observation interval")
    p.add_argument("--J", type=int, help="Number of observation steps")
    p.add_argument("--l-train", dest="l_train", type=int, help="Training prefix length")
    p.add_argument("--sigma2", type=float, help="Observation noise variance")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--ensemble-size", dest="ensemble_size", type=int)
    p.add_argument("--filter", choices=ex.FILTER_KINDS)
    p.add_argument("--alpha", type=float, help="ETKF inflation")
    p.add_argument("--beta", type=float, help="SETKF gradient-moment scale")
    p.add_argument("--weight-convention", dest="weight_convention", choices=("covariance", "precision"))
    p.add_argument("--seed-observation", dest="seed_observation", type=int)
    p.add_argument("--seed-ensemble", dest="seed_ensemble", type=int)
    p.add_argument("--seed-params", dest="seed_params", type=int)
    p.add_argument("--seed", type=int, help="Set all three seeds at once")
    p.add_argument("--model", choices=("escfn", "node"))
    p.add_argument("--wavespeed-mode", dest="wavespeed_mode", choices=("learned", "jacobian"))
    p.add_argument("--out", default="runs", help="Output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nssda", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="Write truth and noisy observation snapshot files")
    _add_config_flags(p)

    p = sub.add_parser("train", help="Fit a surrogate to the first L_train+1 observations")
    _add_config_flags(p)
    p.add_argument("--observations", help="Observation snapshot file (default OUT/observations.csv)")

    p = sub.add_parser("assimilate", help="Filter all J steps with a trained surrogate")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="Model checkpoint (default OUT/model.ckpt)")
    p.add_argument("--data", help="Directory holding observations.csv and truth.csv (default OUT)")
    p.add_argument("--also-free-run", action="store_true", help="Add the pure prediction as a third output")

    p = sub.add_parser("reproduce", help="Run the config grid behind one figure")
    p.add_argument("figure", choices=ex.FIGURES)
    _add_config_flags(p)

    p = sub.add_parser("evaluate", help="Summarise error CSVs of existing bundles")
    p.add_argument("path")
    return parser


def resolve_config(args, resolve: bool = True) -> RunConfig:
    """Config file (or defaults) with command-line overrides applied."""
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    kw = {field: getattr(args, flag, None) for flag, field in OVERRIDES.items()}
    if getattr(args, "seed", None) is not None:
        for k in ("seed_observation", "seed_ensemble", "seed_params"):
            kw[k] = args.seed if kw[k] is None else kw[k]
    cfg = cfg.with_overrides(**kw)
    return cfg.resolved() if resolve else cfg


def cmd_generate(cfg: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    data = ex.make_twin(cfg)
    write_snapshots(out / "truth.csv", data.truth)
    write_snapshots(out / "observations.csv", data.observations)
    cfg.save(out / "config.json")
    return {"truth": str(out / "truth.csv"), "observations": str(out / "observations.csv"),
            "rows": len(data.truth), "columns": data.truth.n * data.truth.p}


def _load_observations(cfg: RunConfig, path: Path):
    obs = read_snapshots(path)
    problem = cfg.problem()
    if obs.n != problem.n:
        raise ValueError(f"{path}: {obs.n} cells but config expects {problem.n}")
    return obs


def cmd_train(cfg: RunConfig, out: Path, observations: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    obs = _load_observations(cfg, observations)
    problem = cfg.problem()
    data = ex.TwinData(cfg, problem, problem.spec(), obs, obs)
    model, record = ex.train_surrogate(data)
    surrogate.save_checkpoint(model, out / "model.ckpt")
    record.write_csv(out / "training_log.csv")
    cfg.save(out / "config.json")
    return {"checkpoint": str(out / "model.ckpt"), "epochs": len(record), "final_loss": record.final_loss,
            "divergent_epochs": int(sum(record.divergent))}


def cmd_assimilate(cfg: RunConfig, out: Path, checkpoint: Path, data_dir: Path, also_free_run: bool) -> dict:
    model = surrogate.load_checkpoint(checkpoint)
    obs = _load_observations(cfg, data_dir / "observations.csv")
    truth = read_snapshots(data_dir / "truth.csv")
    problem = cfg.problem()
    data = ex.TwinData(cfg, problem, problem.spec(), truth, obs)
    filt = ex.run_filter(model, data, cfg.filter)
    if also_free_run:
        pred = ex.free_run(model, data)
        errs = ex.trajectory_errors(pred, truth.states, data.dx)
    else:
        pred, errs = np.full_like(truth.states, np.nan), np.full((len(truth), truth.p), np.nan)
    result = ex.ExperimentResult(data, model, None, pred, errs, {cfg.filter: filt})
    outputs = (("free_run",) if also_free_run else ()) + (cfg.filter,)
    manifest = ex.write_bundle(out, result, outputs=outputs, checkpoint=False)
    return {"bundle": str(out), "checksum": manifest["checksum"], "summary": manifest["summary"],
            "diverged_members": filt.diverged_total}


def cmd_reproduce(cfg: RunConfig, out: Path, figure: str) -> dict:
    def progress(name, status):
        logger.info("%s: %s", name, status)

    manifest = ex.reproduce(figure, cfg, out, progress=progress)
    failed = [k for k, v in manifest["runs"].items() if v["status"] != "ok"]
    return {"figure": figure, "manifest": str(out / "manifest.json"), "checksum": manifest["checksum"],
            "failed": failed}


def _error_json(exc: BaseException) -> str:
    info = {"error": type(exc).__name__, "message": str(exc)}
    for attr in ("step", "offset"):
        if getattr(exc, attr, None) is not None:
            info[attr] = getattr(exc, attr)
    return json.dumps(info)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "evaluate":
            result = ex.evaluate(Path(args.path))
        else:
            # figure grids pick their own presets, so sizes stay unresolved there
            cfg = resolve_config(args, resolve=args.command != "reproduce")
            out = Path(args.out)
            if args.command == "generate":
                result = cmd_generate(cfg, out)
            elif args.command == "train":
                result = cmd_train(cfg, out, Path(args.observations or out / "observations.csv"))
            elif args.command == "assimilate":
                result = cmd_assimilate(cfg, out, Path(args.checkpoint or out / "model.ckpt"),
                                        Path(args.data or out), args.also_free_run)
            else:
                result = cmd_reproduce(cfg, out, args.figure)
                if result["failed"]:
                    print(json.dumps(result, sort_keys=True))
                    return 3
    except Exception as exc:
        logger.debug("command failed", exc_info=True)
        print(_error_json(exc), file=sys.stderr)
        return 1
    print(json.dumps(result, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
