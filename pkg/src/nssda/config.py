"""Run configuration: one JSON document describing a complete experiment."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from nssda.assimilation import FilterConfig
from nssda.physics import ProblemPreset, get_preset
from nssda.training import TrainConfig

MODEL_KINDS = ("escfn", "node")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Every knob of a generate -> train -> assimilate run.

    Size fields left as ``None`` take the preset's value; :meth:`resolved`
    fills them in, and bundles always echo the resolved form. The output
    directory is deliberately not part of the config so that identical runs
    written to different places produce identical bundles.
    """

    preset: str = "dam-break"
    n: int | None = None
    dt: float | None = None
    J: int | None = None
    l_train: int | None = None
    sigma2: float | None = None
    epochs: int | None = None
    lr: float = 1e-3
    ensemble_size: int = 100
    init_std: float = 0.1
    filter: str = "setkf"
    alpha: float = FilterConfig.alpha
    beta: float = FilterConfig.beta
    weight_convention: str = "covariance"
    seed_observation: int = 0
    seed_ensemble: int = 0
    seed_params: int = 0
    model: str = "escfn"
    wavespeed_mode: str = "learned"
    differentiate_through_limiter: bool = True

    def __post_init__(self):
        get_preset(self.preset)
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.filter not in ("etkf", "setkf"):
            raise ConfigError(f"unknown filter {self.filter!r}")
        if self.wavespeed_mode not in ("learned", "jacobian"):
            raise ConfigError(f"unknown wave-speed mode {self.wavespeed_mode!r}")
        if self.ensemble_size < 2:
            raise ConfigError("ensemble_size must be at least 2")
        for name in ("n", "J", "l_train", "epochs"):
            v = getattr(self, name)
            if v is not None and v < (0 if name == "epochs" else 1):
                raise ConfigError(f"{name} out of range: {v}")

    def problem(self) -> ProblemPreset:
        return get_preset(self.preset).with_overrides(
            n=self.n, dt=self.dt, J=self.J, l_train=self.l_train, sigma2=self.sigma2, epochs=self.epochs)

    def resolved(self) -> "RunConfig":
        pr = self.problem()
        if pr.l_train > pr.J:
            raise ConfigError(f"l_train={pr.l_train} exceeds J={pr.J}")
        return replace(self, n=pr.n, dt=pr.dt, J=pr.J, l_train=pr.l_train, sigma2=pr.sigma2,
                       epochs=pr.epochs)

    def train_config(self) -> TrainConfig:
        r = self.resolved()
        return TrainConfig(l_train=r.l_train, epochs=r.epochs, lr=r.lr, seed=r.seed_params,
                           differentiate_through_limiter=r.differentiate_through_limiter,
                           model_kind=r.model)

    def filter_config(self, kind: str | None = None) -> FilterConfig:
        r = self.resolved()
        return FilterConfig(kind=kind or r.filter, alpha=r.alpha, beta=r.beta, sigma2=r.sigma2,
                            seed=r.seed_ensemble, ensemble_size=r.ensemble_size, init_std=r.init_std,
                            weight_convention=r.weight_convention)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})
