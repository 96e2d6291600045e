"""Strict JSON run configuration for the command line."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .data import Dataset, load_csv, load_three
from .encoders import EncoderSpec
from .errors import ConfigError
from .glm import LikelihoodSpec, RegularizationSpec
from .training import TrainConfig

SECTIONS = ("data", "encoder", "likelihood", "regularization", "training", "output", "pseudo")
DATA_KEYS = ("csv", "context", "predictors", "outcome", "id", "context_csv", "predictor_csv", "outcome_csv")
ENCODER_KEYS = ("kind", "hidden_layers", "activation", "archetypes")
PSEUDO_KEYS = ("d_z", "coupling")
OUTPUT_KEYS = ("dir",)


def _strict(section: str, d, allowed) -> dict:
    if not isinstance(d, dict):
        raise ConfigError(f"section {section!r} must be a JSON object")
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {unknown}")
    return d


def _fields(cls) -> tuple[str, ...]:
    return tuple(f.name for f in fields(cls))


@dataclass
class RunConfig:
    data: dict
    encoder: dict = field(default_factory=dict)
    likelihood: LikelihoodSpec = field(default_factory=LikelihoodSpec)
    regularization: RegularizationSpec = field(default_factory=RegularizationSpec)
    training: TrainConfig = field(default_factory=TrainConfig)
    output_dir: Path | None = None
    pseudo_d_z: int = 0
    pseudo_coupling: str = "rank"
    base_dir: Path = Path(".")

    def with_seed(self, seed: int | None) -> "RunConfig":
        if seed is None:
            return self
        return replace(self, training=replace(self.training, seed=seed))

    def _path(self, value: str) -> Path:
        path = Path(value)
        return path if path.is_absolute() else self.base_dir / path

    def load_data(self) -> Dataset:
        d = self.data
        if "csv" in d:
            if "outcome" not in d:
                raise ConfigError("data section needs an 'outcome' column")
            return load_csv(self._path(d["csv"]), d.get("context", []), d.get("predictors", []),
                            d["outcome"], d.get("id", "id"))
        return load_three(self._path(d["context_csv"]), self._path(d["predictor_csv"]),
                          self._path(d["outcome_csv"]))

    def encoder_spec(self, data: Dataset) -> EncoderSpec:
        m = data.m + self.pseudo_d_z
        out = self.likelihood.output_dim(data.p)
        kw = {k: (tuple(v) if k == "hidden_layers" else v) for k, v in self.encoder.items()}
        return EncoderSpec(context_dim=m, output_dim=out, **kw)


def parse(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    _strict("config", raw, SECTIONS)
    if "data" not in raw:
        raise ConfigError("config needs a 'data' section")
    data = _strict("data", raw["data"], DATA_KEYS)
    combined = "csv" in data
    three = [k for k in ("context_csv", "predictor_csv", "outcome_csv") if k in data]
    if combined == bool(three) or (three and len(three) != 3):
        raise ConfigError("data needs either 'csv' with column roles or all of "
                          "'context_csv', 'predictor_csv', 'outcome_csv'")
    if combined and not data.get("context"):
        raise ConfigError("data.context must list at least one column")
    if combined and not data.get("predictors"):
        raise ConfigError("data.predictors must list at least one column")
    encoder = _strict("encoder", raw.get("encoder", {}), ENCODER_KEYS)
    try:
        likelihood = LikelihoodSpec(**_strict("likelihood", raw.get("likelihood", {}), _fields(LikelihoodSpec)))
        reg = RegularizationSpec(**_strict("regularization", raw.get("regularization", {}),
                                           _fields(RegularizationSpec)))
        training = TrainConfig(**_strict("training", raw.get("training", {}), _fields(TrainConfig)))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    pseudo = _strict("pseudo", raw.get("pseudo", {}), PSEUDO_KEYS)
    output = _strict("output", raw.get("output", {}), OUTPUT_KEYS)
    d_z = int(pseudo.get("d_z", 0))
    if d_z and likelihood.family != "hetero_gaussian":
        if "likelihood" in raw and "family" in raw["likelihood"]:
            raise ConfigError("pseudo-sampling needs likelihood.family = 'hetero_gaussian'")
        likelihood = LikelihoodSpec("hetero_gaussian")
    out_dir = Path(output["dir"]) if "dir" in output else None
    if out_dir is not None and not out_dir.is_absolute():
        out_dir = base_dir / out_dir
    return RunConfig(data, encoder, likelihood, reg, training, out_dir, d_z,
                     pseudo.get("coupling", "rank"), base_dir)


def load(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse(raw, path.parent)
