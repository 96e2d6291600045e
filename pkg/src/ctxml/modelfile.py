"""Versioned JSON model files for single fits and bootstrap ensembles.

Floats are written with ``repr`` precision by :mod:`json`, so a save/load
round trip reproduces every parameter bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .encoders import EncoderSpec
from .errors import DataError, VersionError
from .glm import LikelihoodSpec, RegularizationSpec
from .training import BootstrapEnsemble, FitReport, FittedModel, TrainConfig

FORMAT_VERSION = 1


def _array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=np.float64)
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}


def _unarray(d: dict) -> np.ndarray:
    return np.array(d["data"], dtype=np.float64).reshape(d["shape"])


def _member(model: FittedModel) -> dict:
    return {
        "seed": model.config.seed,
        "params": {name: _array(model.params[name]) for name in sorted(model.params)},
        "pseudo_z": None if model.pseudo_z is None else _array(model.pseudo_z),
        "report": model.report.summary(),
    }


def to_dict(model: FittedModel | BootstrapEnsemble) -> dict:
    members = model.members if isinstance(model, BootstrapEnsemble) else (model,)
    first = members[0]
    out = {
        "format_version": FORMAT_VERSION,
        "kind": "ensemble" if isinstance(model, BootstrapEnsemble) else "single",
        "encoder": first.encoder.to_dict(),
        "likelihood": first.likelihood.to_dict(),
        "regularization": first.regularization.to_dict(),
        "training": first.config.to_dict(),
        "columns": {
            "context": list(first.context_names),
            "predictors": list(first.predictor_names),
            "outcome": first.outcome_name,
        },
        "members": [_member(m) for m in members],
    }
    if isinstance(model, BootstrapEnsemble):
        out["aggregation"] = {"lower_q": model.lower_q, "upper_q": model.upper_q}
        out["resample_indices"] = [[int(i) for i in idx] for idx in model.indices]
    return out


def _report(summary: dict) -> FitReport:
    report = FitReport()
    report.stopping_epoch = summary.get("epochs_run", 0)
    report.best_epoch = summary.get("best_epoch", 0)
    report.initial_train_loss = summary.get("initial_train_loss", float("nan"))
    report.initial_val_loss = summary.get("initial_val_loss")
    report.initial_train_nll = summary.get("initial_train_nll", float("nan"))
    report.final_train_nll = summary.get("final_train_nll", float("nan"))
    report.final_penalty = summary.get("final_penalty", 0.0)
    return report


def from_dict(d: dict) -> FittedModel | BootstrapEnsemble:
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise VersionError(f"unsupported model format_version {version!r}; this build reads {FORMAT_VERSION}")
    try:
        encoder = EncoderSpec.from_dict(d["encoder"])
        lik = LikelihoodSpec.from_dict(d["likelihood"])
        reg = RegularizationSpec(**d["regularization"])
        base = TrainConfig(**d["training"])
        cols = d["columns"]
        models = []
        for member in d["members"]:
            params = {k: _unarray(v) for k, v in member["params"].items()}
            z = None if member["pseudo_z"] is None else _unarray(member["pseudo_z"])
            cfg = TrainConfig(**{**base.to_dict(), "seed": member["seed"]})
            models.append(FittedModel(encoder, lik, reg, cfg, params, _report(member["report"]),
                                      tuple(cols["context"]), tuple(cols["predictors"]),
                                      cols["outcome"], z))
    except (KeyError, TypeError) as exc:
        raise DataError(f"malformed model file: {exc}") from exc
    if d.get("kind") == "ensemble":
        agg = d.get("aggregation", {})
        indices = tuple(np.array(idx, dtype=int) for idx in d.get("resample_indices", []))
        return BootstrapEnsemble(tuple(models), indices, agg.get("lower_q", 5.0), agg.get("upper_q", 95.0))
    return models[0]


def dumps(model: FittedModel | BootstrapEnsemble) -> str:
    return json.dumps(to_dict(model), indent=1, allow_nan=False) + "\n"


def save(path, model: FittedModel | BootstrapEnsemble) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(model))


def load(path) -> FittedModel | BootstrapEnsemble:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    return from_dict(d)
