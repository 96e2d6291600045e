"""End-to-end training of context encoders with early stopping and bootstrap ensembles."""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape
from .data import Dataset
from .encoders import EncoderSpec, SampleModel, encode, init_params
from .errors import ConfigError, DataError, NumericError, ShapeError
from .glm import (LOGVAR_BOUNDS, LikelihoodSpec, RegularizationSpec, batch_nll, batch_penalty,
                  linear_predictors, sample_models)

log = logging.getLogger(__name__)

FULL_BATCH_LIMIT = 1024
DEFAULT_BATCH = 256


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 200
    learning_rate: float = 1e-3
    val_split: float = 0.2
    batch_size: int | None = None
    seed: int = 0
    patience: int = 10
    context_dropout: float = 0.0
    n_bootstraps: int = 1
    threads: int | None = None

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ConfigError("max_epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.val_split < 1.0:
            raise ConfigError("val_split must lie in (0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if not 0.0 <= self.context_dropout < 1.0:
            raise ConfigError("context_dropout must lie in [0, 1)")
        if self.n_bootstraps < 1:
            raise ConfigError("n_bootstraps must be >= 1")
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass
class FitReport:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    initial_train_loss: float = float("nan")
    initial_val_loss: float | None = None
    initial_train_nll: float = float("nan")
    final_train_nll: float = float("nan")
    stopping_epoch: int = 0
    best_epoch: int = 0
    final_penalty: float = 0.0
    wall_time: float = 0.0

    def summary(self, include_time: bool = False) -> dict:
        out = {
            "epochs_run": self.stopping_epoch,
            "best_epoch": self.best_epoch,
            "initial_train_loss": self.initial_train_loss,
            "initial_val_loss": self.initial_val_loss,
            "initial_train_nll": self.initial_train_nll,
            "final_train_nll": self.final_train_nll,
            "final_train_loss": self.train_loss[-1] if self.train_loss else self.initial_train_loss,
            "best_val_loss": min([v for v in [self.initial_val_loss, *self.val_loss] if v is not None], default=None),
            "final_penalty": self.final_penalty,
        }
        if include_time:
            out["wall_time"] = self.wall_time
        return out


@dataclass
class Prediction:
    prediction: np.ndarray
    coefficients: np.ndarray
    offsets: np.ndarray
    aux: np.ndarray | None = None
    intervals: dict[str, tuple[np.ndarray, np.ndarray]] | None = None

    def sample_models(self) -> list[SampleModel]:
        return [SampleModel(self.coefficients[i], self.offsets[i],
                            None if self.aux is None else self.aux[i])
                for i in range(self.offsets.size)]


@dataclass(frozen=True)
class FittedModel:
    encoder: EncoderSpec
    likelihood: LikelihoodSpec
    regularization: RegularizationSpec
    config: TrainConfig
    params: dict[str, np.ndarray]
    report: FitReport
    context_names: tuple[str, ...]
    predictor_names: tuple[str, ...]
    outcome_name: str = "y"
    pseudo_z: np.ndarray | None = None

    def __post_init__(self):
        for arr in self.params.values():
            arr.setflags(write=False)
        if self.pseudo_z is not None:
            self.pseudo_z.setflags(write=False)

    @property
    def d_z(self) -> int:
        return 0 if self.pseudo_z is None else self.pseudo_z.shape[1]

    @property
    def p(self) -> int:
        return len(self.predictor_names)

    def store(self) -> ParamStore:
        return ParamStore({k: v for k, v in self.params.items()})

    @property
    def log_variance(self) -> float | None:
        lv = self.params.get("lik.logvar")
        return None if lv is None else float(np.clip(lv[0, 0], *LOGVAR_BOUNDS))

    def _check_columns(self, C: np.ndarray, X: np.ndarray) -> None:
        base = len(self.context_names) - self.d_z
        if C.shape[1] not in (base, len(self.context_names)):
            raise DataError(f"expected {base} context columns {list(self.context_names[:base])}, "
                            f"found {C.shape[1]}")
        if X.shape[1] != self.p:
            raise DataError(f"expected {self.p} predictor columns {list(self.predictor_names)}, "
                            f"found {X.shape[1]}")
        if C.shape[0] != X.shape[0]:
            raise DataError(f"context has {C.shape[0]} rows, predictors {X.shape[0]}")

    def theta(self, C) -> np.ndarray:
        """Raw encoder output for full-width context rows."""
        tape = Tape()
        out, _ = encode(tape, self.store(), self.encoder, tape.const(ad.as_matrix(C)))
        return out.value

    def archetype_weights(self, C) -> np.ndarray | None:
        if not self.encoder.archetypes:
            return None
        tape = Tape()
        _, w = encode(tape, self.store(), self.encoder, tape.const(ad.as_matrix(C)))
        return w.value

    def predict(self, C, X) -> Prediction:
        C = np.asarray(C, dtype=np.float64)
        X = np.asarray(X, dtype=np.float64)
        if C.ndim == 1:
            C = C[:, None]
        if X.ndim == 1:
            X = X[:, None]
        self._check_columns(C, X)
        if self.d_z and C.shape[1] == len(self.context_names) - self.d_z:
            return self._predict_integrated(C, X)
        theta = self.theta(C)
        return _prediction_from_theta(theta, X, self.likelihood)

    def _predict_integrated(self, C: np.ndarray, X: np.ndarray) -> Prediction:
        """Average over the stored pseudo-noise draws."""
        preds = []
        for z in self.pseudo_z:
            Cz = np.hstack([C, np.broadcast_to(z, (C.shape[0], z.size))])
            preds.append(_prediction_from_theta(self.theta(Cz), X, self.likelihood))
        return Prediction(
            np.mean([q.prediction for q in preds], axis=0),
            np.mean([q.coefficients for q in preds], axis=0),
            np.mean([q.offsets for q in preds], axis=0),
            None if preds[0].aux is None else np.mean([q.aux for q in preds], axis=0),
        )

    def predict_dataset(self, data: Dataset) -> Prediction:
        return self.predict(data.C, data.X)


def _prediction_from_theta(theta: np.ndarray, X: np.ndarray, lik: LikelihoodSpec) -> Prediction:
    p = X.shape[1]
    tape = Tape()
    eta = linear_predictors(tape.const(theta), tape.const(X), lik).value
    if lik.family == "bernoulli":
        mean = ad.activate(eta, "sigmoid")[:, 0]
    else:
        mean = eta.mean(axis=1)
    coefs, offs, aux = sample_models(theta, p, lik)
    return Prediction(mean, coefs, offs, aux)


# --- splitting and optimisation -------------------------------------------------


def split(n: int, val_split: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded disjoint (train, validation) index arrays; validation size round(n * val_split)."""
    if n < 2:
        raise DataError(f"need at least 2 samples to split, got {n}")
    if not 0.0 < val_split < 1.0:
        raise ConfigError("val_split must lie in (0, 1)")
    n_val = min(max(int(round(n * val_split)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamStore, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in params.grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        with np.errstate(over="ignore"):
            v += (1.0 - beta2) * g * g
        params.values[name] = params.values[name] - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


# --- fitting ----------------------------------------------------------------------


def default_encoder(data: Dataset, lik: LikelihoodSpec, **kw) -> EncoderSpec:
    return EncoderSpec(context_dim=data.m, output_dim=lik.output_dim(data.p), **kw)


def _loss_terms(store: ParamStore, encoder: EncoderSpec, lik: LikelihoodSpec,
                reg: RegularizationSpec, C: np.ndarray, X: np.ndarray, Y: np.ndarray):
    tape = Tape()
    theta, _ = encode(tape, store, encoder, tape.const(C))
    lv = tape.param(store, "lik.logvar") if lik.has_global_logvar else None
    nll = ad.mean(batch_nll(theta, tape.const(X), tape.const(Y[:, None]), lik, lv))
    pen = batch_penalty(theta, X.shape[1], lik, reg)
    return tape, nll, pen


def _evaluate(store, encoder, lik, reg, C, X, Y) -> tuple[float, float]:
    _, nll, pen = _loss_terms(store, encoder, lik, reg, C, X, Y)
    return nll.item(), pen.item()


def _initial_store(data: Dataset, encoder: EncoderSpec, lik: LikelihoodSpec, seed: int) -> ParamStore:
    store = init_params(encoder, seed)
    var = float(np.var(data.Y)) if data.n > 1 else 1.0
    log_var = float(np.clip(np.log(max(var, 1e-12)), *LOGVAR_BOUNDS))
    if lik.has_global_logvar:
        store.add("lik.logvar", [[log_var]])
    if lik.family == "hetero_gaussian" and not encoder.archetypes:
        bias = "enc.b" if encoder.kind == "ngam" else f"enc.b{len(encoder.layer_widths)}"
        store.values[bias][0, data.p + 1] = log_var
    return store


def _validate(data: Dataset, encoder: EncoderSpec, lik: LikelihoodSpec) -> None:
    if encoder.context_dim != data.m:
        raise ShapeError(f"encoder expects {encoder.context_dim} context columns, data has {data.m}")
    if encoder.output_dim != lik.output_dim(data.p):
        raise ShapeError(f"encoder output_dim {encoder.output_dim} does not match "
                         f"{lik.family} with p={data.p} (needs {lik.output_dim(data.p)})")
    if lik.family == "bernoulli" and not np.all((data.Y == 0) | (data.Y == 1)):
        raise DataError("bernoulli outcomes must be 0 or 1")


def fit(data: Dataset, encoder: EncoderSpec | None = None, likelihood: LikelihoodSpec | None = None,
        regularization: RegularizationSpec | None = None, config: TrainConfig | None = None,
        pseudo_z: np.ndarray | None = None) -> FittedModel:
    """Minimise mean NLL + penalty with Adam, early-stopping on validation NLL."""
    likelihood = likelihood or LikelihoodSpec()
    encoder = encoder or default_encoder(data, likelihood)
    regularization = regularization or RegularizationSpec()
    config = config or TrainConfig()
    _validate(data, encoder, likelihood)
    started = time.perf_counter()

    rng = np.random.default_rng(config.seed)
    if data.n >= 2:
        tr, va = split(data.n, config.val_split, config.seed)
    else:
        tr, va = np.arange(data.n), np.arange(0)
    Ct, Xt, Yt = data.C[tr], data.X[tr], data.Y[tr]
    Cv, Xv, Yv = data.C[va], data.X[va], data.Y[va]
    store = _initial_store(data.subset(tr), encoder, likelihood, config.seed)
    n_tr = tr.size
    batch = config.batch_size or (n_tr if n_tr <= FULL_BATCH_LIMIT else DEFAULT_BATCH)

    report = FitReport()
    best_val = None
    try:
        nll0, pen0 = _evaluate(store, encoder, likelihood, regularization, Ct, Xt, Yt)
        if va.size:
            best_val = _evaluate(store, encoder, likelihood, regularization, Cv, Xv, Yv)[0]
    except NumericError as exc:
        raise NumericError(f"training diverged at epoch 0 (initial parameters): {exc}") from exc
    report.initial_train_nll = nll0
    report.initial_train_loss = nll0 + pen0
    report.initial_val_loss = best_val
    best_params = store.snapshot()
    stale = 0
    state = AdamState()

    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n_tr)
        try:
            for start in range(0, n_tr, batch):
                idx = perm[start:start + batch]
                Cb = Ct[idx]
                if config.context_dropout > 0:
                    Cb = Cb * (rng.random(Cb.shape) >= config.context_dropout)
                tape, nll, pen = _loss_terms(store, encoder, likelihood, regularization, Cb, Xt[idx], Yt[idx])
                tape.backward(nll + pen)
                adam_step(store, state, config.learning_rate)
            nll_tr, pen_tr = _evaluate(store, encoder, likelihood, regularization, Ct, Xt, Yt)
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
        report.train_loss.append(nll_tr + pen_tr)
        report.stopping_epoch = epoch
        if not va.size:
            best_params = store.snapshot()
            report.best_epoch = epoch
            continue
        try:
            val = _evaluate(store, encoder, likelihood, regularization, Cv, Xv, Yv)[0]
        except NumericError as exc:
            raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
        report.val_loss.append(val)
        if val < best_val:
            best_val, best_params, stale = val, store.snapshot(), 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= config.patience:
                log.debug("early stop at epoch %d (best %d)", epoch, report.best_epoch)
                break

    store.load(best_params)
    report.final_train_nll, report.final_penalty = _evaluate(
        store, encoder, likelihood, regularization, Ct, Xt, Yt)
    report.wall_time = time.perf_counter() - started
    return FittedModel(encoder, likelihood, regularization, config, store.snapshot(), report,
                       data.context_names, data.predictor_names, data.outcome_name,
                       None if pseudo_z is None else np.array(pseudo_z, dtype=np.float64))


# --- bootstrap ensembles ------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapEnsemble:
    members: tuple[FittedModel, ...]
    indices: tuple[np.ndarray, ...]
    lower_q: float = 5.0
    upper_q: float = 95.0

    def __post_init__(self):
        first = self.members[0]
        for m in self.members[1:]:
            if m.encoder != first.encoder or m.likelihood != first.likelihood:
                raise ConfigError("ensemble members must share encoder and likelihood specs")

    def __len__(self) -> int:
        return len(self.members)

    @property
    def context_names(self):
        return self.members[0].context_names

    @property
    def predictor_names(self):
        return self.members[0].predictor_names

    def predict(self, C, X) -> Prediction:
        preds = [m.predict(C, X) for m in self.members]
        out = {}
        for key in ("prediction", "coefficients", "offsets"):
            stack = np.stack([getattr(q, key) for q in preds])
            lo, hi = np.percentile(stack, [self.lower_q, self.upper_q], axis=0)
            out[key] = (stack.mean(axis=0), lo, hi)
        aux = None
        if preds[0].aux is not None:
            aux = np.mean([q.aux for q in preds], axis=0)
        return Prediction(out["prediction"][0], out["coefficients"][0], out["offsets"][0], aux,
                          {k: (v[1], v[2]) for k, v in out.items()})

    def predict_dataset(self, data: Dataset) -> Prediction:
        return self.predict(data.C, data.X)


def bootstrap_fit(data: Dataset, encoder: EncoderSpec | None = None,
                  likelihood: LikelihoodSpec | None = None,
                  regularization: RegularizationSpec | None = None,
                  config: TrainConfig | None = None, resample: bool = True) -> BootstrapEnsemble:
    """Fit ``config.n_bootstraps`` models on seeded with-replacement resamples."""
    config = config or TrainConfig()
    likelihood = likelihood or LikelihoodSpec()
    encoder = encoder or default_encoder(data, likelihood)

    def trajectory(t: int):
        seed = config.seed + t
        if resample:
            idx = np.random.default_rng(seed).integers(0, data.n, size=data.n)
        else:
            idx = np.arange(data.n)
        model = fit(data.subset(idx), encoder, likelihood, regularization, replace(config, seed=seed))
        return model, idx

    threads = config.threads or min(config.n_bootstraps, os.cpu_count() or 1)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(trajectory, range(config.n_bootstraps)))
    else:
        results = [trajectory(t) for t in range(config.n_bootstraps)]
    return BootstrapEnsemble(tuple(r[0] for r in results), tuple(r[1] for r in results))
