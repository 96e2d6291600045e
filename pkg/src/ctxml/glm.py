"""Likelihood families and elastic-net penalties for sample-specific GLMs.

Parameter vector layout per sample (``p`` predictors):

* ``gaussian`` / ``bernoulli``: ``[coef_1..coef_p, offset]``
* ``hetero_gaussian``: ``[coef_1..coef_p, offset, log_variance]``
* ``mixture_gaussian`` with ``K`` heads: ``K`` consecutive ``[coef, offset]`` blocks

Gaussian and mixture families share one global log-variance, kept in the
parameter store as ``lik.logvar``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .encoders import SampleModel
from .errors import ConfigError, DataError, ShapeError

FAMILIES = ("gaussian", "hetero_gaussian", "mixture_gaussian", "bernoulli")
LOGVAR_BOUNDS = (-10.0, 10.0)
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LikelihoodSpec:
    family: str = "gaussian"
    mixture_count: int = 2

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}")
        if self.family == "mixture_gaussian" and self.mixture_count < 2:
            raise ConfigError("mixture_count must be >= 2 for mixture_gaussian")

    @property
    def heads(self) -> int:
        return self.mixture_count if self.family == "mixture_gaussian" else 1

    @property
    def has_global_logvar(self) -> bool:
        return self.family in ("gaussian", "mixture_gaussian")

    def output_dim(self, p: int) -> int:
        if self.family == "hetero_gaussian":
            return p + 2
        return self.heads * (p + 1)

    def to_dict(self) -> dict:
        return {"family": self.family, "mixture_count": self.mixture_count}

    @classmethod
    def from_dict(cls, d: dict) -> "LikelihoodSpec":
        return cls(**d)


@dataclass(frozen=True)
class RegularizationSpec:
    alpha: float = 0.0
    mu_ratio: float = 0.5
    l1_ratio: float = 0.0

    def __post_init__(self):
        if not self.alpha >= 0:
            raise ConfigError(f"alpha must be non-negative, got {self.alpha}")
        for name in ("mu_ratio", "l1_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "mu_ratio": self.mu_ratio, "l1_ratio": self.l1_ratio}


def _head_slices(p: int, lik: LikelihoodSpec) -> list[tuple[int, int]]:
    return [(k * (p + 1), (k + 1) * (p + 1)) for k in range(lik.heads)]


def linear_predictors(theta: Var, X: Var, lik: LikelihoodSpec) -> Var:
    """``n x heads`` matrix of ``x . coef + offset`` for each head."""
    p = X.shape[1]
    if theta.shape[1] != lik.output_dim(p):
        raise ShapeError(f"theta has {theta.shape[1]} columns; {lik.family} with p={p} needs {lik.output_dim(p)}")
    etas = []
    for lo, hi in _head_slices(p, lik):
        eta = ad.sum_rows(ad.cols(theta, lo, lo + p) * X) + ad.cols(theta, lo + p, hi)
        etas.append(eta)
    return etas[0] if len(etas) == 1 else ad.hcat(etas)


def _gaussian_nll(Y: Var, mu: Var, logvar: Var) -> Var:
    resid = ad.square(Y - mu)
    return HALF_LOG_2PI + 0.5 * logvar + 0.5 * resid * ad.exp(-logvar)


def batch_nll(theta: Var, X: Var, Y: Var, lik: LikelihoodSpec, logvar: Var | None = None) -> Var:
    """Per-sample exact negative log-likelihood, ``n x 1``."""
    tape = theta.tape
    n, p = X.shape
    if Y.shape != (n, 1):
        raise ShapeError(f"Y must be {n}x1, got {Y.shape}")
    eta = linear_predictors(theta, X, lik)
    if lik.family == "bernoulli":
        y = Y.value
        if not np.all((y == 0.0) | (y == 1.0)):
            raise DataError("bernoulli outcomes must be 0 or 1")
        return ad.softplus(eta) - Y * eta
    if lik.family == "hetero_gaussian":
        lv = ad.clamp(ad.cols(theta, p + 1, p + 2), *LOGVAR_BOUNDS)
        return _gaussian_nll(Y, eta, lv)
    if logvar is None:
        raise ConfigError(f"{lik.family} needs the global log-variance")
    lv = ad.clamp(logvar, *LOGVAR_BOUNDS)
    if lik.family == "gaussian":
        return _gaussian_nll(Y, eta, tape.const(np.zeros((n, 1))) + lv)
    heads = lik.heads
    lv_rows = tape.const(np.zeros((n, heads))) + (lv @ tape.const(np.ones((1, heads))))
    y_rows = Y @ tape.const(np.ones((1, heads)))
    per_head = _gaussian_nll(y_rows, eta, lv_rows)
    return -ad.logmeanexp_rows(-per_head)


def _elastic_net(block: Var, l1_ratio: float) -> Var:
    """Row-wise ``l1 * |v|_1 + (1 - l1) * 0.5 * |v|_2^2``, ``n x 1``."""
    terms = []
    if l1_ratio > 0:
        terms.append(l1_ratio * ad.sum_rows(ad.absolute(block)))
    if l1_ratio < 1:
        terms.append((0.5 * (1.0 - l1_ratio)) * ad.sum_rows(ad.square(block)))
    return terms[0] if len(terms) == 1 else terms[0] + terms[1]


def coefficient_blocks(theta: Var, p: int, lik: LikelihoodSpec) -> tuple[Var, Var]:
    """Split ``theta`` into (all coefficients, all offsets) across heads."""
    coefs, offs = [], []
    for lo, hi in _head_slices(p, lik):
        coefs.append(ad.cols(theta, lo, lo + p))
        offs.append(ad.cols(theta, lo + p, hi))
    if len(coefs) == 1:
        return coefs[0], offs[0]
    return ad.hcat(coefs), ad.hcat(offs)


def batch_penalty(theta: Var, p: int, lik: LikelihoodSpec, reg: RegularizationSpec) -> Var:
    """Batch-averaged elastic net on coefficients and offsets, 1x1."""
    tape = theta.tape
    if reg.alpha == 0:
        return tape.const(0.0)
    coefs, offs = coefficient_blocks(theta, p, lik)
    parts = []
    if reg.mu_ratio > 0:
        parts.append(reg.mu_ratio * _elastic_net(coefs, reg.l1_ratio))
    if reg.mu_ratio < 1:
        parts.append((1.0 - reg.mu_ratio) * _elastic_net(offs, reg.l1_ratio))
    per_row = parts[0] if len(parts) == 1 else parts[0] + parts[1]
    return reg.alpha * ad.mean(per_row)


# --- single-sample conveniences -------------------------------------------------


def theta_row(model: SampleModel, lik: LikelihoodSpec) -> np.ndarray:
    """Pack a SampleModel back into the family's parameter layout."""
    p = model.n_predictors
    base = np.append(model.coefficients, model.offset)
    if lik.family in ("gaussian", "bernoulli"):
        return base
    if lik.family == "hetero_gaussian":
        if model.aux is None or model.aux.size != 1:
            raise ConfigError("hetero_gaussian needs aux = [log_variance]")
        return np.append(base, model.aux)
    if model.aux is None or model.aux.size != lik.heads * (p + 1):
        raise ConfigError(f"mixture_gaussian needs aux with {lik.heads * (p + 1)} head parameters")
    return model.aux.copy()


def sample_models(theta: np.ndarray, p: int, lik: LikelihoodSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    """Split an ``n x d_out`` parameter array into (coefficients, offsets, aux).

    Mixture coefficients/offsets are head averages, so ``x . coef + offset``
    is the mixture mean; the heads themselves go to ``aux``.
    """
    theta = np.asarray(theta, dtype=np.float64)
    if lik.family in ("gaussian", "bernoulli"):
        return theta[:, :p].copy(), theta[:, p].copy(), None
    if lik.family == "hetero_gaussian":
        return theta[:, :p].copy(), theta[:, p].copy(), theta[:, p + 1:p + 2].copy()
    heads = theta.reshape(theta.shape[0], lik.heads, p + 1)
    avg = heads.mean(axis=1)
    return avg[:, :p].copy(), avg[:, p].copy(), theta.copy()


def to_sample_models(theta: np.ndarray, p: int, lik: LikelihoodSpec) -> list[SampleModel]:
    coefs, offs, aux = sample_models(theta, p, lik)
    return [SampleModel(coefs[i], offs[i], None if aux is None else aux[i]) for i in range(len(offs))]


def _single(x, model: SampleModel, lik: LikelihoodSpec) -> tuple[Tape, Var, Var]:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != model.n_predictors:
        raise ShapeError(f"x has {x.size} entries but the model has {model.n_predictors} coefficients")
    tape = Tape()
    return tape, tape.const(theta_row(model, lik)), tape.const(x)


def predict_mean(x, model: SampleModel, lik: LikelihoodSpec | str) -> float:
    """E[Y | x] under one sample model."""
    if isinstance(lik, str):
        lik = LikelihoodSpec(lik)
    _, theta, X = _single(x, model, lik)
    eta = linear_predictors(theta, X, lik).value[0]
    if lik.family == "bernoulli":
        return float(ad.activate(eta, "sigmoid")[0, 0])
    return float(eta.mean())


def nll(y: float, x, model: SampleModel, lik: LikelihoodSpec | str, log_variance: float = 0.0) -> float:
    """Exact negative log-density of ``y`` (``log_variance`` is the global one, if used)."""
    if isinstance(lik, str):
        lik = LikelihoodSpec(lik)
    tape, theta, X = _single(x, model, lik)
    lv = tape.const(log_variance) if lik.has_global_logvar else None
    return batch_nll(theta, X, tape.const(float(y)), lik, lv).item()


def penalty(models: list[SampleModel], reg: RegularizationSpec,
            lik: LikelihoodSpec | None = None) -> float:
    if not models:
        return 0.0
    lik = lik or LikelihoodSpec("gaussian")
    p = models[0].n_predictors
    tape = Tape()
    theta = tape.const(np.vstack([theta_row(m, lik) for m in models]))
    return batch_penalty(theta, p, lik, reg).item()
