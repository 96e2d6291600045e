"""Seeded synthetic generators with known per-sample ground truth, plus the cohort baseline."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from .data import Dataset, write_csv
from .errors import ConfigError

GENERATOR_KINDS = ("smooth_vc", "latent_clusters", "holdout_interval", "bimodal_outcome",
                   "homogeneous", "linear_vc")


@dataclass(frozen=True)
class GeneratorSpec:
    kind: str
    n: int = 1000
    m: int = 1
    p: int = 1
    noise: float = 0.1
    seed: int = 0
    n_clusters: int = 2
    context_flip: float = 0.0
    context_blur: float = 0.0
    holdout_lo: float = 0.4
    holdout_hi: float = 0.6
    n_test: int | None = None
    component_means: tuple[float, ...] = (-2.0, 2.0)
    component_var: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "component_means", tuple(float(v) for v in self.component_means))
        if self.kind not in GENERATOR_KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}; expected one of {GENERATOR_KINDS}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if self.m < 1 or self.p < 1:
            raise ConfigError("m and p must be >= 1")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if not 0.0 <= self.context_flip <= 1.0 or self.context_blur < 0:
            raise ConfigError("context_flip must lie in [0, 1] and context_blur >= 0")
        if self.component_var <= 0:
            raise ConfigError("component_var must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorSpec":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown generator field(s): {unknown}")
        if "kind" not in d:
            raise ConfigError("generator spec needs a 'kind'")
        return cls(**d)


@dataclass
class GroundTruth:
    coefficients: np.ndarray
    offsets: np.ndarray
    labels: np.ndarray | None = None
    density: Callable[[np.ndarray], np.ndarray] | None = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    def subset(self, idx) -> "GroundTruth":
        return GroundTruth(self.coefficients[idx], self.offsets[idx],
                           None if self.labels is None else self.labels[idx], self.density, self.meta)


def smooth_coefficients(c: np.ndarray, p: int) -> np.ndarray:
    """sin(2 pi c) scaled by 1/(j+1) for predictor j; ``c`` is a vector."""
    scales = 1.0 / np.arange(1, p + 1)
    return np.sin(2.0 * np.pi * np.asarray(c))[:, None] * scales[None, :]


def _outcome(rng, X, coefs, offsets, noise) -> np.ndarray:
    return (X * coefs).sum(axis=1) + offsets + noise * rng.standard_normal(X.shape[0])


def _smooth_from_contexts(rng, c: np.ndarray, spec: GeneratorSpec) -> tuple[Dataset, GroundTruth]:
    n = c.size
    X = rng.standard_normal((n, spec.p))
    coefs = smooth_coefficients(c, spec.p)
    offsets = np.zeros(n)
    Y = _outcome(rng, X, coefs, offsets, spec.noise)
    return Dataset(c[:, None], X, Y), GroundTruth(coefs, offsets)


def gen_smooth_vc(spec: GeneratorSpec) -> tuple[Dataset, GroundTruth]:
    if spec.m != 1:
        raise ConfigError("smooth_vc needs m = 1")
    rng = np.random.default_rng(spec.seed)
    c = rng.uniform(0.0, 1.0, spec.n)
    return _smooth_from_contexts(rng, c, spec)


def cluster_coefficients(k: int, p: int) -> np.ndarray:
    """K coefficient vectors ``((K-1) - 2k) * ones(p)``: consecutive distance 2*sqrt(p)."""
    return ((k - 1) - 2.0 * np.arange(k))[:, None] * np.ones((1, p))


def gen_latent_clusters(spec: GeneratorSpec, K: int | None = None) -> tuple[Dataset, GroundTruth]:
    """Latent cluster labels drive coefficients; context is a noisy one-hot of the label.

    ``context_flip`` is the probability that the one-hot points at a uniformly
    chosen different cluster; ``context_blur`` is additive Gaussian noise.
    Context columns beyond the first K are pure noise.
    """
    K = K or spec.n_clusters
    if K < 2:
        raise ConfigError("latent_clusters needs K >= 2")
    m = max(spec.m, K)
    rng = np.random.default_rng(spec.seed)
    labels = rng.integers(0, K, spec.n)
    shown = labels.copy()
    if spec.context_flip > 0:
        flip = rng.random(spec.n) < spec.context_flip
        shift = rng.integers(1, K, spec.n)
        shown = np.where(flip, (labels + shift) % K, labels)
    C = np.zeros((spec.n, m))
    C[np.arange(spec.n), shown] = 1.0
    if m > K:
        C[:, K:] = rng.standard_normal((spec.n, m - K))
    if spec.context_blur > 0:
        C[:, :K] += spec.context_blur * rng.standard_normal((spec.n, K))
    X = rng.standard_normal((spec.n, spec.p))
    centers = cluster_coefficients(K, spec.p)
    coefs = centers[labels]
    offsets = np.zeros(spec.n)
    Y = _outcome(rng, X, coefs, offsets, spec.noise)
    truth = GroundTruth(coefs, offsets, labels, meta={"centers": centers, "shown": shown})
    return Dataset(C, X, Y), truth


def gen_holdout_interval(spec: GeneratorSpec, lo: float | None = None, hi: float | None = None):
    """smooth_vc rows with training contexts outside [lo, hi] and test contexts inside it.

    Returns ``(train, test, truth_train, truth_test)``.
    """
    lo = spec.holdout_lo if lo is None else lo
    hi = spec.holdout_hi if hi is None else hi
    if not 0.0 <= lo < hi <= 1.0:
        raise ConfigError(f"need 0 <= lo < hi <= 1, got ({lo}, {hi})")
    if lo == 0.0 and hi == 1.0:
        raise ConfigError("holdout interval covers [0, 1]: training region is empty")
    if spec.m != 1:
        raise ConfigError("holdout_interval needs m = 1")
    rng = np.random.default_rng(spec.seed)
    n_test = spec.n_test if spec.n_test is not None else max(spec.n // 4, 1)
    u = rng.uniform(0.0, 1.0 - (hi - lo), spec.n)
    c_train = np.where(u < lo, u, u + (hi - lo))
    c_test = rng.uniform(lo, hi, n_test)
    train, truth_train = _smooth_from_contexts(rng, c_train, spec)
    test, truth_test = _smooth_from_contexts(rng, c_test, spec)
    return train, test, truth_train, truth_test


def mixture_density(means, var: float) -> Callable[[np.ndarray], np.ndarray]:
    means = np.asarray(means, dtype=np.float64)

    def density(y):
        y = np.asarray(y, dtype=np.float64)
        z = (y[..., None] - means) ** 2 / var
        return np.exp(-0.5 * z).mean(axis=-1) / np.sqrt(2.0 * np.pi * var)

    return density


def gen_bimodal_outcome(spec: GeneratorSpec) -> tuple[Dataset, GroundTruth]:
    """Y ~ equal-weight Gaussian mixture, independent of X; context is constant ones."""
    rng = np.random.default_rng(spec.seed)
    means = np.asarray(spec.component_means)
    labels = rng.integers(0, means.size, spec.n)
    Y = means[labels] + np.sqrt(spec.component_var) * rng.standard_normal(spec.n)
    X = rng.standard_normal((spec.n, spec.p))
    C = np.ones((spec.n, spec.m))
    truth = GroundTruth(np.zeros((spec.n, spec.p)), means[labels], labels,
                        density=mixture_density(means, spec.component_var))
    return Dataset(C, X, Y), truth


def gen_homogeneous(spec: GeneratorSpec) -> tuple[Dataset, GroundTruth]:
    rng = np.random.default_rng(spec.seed)
    beta = rng.standard_normal(spec.p)
    offset = float(rng.standard_normal())
    C = rng.standard_normal((spec.n, spec.m))
    X = rng.standard_normal((spec.n, spec.p))
    coefs = np.tile(beta, (spec.n, 1))
    offsets = np.full(spec.n, offset)
    Y = _outcome(rng, X, coefs, offsets, spec.noise)
    return Dataset(C, X, Y), GroundTruth(coefs, offsets)


def gen_linear_vc(spec: GeneratorSpec) -> tuple[Dataset, GroundTruth]:
    """theta(c) = beta* c with beta* ~ N(0, 1) (p x m); C, X ~ N(0, I); zero offset."""
    rng = np.random.default_rng(spec.seed)
    beta = rng.standard_normal((spec.p, spec.m))
    C = rng.standard_normal((spec.n, spec.m))
    X = rng.standard_normal((spec.n, spec.p))
    coefs = C @ beta.T
    offsets = np.zeros(spec.n)
    Y = _outcome(rng, X, coefs, offsets, spec.noise)
    return Dataset(C, X, Y), GroundTruth(coefs, offsets, meta={"beta": beta})


def generate(spec: GeneratorSpec):
    """Dispatch on ``spec.kind``; holdout_interval returns a 4-tuple, others a pair."""
    return {
        "smooth_vc": gen_smooth_vc,
        "latent_clusters": gen_latent_clusters,
        "holdout_interval": gen_holdout_interval,
        "bimodal_outcome": gen_bimodal_outcome,
        "homogeneous": gen_homogeneous,
        "linear_vc": gen_linear_vc,
    }[spec.kind](spec)


def save_truth(path, data: Dataset, truth: GroundTruth) -> None:
    p = truth.coefficients.shape[1]
    header = ["id", *[f"theta_{j}" for j in range(p)], "offset", "cluster"]
    labels = truth.labels if truth.labels is not None else np.full(data.n, -1)
    rows = ([data.ids[i], *map(float, truth.coefficients[i]), float(truth.offsets[i]), int(labels[i])]
            for i in range(data.n))
    write_csv(path, header, rows)


# --- partition-based cohort baseline -------------------------------------------------


@dataclass
class CohortBaseline:
    """Independent OLS (with intercept) per equal-width bin of a scalar context."""

    edges: np.ndarray
    coefficients: np.ndarray  # bins x p, NaN for empty bins
    offsets: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def assign(self, c: np.ndarray) -> np.ndarray:
        """Nearest non-empty bin by center distance (bins containing c win ties)."""
        c = np.asarray(c, dtype=np.float64).reshape(-1)
        filled = np.flatnonzero(~np.isnan(self.offsets))
        inside = np.clip(np.searchsorted(self.edges, c, side="right") - 1, 0, len(self.offsets) - 1)
        dist = np.abs(c[:, None] - self.centers[filled][None, :])
        nearest = filled[np.argmin(dist, axis=1)]
        return np.where(np.isnan(self.offsets[inside]), nearest, inside)

    def predict_parameters(self, c) -> tuple[np.ndarray, np.ndarray]:
        b = self.assign(c)
        return self.coefficients[b], self.offsets[b]


def fit_cohort_baseline(data: Dataset, bins: int = 5, lo: float | None = None,
                        hi: float | None = None) -> CohortBaseline:
    if data.m != 1:
        raise ConfigError("cohort baseline needs a scalar context")
    c = data.C[:, 0]
    lo = float(c.min()) if lo is None else lo
    hi = float(c.max()) if hi is None else hi
    edges = np.linspace(lo, hi, bins + 1)
    which = np.clip(np.searchsorted(edges, c, side="right") - 1, 0, bins - 1)
    coefs = np.full((bins, data.p), np.nan)
    offs = np.full(bins, np.nan)
    for b in range(bins):
        rows = which == b
        if rows.sum() < data.p + 1:
            continue
        design = np.hstack([data.X[rows], np.ones((rows.sum(), 1))])
        sol = np.linalg.lstsq(design, data.Y[rows], rcond=None)[0]
        coefs[b], offs[b] = sol[:-1], sol[-1]
    if np.all(np.isnan(offs)):
        raise ConfigError("every cohort bin is too small to fit")
    return CohortBaseline(edges, coefs, offs)
