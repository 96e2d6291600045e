"""Nonparametric constructions on top of contextualized fits.

Two pipelines live here:

* overfitted atoms -> k-means clusters -> kernel-stitched transmission curves;
* pseudo-sampled noise context ``Z`` -> heteroskedastic fit -> outcome
  density integrated over the stored ``Z`` draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .data import Dataset
from .encoders import EncoderSpec
from .errors import ConfigError, DataError
from .glm import LOGVAR_BOUNDS, LikelihoodSpec, RegularizationSpec
from .training import FittedModel, TrainConfig, fit


@dataclass(frozen=True)
class AtomSet:
    coefficients: np.ndarray  # L x p
    offsets: np.ndarray  # L
    contexts: np.ndarray  # L x m
    predictors: np.ndarray  # L x p
    anchors: np.ndarray  # row indices into the source dataset
    model: FittedModel | None = None

    def __len__(self) -> int:
        return self.offsets.size

    def vectors(self) -> np.ndarray:
        """Atom parameter vectors ``[coefficients, offset]``."""
        return np.hstack([self.coefficients, self.offsets[:, None]])


@dataclass(frozen=True)
class ClusterResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: float
    degenerate: bool = False


@dataclass(frozen=True)
class ComponentModel:
    cluster: int
    members: np.ndarray
    x_grid: np.ndarray
    yhat: np.ndarray
    bandwidth: float


def fit_atoms(data: Dataset, L: int, config: TrainConfig | None = None,
              encoder: EncoderSpec | None = None, seed: int | None = None) -> AtomSet:
    """High-capacity contextualized linear fit evaluated at ``L`` seeded training rows."""
    if not 1 <= L <= data.n:
        raise ConfigError(f"need 1 <= L <= n, got L={L}, n={data.n}")
    config = config or TrainConfig()
    lik = LikelihoodSpec("gaussian")
    encoder = encoder or EncoderSpec("mlp", data.m, lik.output_dim(data.p))
    model = fit(data, encoder, lik, RegularizationSpec(alpha=0.0), config)
    rng = np.random.default_rng(config.seed if seed is None else seed)
    anchors = np.sort(rng.choice(data.n, size=L, replace=False))
    pred = model.predict(data.C[anchors], data.X[anchors])
    return AtomSet(pred.coefficients, pred.offsets, data.C[anchors], data.X[anchors], anchors, model)


# --- k-means -------------------------------------------------------------------------


def _kmeans_pp(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int = 300):
    for _ in range(max_iter):
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        new = centers.copy()
        for j in range(centers.shape[0]):
            members = labels == j
            if members.any():
                new[j] = points[members].mean(axis=0)
        if np.array_equal(new, centers):
            break
        centers = new
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, centers, float(d2[np.arange(points.shape[0]), labels].sum())


def _canonical(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    mapping: dict[int, int] = {}
    return np.array([mapping.setdefault(int(l), len(mapping)) for l in labels], dtype=int)


def kmeans(points, k: int, seed: int = 0, restarts: int = 10) -> ClusterResult:
    """k-means++ seeding, Lloyd iterations, best of ``restarts`` by inertia."""
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= K <= L, got K={k}, L={n}")
    if k > 1 and np.all(points == points[0]):
        return ClusterResult(np.zeros(n, dtype=int), points[:1].copy(), 0.0, degenerate=True)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        labels, centers, inertia = _lloyd(points, _kmeans_pp(points, k, rng))
        if best is None or inertia < best[2] - 1e-12:
            best = (labels, centers, inertia)
    labels, centers, inertia = best
    canon = _canonical(labels)
    order = [int(labels[np.flatnonzero(canon == j)[0]]) for j in range(canon.max() + 1)]
    return ClusterResult(canon, centers[order], inertia)


def cluster_atoms(atoms: AtomSet | np.ndarray, K: int, seed: int = 0, restarts: int = 10,
                  standardize: bool = False) -> ClusterResult:
    """k-means on atom parameter vectors (coefficients + offset)."""
    vectors = atoms.vectors() if isinstance(atoms, AtomSet) else np.asarray(atoms, dtype=np.float64)
    if standardize:
        scale = vectors.std(axis=0)
        vectors = (vectors - vectors.mean(axis=0)) / np.where(scale > 0, scale, 1.0)
    return kmeans(vectors, K, seed=seed, restarts=restarts)


def inertia(points: np.ndarray, labels: np.ndarray) -> float:
    total = 0.0
    for j in np.unique(labels):
        members = points[labels == j]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


# --- stitching ------------------------------------------------------------------------


def _unique_rows(*arrays: np.ndarray) -> np.ndarray:
    stacked = np.hstack([a.reshape(a.shape[0], -1) for a in arrays])
    _, first = np.unique(stacked, axis=0, return_index=True)
    return np.sort(first)


def _kernel_weights(x_grid: np.ndarray, loc: np.ndarray, bandwidth: float) -> np.ndarray:
    logw = -0.5 * ((x_grid[:, None] - loc[None, :]) / bandwidth) ** 2
    return np.exp(logw - logw.max(axis=1, keepdims=True))


def default_bandwidth(loc: np.ndarray, neighbours: int = 3) -> float:
    """Median distance to the k-th nearest other anchor (k capped by the member count)."""
    k = min(neighbours, loc.size - 1)
    gaps = np.sort(np.abs(loc[:, None] - loc[None, :]), axis=1)
    h = float(np.median(gaps[:, k]))
    return h if h > 0 else 1.0


def stitch_transmission(atoms: AtomSet, assignments, k: int, x_grid, feature: int = 0,
                        bandwidth: float | None = None, method: str = "local_linear") -> ComponentModel:
    """Smooth one cluster's atoms into a transmission curve along predictor ``feature``.

    Every atom is a line through its anchor: ``offset + coef . x_anchor`` at the
    anchor value, slope ``coef[feature]``.  Duplicate atoms are collapsed first.

    ``method="local_linear"`` fits, at each grid value, a Gaussian-kernel
    weighted line through the atoms' anchor predictions and returns its
    intercept; it does not trust individual atom slopes, which are not
    identified when context and predictor coincide.  ``method="lines"``
    returns the kernel-weighted average of the atoms' own lines.
    """
    if method not in ("local_linear", "lines"):
        raise ConfigError(f"unknown stitching method {method!r}")
    assignments = np.asarray(assignments)
    members = np.flatnonzero(assignments == k)
    if members.size == 0:
        raise DataError(f"cluster {k} has no member atoms")
    x_grid = np.asarray(x_grid, dtype=np.float64)
    if np.any(np.diff(x_grid) <= 0):
        raise ConfigError("x_grid must be strictly increasing")
    coefs = atoms.coefficients[members]
    offs = atoms.offsets[members]
    anchors = atoms.predictors[members]
    keep = _unique_rows(coefs, offs, anchors)
    coefs, offs, anchors = coefs[keep], offs[keep], anchors[keep]

    at_anchor = offs + (coefs * anchors).sum(axis=1)
    loc = anchors[:, feature]
    lines = at_anchor[None, :] + coefs[None, :, feature] * (x_grid[:, None] - loc[None, :])
    if loc.size == 1:
        return ComponentModel(k, members, x_grid, lines[:, 0], float("nan"))
    h = default_bandwidth(loc) if bandwidth is None else float(bandwidth)
    w = _kernel_weights(x_grid, loc, h)
    average = (w * lines).sum(axis=1) / w.sum(axis=1)
    if method == "lines":
        return ComponentModel(k, members, x_grid, average, h)

    d = loc[None, :] - x_grid[:, None]
    s0, s1, s2 = w.sum(axis=1), (w * d).sum(axis=1), (w * d * d).sum(axis=1)
    t0, t1 = (w * at_anchor).sum(axis=1), (w * d * at_anchor).sum(axis=1)
    det = s0 * s2 - s1 * s1
    ok = det > 1e-12 * s0 * np.maximum(s2, 1e-300)
    yhat = np.where(ok, (s2 * t0 - s1 * t1) / np.where(ok, det, 1.0), average)
    return ComponentModel(k, members, x_grid, yhat, h)


# --- pseudo-sampling --------------------------------------------------------------------


def draw_pseudo_noise(data: Dataset, d_z: int, seed: int, coupling: str = "rank") -> np.ndarray:
    """One N(0, I) draw per row.

    With ``coupling="rank"`` the draws are sorted on their first coordinate and
    handed out in outcome order, so nearby ``z`` values index nearby outcomes;
    ``"independent"`` keeps the raw draw order.
    """
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((data.n, d_z))
    if coupling == "independent":
        return Z
    if coupling != "rank":
        raise ConfigError(f"unknown coupling {coupling!r}; expected 'rank' or 'independent'")
    Z = Z[np.argsort(Z[:, 0], kind="stable")]
    out = np.empty_like(Z)
    out[np.argsort(data.Y, kind="stable")] = Z
    return out


def fit_pseudo(data: Dataset, d_z: int = 1, config: TrainConfig | None = None,
               encoder: EncoderSpec | None = None, regularization: RegularizationSpec | None = None,
               coupling: str = "rank") -> FittedModel:
    """Heteroskedastic fit on context extended with fixed per-row noise coordinates."""
    config = config or TrainConfig()
    lik = LikelihoodSpec("hetero_gaussian")
    if d_z < 0:
        raise ConfigError("d_z must be >= 0")
    if d_z == 0:
        encoder = encoder or EncoderSpec("mlp", data.m, lik.output_dim(data.p))
        return fit(data, encoder, lik, regularization, config)
    Z = draw_pseudo_noise(data, d_z, config.seed, coupling)
    names = (*data.context_names, *[f"z{j}" for j in range(d_z)])
    extended = data.with_context(np.hstack([data.C, Z]), names)
    encoder = encoder or EncoderSpec("mlp", extended.m, lik.output_dim(data.p))
    return fit(extended, encoder, lik, regularization, config, pseudo_z=Z)


@dataclass(frozen=True)
class DensityResult:
    y_grid: np.ndarray
    density: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    integral: float
    narrow_grid: bool


def component_parameters(model: FittedModel, c, x) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of every stored-Z component at one (c, x)."""
    c = np.asarray(c, dtype=np.float64).reshape(-1)
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    if model.likelihood.family != "hetero_gaussian":
        raise ConfigError("density needs a hetero_gaussian model")
    if model.d_z:
        Z = model.pseudo_z
        C = np.hstack([np.tile(c, (Z.shape[0], 1)), Z])
    else:
        C = c[None, :]
    X = np.tile(x, (C.shape[0], 1))
    pred = model.predict(C, X)
    means = pred.prediction
    variances = np.exp(np.clip(pred.aux[:, 0], *LOGVAR_BOUNDS))
    return means, variances


def pseudo_density(model: FittedModel, c, x, y_grid) -> DensityResult:
    """Equal-weight mixture of the per-Z Gaussians evaluated on ``y_grid``."""
    y_grid = np.asarray(y_grid, dtype=np.float64)
    if y_grid.ndim != 1 or y_grid.size < 2 or np.any(np.diff(y_grid) <= 0):
        raise ConfigError("y_grid must be a strictly increasing vector")
    means, variances = component_parameters(model, c, x)
    return mixture_on_grid(means, variances, y_grid)


def mixture_on_grid(means, variances, y_grid) -> DensityResult:
    means = np.asarray(means, dtype=np.float64)
    variances = np.asarray(variances, dtype=np.float64)
    sd = np.sqrt(variances)
    z = (y_grid[:, None] - means[None, :]) / sd[None, :]
    dens = (np.exp(-0.5 * z * z) / (sd[None, :] * math.sqrt(2.0 * math.pi))).mean(axis=1)
    narrow = bool(y_grid[0] > (means - 4 * sd).min() or y_grid[-1] < (means + 4 * sd).max())
    return DensityResult(y_grid, dens, means, variances, float(np.trapezoid(dens, y_grid)), narrow)


def total_variation(p_values, q_values, y_grid) -> float:
    """0.5 * integral |p - q| by the trapezoid rule."""
    return 0.5 * float(np.trapezoid(np.abs(np.asarray(p_values) - np.asarray(q_values)), y_grid))
