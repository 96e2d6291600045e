"""Context encoders: map context rows to per-sample GLM parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Var
from .errors import ConfigError, ShapeError, StateError

ENCODER_KINDS = ("linear", "mlp", "ngam")


@dataclass(frozen=True)
class EncoderSpec:
    kind: str = "mlp"
    context_dim: int = 1
    output_dim: int = 2
    hidden_layers: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    archetypes: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}; expected one of {ENCODER_KINDS}")
        if self.context_dim < 1:
            raise ConfigError("context_dim must be >= 1")
        if self.output_dim < 1:
            raise ConfigError("output_dim must be >= 1")
        if self.archetypes == 1 or self.archetypes < 0:
            raise ConfigError("archetypes must be 0 (disabled) or >= 2")
        if any(h < 1 for h in self.hidden_layers):
            raise ConfigError("hidden layer widths must be >= 1")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")

    @property
    def raw_dim(self) -> int:
        """Width emitted by the encoder body (K logits when archetypes are on)."""
        return self.archetypes if self.archetypes else self.output_dim

    @property
    def layer_widths(self) -> tuple[int, ...]:
        return () if self.kind == "linear" else self.hidden_layers

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "context_dim": self.context_dim,
            "output_dim": self.output_dim,
            "hidden_layers": list(self.hidden_layers),
            "activation": self.activation,
            "archetypes": self.archetypes,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(**{**d, "hidden_layers": tuple(d.get("hidden_layers", (32, 32)))})


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple[int, int]) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(spec: EncoderSpec, seed: int = 0) -> ParamStore:
    """Seeded parameters: uniform(+-1/sqrt(fan_in)) weights and biases, N(0, 0.01) archetypes."""
    rng = np.random.default_rng(seed)
    store = ParamStore()
    out = spec.raw_dim
    if spec.kind in ("linear", "mlp"):
        widths = (spec.context_dim, *spec.layer_widths, out)
        for i in range(len(widths) - 1):
            store.add(f"enc.W{i}", _uniform(rng, widths[i], (widths[i], widths[i + 1])))
            store.add(f"enc.b{i}", _uniform(rng, widths[i], (1, widths[i + 1])))
    else:
        widths = (1, *spec.hidden_layers, out)
        for j in range(spec.context_dim):
            for i in range(len(widths) - 1):
                store.add(f"enc.f{j}.W{i}", _uniform(rng, widths[i], (widths[i], widths[i + 1])))
                if i < len(widths) - 2:
                    store.add(f"enc.f{j}.b{i}", _uniform(rng, widths[i], (1, widths[i + 1])))
        store.add("enc.b", _uniform(rng, spec.context_dim, (1, out)))
    if spec.archetypes:
        store.add("arch.A", 0.1 * rng.standard_normal((spec.archetypes, spec.output_dim)))
    return store


def param_names(spec: EncoderSpec) -> list[str]:
    names = []
    if spec.kind in ("linear", "mlp"):
        for i in range(len(spec.layer_widths) + 1):
            names += [f"enc.W{i}", f"enc.b{i}"]
    else:
        depth = len(spec.hidden_layers) + 1
        for j in range(spec.context_dim):
            for i in range(depth):
                names.append(f"enc.f{j}.W{i}")
                if i < depth - 1:
                    names.append(f"enc.f{j}.b{i}")
        names.append("enc.b")
    if spec.archetypes:
        names.append("arch.A")
    return names


def _require(store: ParamStore, spec: EncoderSpec) -> None:
    missing = [n for n in param_names(spec) if n not in store]
    if missing:
        raise StateError(f"encoder parameters not initialized: missing {missing}")


def _mlp_body(tape: Tape, store: ParamStore, h: Var, prefix: str, depth: int,
              act: str, final_bias: bool) -> Var:
    for i in range(depth):
        h = h @ tape.param(store, f"{prefix}W{i}")
        if i < depth - 1 or final_bias:
            h = h + tape.param(store, f"{prefix}b{i}")
        if i < depth - 1:
            h = ad.activation(h, act)
    return h


def encode(tape: Tape, store: ParamStore, spec: EncoderSpec, context: Var) -> tuple[Var, Var | None]:
    """Batched forward pass.

    Returns ``(theta, weights)`` where ``theta`` is ``n x output_dim`` and
    ``weights`` holds the softmax archetype weights (``None`` without archetypes).
    """
    _require(store, spec)
    if context.shape[1] != spec.context_dim:
        raise ShapeError(f"context has {context.shape[1]} columns, encoder expects {spec.context_dim}")
    depth = len(spec.layer_widths) + 1
    if spec.kind in ("linear", "mlp"):
        raw = _mlp_body(tape, store, context, "enc.", depth, spec.activation, True)
    else:
        raw = None
        for j in range(spec.context_dim):
            fj = _mlp_body(tape, store, ad.cols(context, j, j + 1), f"enc.f{j}.", depth,
                           spec.activation, False)
            raw = fj if raw is None else raw + fj
        raw = raw + tape.param(store, "enc.b")
    if not spec.archetypes:
        return raw, None
    weights = ad.activation(raw, "softmax")
    return weights @ tape.param(store, "arch.A"), weights


def encode_array(store: ParamStore, spec: EncoderSpec, context) -> np.ndarray:
    tape = Tape()
    theta, _ = encode(tape, store, spec, tape.const(ad.as_matrix(context)))
    return theta.value


def _vector(c, name: str) -> np.ndarray:
    arr = np.asarray(c, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name}: expected a vector, got shape {arr.shape}")
    return arr


def encode_linear(c, beta, b) -> np.ndarray:
    """``beta @ c + b`` for one context vector; ``beta`` is ``d_out x m``."""
    c = _vector(c, "c")
    beta = ad.as_matrix(beta, "beta")
    b = _vector(b, "b")
    if beta.shape != (b.size, c.size):
        raise ShapeError(f"encode_linear: beta {beta.shape} does not match c ({c.size},) and b ({b.size},)")
    spec = EncoderSpec(kind="linear", context_dim=c.size, output_dim=b.size)
    store = ParamStore({"enc.W0": beta.T, "enc.b0": b})
    return encode_array(store, spec, c)[0]


def encode_mlp(c, params: ParamStore, spec: EncoderSpec) -> np.ndarray:
    if spec.kind != "mlp":
        raise ConfigError(f"encode_mlp called with a {spec.kind!r} spec")
    _require(params, spec)
    return encode_array(params, spec, _vector(c, "c"))[0]


def encode_ngam(c, params: ParamStore, spec: EncoderSpec) -> np.ndarray:
    if spec.kind != "ngam":
        raise ConfigError(f"encode_ngam called with a {spec.kind!r} spec")
    _require(params, spec)
    return encode_array(params, spec, _vector(c, "c"))[0]


def archetype_combine(logits, archetypes) -> tuple[np.ndarray, np.ndarray]:
    """Convex combination of archetype rows; returns ``(output, weights)``."""
    logits = _vector(logits, "logits")
    A = ad.as_matrix(archetypes, "archetypes")
    if logits.size < 2:
        raise ShapeError("archetype_combine needs at least 2 archetypes")
    if A.shape[0] != logits.size:
        raise ShapeError(f"{logits.size} logits for {A.shape[0]} archetypes")
    tape = Tape()
    w = ad.activation(tape.const(logits), "softmax")
    out = w @ tape.const(A)
    return out.value[0], w.value[0]


@dataclass
class SampleModel:
    """Parameters of one sample's GLM: coefficients, offset, optional auxiliary heads."""

    coefficients: np.ndarray
    offset: float
    aux: np.ndarray | None = field(default=None)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64).reshape(-1)
        self.offset = float(self.offset)
        if self.aux is not None:
            self.aux = np.asarray(self.aux, dtype=np.float64).reshape(-1)
        values = [self.coefficients, [self.offset]] + ([self.aux] if self.aux is not None else [])
        if not all(np.all(np.isfinite(v)) for v in values):
            raise ValueError("SampleModel entries must be finite")

    @property
    def n_predictors(self) -> int:
        return self.coefficients.size
