"""Minimal define-by-run reverse-mode differentiation over dense float64 matrices.

Every value is a 2-D ``numpy`` array.  A :class:`Tape` records primitives in
the order they run; :meth:`Tape.backward` walks that record in reverse and
accumulates adjoints.  Broadcasting is limited to adding a ``1 x c`` row to
an ``n x c`` matrix; any other shape mismatch raises :class:`ShapeError`.

Example::

    store = ParamStore({"w": np.array([[3.0]])})
    tape = Tape()
    w = tape.param(store, "w")
    loss = (w * w).sum()
    tape.backward(loss)
    store.grads["w"]  # [[6.0]]
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh", "sigmoid", "softmax", "identity")


def as_matrix(value, name: str = "value") -> np.ndarray:
    """Coerce scalars/vectors to a 2-D float64 array (vectors become rows)."""
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"{name}: expected at most 2 dimensions, got shape {arr.shape}")
    return arr


def _check_finite(arr: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite value produced by {op}")
    return arr


class ParamStore:
    """Named trainable matrices with paired gradient buffers."""

    def __init__(self, values: dict[str, np.ndarray] | None = None):
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (values or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> None:
        arr = as_matrix(value, name).copy()
        self.values[name] = arr
        self.grads[name] = np.zeros_like(arr)

    def __contains__(self, name: str) -> bool:
        return name in self.values

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]

    def names(self) -> list[str]:
        return list(self.values)

    def zero_grad(self) -> None:
        for name in self.grads:
            self.grads[name] = np.zeros_like(self.values[name])

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self.values.items()})

    def load(self, values: dict[str, np.ndarray]) -> None:
        for name, value in values.items():
            if value.shape != self.values[name].shape:
                raise ShapeError(f"{name}: cannot load shape {value.shape} into {self.values[name].shape}")
            self.values[name] = value.copy()

    def snapshot(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.values.items()}

    def n_params(self) -> int:
        return int(sum(v.size for v in self.values.values()))


class Var:
    """A node on the tape: a value plus the recipe for its adjoint."""

    __array_priority__ = 1000  # make ndarray <op> Var dispatch to Var

    def __init__(self, value: np.ndarray, tape: "Tape", parents: Sequence["Var"] = (),
                 backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None,
                 requires_grad: bool = False):
        self.value = value
        self.tape = tape
        self.parents = tuple(parents)
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self.grad: np.ndarray | None = None
        self.param_name: str | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() needs a 1x1 value, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self) -> str:
        return f"Var(shape={self.shape})"

    def _lift(self, other) -> "Var":
        if isinstance(other, Var):
            return other
        if isinstance(other, (int, float)):
            return self.tape.const(np.full(self.shape, float(other)))
        return self.tape.const(other)

    def __matmul__(self, other): return matmul(self, self._lift(other))
    def __rmatmul__(self, other): return matmul(self._lift(other), self)
    def __add__(self, other): return add(self, self._lift(other))
    def __radd__(self, other): return add(self._lift(other), self)
    def __sub__(self, other): return sub(self, self._lift(other))
    def __rsub__(self, other): return sub(self._lift(other), self)
    def __neg__(self): return scale(self, -1.0)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, self._lift(other))

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self._lift(other), self)

    def sum(self): return total(self)
    def mean(self): return mean(self)


class Tape:
    """Ordered record of primitives from one forward pass."""

    def __init__(self):
        self.nodes: list[Var] = []
        self._store: ParamStore | None = None

    def _record(self, value: np.ndarray, parents: Sequence[Var], backward, op: str) -> Var:
        for p in parents:
            if p.tape is not self:
                raise ValueError(f"{op}: operand belongs to a different tape")
        var = Var(_check_finite(value, op), self, parents, backward)
        self.nodes.append(var)
        return var

    def const(self, value) -> Var:
        var = Var(_check_finite(as_matrix(value), "const"), self)
        self.nodes.append(var)
        return var

    def leaf(self, value) -> Var:
        var = Var(_check_finite(as_matrix(value).copy(), "leaf"), self, requires_grad=True)
        self.nodes.append(var)
        return var

    def param(self, store: ParamStore, name: str) -> Var:
        if self._store is not None and self._store is not store:
            raise ValueError("a tape can only bind one ParamStore")
        self._store = store
        var = self.leaf(store.values[name])
        var.param_name = name
        return var

    def backward(self, loss: Var) -> None:
        """Propagate d(loss)/d(node) for every recorded node, newest first."""
        if loss.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 loss, got {loss.shape}")
        _check_finite(loss.value, "loss")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes):
            if node.grad is None or node._backward is None:
                continue
            for parent, g in zip(node.parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        if self._store is not None:
            self._store.zero_grad()
            for node in self.nodes:
                if node.param_name is not None and node.grad is not None:
                    self._store.grads[node.param_name] += node.grad


def _same_shape(a: Var, b: Var, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not match")


def _broadcast_kind(a: Var, b: Var, op: str) -> str:
    if a.shape == b.shape:
        return "same"
    if b.shape[0] == 1 and b.shape[1] == a.shape[1]:
        return "row_b"
    if a.shape[0] == 1 and a.shape[1] == b.shape[1]:
        return "row_a"
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not compatible "
                     "(only a 1 x c row may be broadcast)")


def matmul(a: Var, b: Var) -> Var:
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return a.tape._record(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def add(a: Var, b: Var) -> Var:
    kind = _broadcast_kind(a, b, "add")
    if kind == "same":
        back = lambda g: (g, g)
    elif kind == "row_b":
        back = lambda g: (g, g.sum(axis=0, keepdims=True))
    else:
        back = lambda g: (g.sum(axis=0, keepdims=True), g)
    return a.tape._record(a.value + b.value, (a, b), back, "add")


def sub(a: Var, b: Var) -> Var:
    kind = _broadcast_kind(a, b, "sub")
    if kind == "same":
        back = lambda g: (g, -g)
    elif kind == "row_b":
        back = lambda g: (g, -g.sum(axis=0, keepdims=True))
    else:
        back = lambda g: (g.sum(axis=0, keepdims=True), -g)
    return a.tape._record(a.value - b.value, (a, b), back, "sub")


def mul(a: Var, b: Var) -> Var:
    _same_shape(a, b, "mul")
    av, bv = a.value, b.value
    with np.errstate(over="ignore", invalid="ignore"):
        out = av * bv
    return a.tape._record(out, (a, b), lambda g: (g * bv, g * av), "mul")


def scale(a: Var, k: float) -> Var:
    return a.tape._record(a.value * k, (a,), lambda g: (g * k,), "scale")


def exp(a: Var) -> Var:
    with np.errstate(over="ignore"):
        out = np.exp(a.value)
    return a.tape._record(out, (a,), lambda g: (g * out,), "exp")


def log(a: Var) -> Var:
    av = a.value
    if np.any(av <= 0):
        raise NumericError("log of a non-positive value")
    return a.tape._record(np.log(av), (a,), lambda g: (g / av,), "log")


def square(a: Var) -> Var:
    av = a.value
    with np.errstate(over="ignore"):
        out = av * av
    return a.tape._record(out, (a,), lambda g: (2.0 * g * av,), "square")


def absolute(a: Var) -> Var:
    av = a.value
    return a.tape._record(np.abs(av), (a,), lambda g: (g * np.sign(av),), "abs")


def softplus(a: Var) -> Var:
    """log(1 + exp(a)), computed without overflow."""
    av = a.value
    out = np.logaddexp(0.0, av)
    sig = _sigmoid(av)
    return a.tape._record(out, (a,), lambda g: (g * sig,), "softplus")


def clamp(a: Var, lo: float, hi: float) -> Var:
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return a.tape._record(np.clip(av, lo, hi), (a,), lambda g: (g * inside,), "clamp")


def total(a: Var) -> Var:
    shape = a.shape
    return a.tape._record(a.value.sum().reshape(1, 1), (a,),
                          lambda g: (np.full(shape, g[0, 0]),), "sum")


def mean(a: Var) -> Var:
    shape = a.shape
    size = a.value.size
    return a.tape._record(a.value.mean().reshape(1, 1), (a,),
                          lambda g: (np.full(shape, g[0, 0] / size),), "mean")


def sum_rows(a: Var) -> Var:
    """Sum across columns: ``n x c -> n x 1``."""
    shape = a.shape
    return a.tape._record(a.value.sum(axis=1, keepdims=True), (a,),
                          lambda g: (np.broadcast_to(g, shape).copy(),), "sum_rows")


def cols(a: Var, start: int, stop: int) -> Var:
    """Column slice ``a[:, start:stop]``."""
    if not 0 <= start < stop <= a.shape[1]:
        raise ShapeError(f"cols: slice [{start}:{stop}] out of range for {a.shape}")
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return a.tape._record(a.value[:, start:stop], (a,), back, "cols")


def hcat(parts: Sequence[Var]) -> Var:
    if not parts:
        raise ShapeError("hcat: nothing to concatenate")
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1:
        raise ShapeError(f"hcat: row counts differ: {[p.shape for p in parts]}")
    edges = np.cumsum([0] + [p.shape[1] for p in parts])

    def back(g):
        return tuple(g[:, edges[i]:edges[i + 1]] for i in range(len(parts)))

    return parts[0].tape._record(np.hstack([p.value for p in parts]), parts, back, "hcat")


def logmeanexp_rows(a: Var) -> Var:
    """Row-wise log(mean(exp(a))), ``n x c -> n x 1``."""
    av = a.value
    top = av.max(axis=1, keepdims=True)
    w = np.exp(av - top)
    denom = w.mean(axis=1, keepdims=True)
    out = top + np.log(denom)
    soft = w / w.sum(axis=1, keepdims=True)
    return a.tape._record(out, (a,), lambda g: (g * soft,), "logmeanexp_rows")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    w = np.exp(x - x.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def activation(a: Var, kind: str) -> Var:
    """Apply ``relu``, ``tanh``, ``sigmoid``, ``identity`` elementwise or ``softmax`` per row."""
    av = a.value
    if kind == "softmax-rows":
        kind = "softmax"
    if kind == "relu":
        mask = av > 0
        return a.tape._record(av * mask, (a,), lambda g: (g * mask,), "relu")
    if kind == "tanh":
        out = np.tanh(av)
        return a.tape._record(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")
    if kind == "sigmoid":
        out = _sigmoid(av)
        return a.tape._record(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")
    if kind == "softmax":
        out = _softmax_rows(av)

        def back(g):
            inner = (g * out).sum(axis=1, keepdims=True)
            return (out * (g - inner),)

        return a.tape._record(out, (a,), back, "softmax")
    if kind == "identity":
        return a.tape._record(av.copy(), (a,), lambda g: (g,), "identity")
    raise ConfigError(f"unknown activation {kind!r}; expected one of {ACTIVATIONS}")


def activate(x, kind: str) -> np.ndarray:
    """Plain-array convenience wrapper around :func:`activation`."""
    tape = Tape()
    return activation(tape.const(x), kind).value


def grad_check(loss_fn: Callable[[ParamStore], Var], params: ParamStore,
               eps: float = 1e-5, names: Iterable[str] | None = None,
               floor: float = 1e-6) -> float:
    """Largest relative error between tape gradients and central differences.

    ``loss_fn`` must build a fresh tape from ``params`` and return a 1x1 Var.
    The relative error of one coordinate is ``|g - fd| / max(|g|, |fd|, floor)``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    loss = loss_fn(params)
    loss.tape.backward(loss)
    analytic = {k: v.copy() for k, v in params.grads.items()}
    worst = 0.0
    for name in (names if names is not None else params.names()):
        value = params.values[name]
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + eps
            up = loss_fn(params).item()
            value[idx] = orig - eps
            down = loss_fn(params).item()
            value[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"non-finite loss while perturbing {name}{list(idx)}")
            fd = (up - down) / (2.0 * eps)
            g = analytic[name][idx]
            rel = abs(g - fd) / max(abs(g), abs(fd), floor)
            worst = max(worst, rel)
    return worst
