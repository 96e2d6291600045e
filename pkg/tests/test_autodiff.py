import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxml import autodiff as ad
from ctxml.autodiff import ParamStore, Tape, grad_check
from ctxml.data import Dataset
from ctxml.encoders import EncoderSpec
from ctxml.errors import ConfigError, NumericError, ShapeError
from ctxml.glm import LikelihoodSpec, RegularizationSpec
from ctxml.training import _initial_store, _loss_terms

seeds = st.integers(0, 2**31 - 1)


def naive_matmul(A, B):
    out = np.zeros((A.shape[0], B.shape[1]))
    for i in range(A.shape[0]):
        for j in range(B.shape[1]):
            s = 0.0
            for k in range(A.shape[1]):
                s += A[i, k] * B[k, j]
            out[i, j] = s
    return out


def value_of(op, *arrays):
    tape = Tape()
    return op(*[tape.const(a) for a in arrays]).value


def test_matmul_identity():
    M = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(value_of(ad.matmul, np.eye(3), M), M)


def test_matmul_scalar():
    assert value_of(ad.matmul, [[2.0]], [[3.0]])[0, 0] == 6.0


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(3)
    A, B = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    assert np.max(np.abs(value_of(ad.matmul, A, B) - naive_matmul(A, B))) < 1e-12


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        value_of(ad.matmul, np.ones((2, 3)), np.ones((2, 3)))


def test_only_row_broadcast_is_allowed():
    tape = Tape()
    a = tape.const(np.ones((4, 3)))
    assert (a + tape.const(np.ones((1, 3)))).shape == (4, 3)
    with pytest.raises(ShapeError):
        a + tape.const(np.ones((4, 1)))


@pytest.mark.parametrize("kind, x, expected", [
    ("sigmoid", 0.0, 0.5),
    ("relu", -1.5, 0.0),
    ("relu", 2.5, 2.5),
    ("tanh", 0.0, 0.0),
])
def test_activation_values(kind, x, expected):
    assert ad.activate([[x]], kind)[0, 0] == expected


def test_softmax_analytic():
    out = ad.activate([[0.0, math.log(2.0)]], "softmax-rows")[0]
    assert np.allclose(out, [1 / 3, 2 / 3], atol=1e-15)


def test_unknown_activation():
    with pytest.raises(ConfigError):
        ad.activate([[1.0]], "gelu")


@given(seed=seeds, rows=st.integers(1, 5), cols=st.integers(1, 6))
def test_softmax_rows_are_distributions(seed, rows, cols):
    x = np.random.default_rng(seed).uniform(-30, 30, (rows, cols))
    out = ad.activate(x, "softmax")
    assert np.all(out >= 0)
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)


@given(seed=seeds, a=st.integers(1, 4), b=st.integers(1, 4), c=st.integers(1, 4), d=st.integers(1, 4))
def test_matmul_associative(seed, a, b, c, d):
    rng = np.random.default_rng(seed)
    A, B, C = rng.uniform(-2, 2, (a, b)), rng.uniform(-2, 2, (b, c)), rng.uniform(-2, 2, (c, d))
    left = value_of(lambda x, y, z: (x @ y) @ z, A, B, C)
    right = value_of(lambda x, y, z: x @ (y @ z), A, B, C)
    assert np.max(np.abs(left - right)) < 1e-9


def test_grad_check_square():
    store = ParamStore({"t": [[3.0]]})

    def loss(s):
        tape = Tape()
        t = tape.param(s, "t")
        return (t * t).sum()

    assert grad_check(loss, store) < 1e-6
    l = loss(store)
    l.tape.backward(l)
    assert store.grads["t"][0, 0] == pytest.approx(6.0)


def test_grad_check_affine():
    a = np.array([[1.5], [-2.0], [0.25]])
    store = ParamStore({"t": [[0.3, -0.7, 1.1]]})

    def loss(s):
        tape = Tape()
        return tape.param(s, "t") @ tape.const(a)

    assert grad_check(loss, store) < 1e-8


def test_grad_check_full_contextualized_loss():
    rng = np.random.default_rng(0)
    data = Dataset(rng.standard_normal((10, 2)), rng.standard_normal((10, 3)), rng.standard_normal(10))
    lik = LikelihoodSpec("gaussian")
    enc = EncoderSpec("mlp", 2, lik.output_dim(3), hidden_layers=(5, 4), activation="tanh")
    reg = RegularizationSpec(alpha=0.3, mu_ratio=0.6, l1_ratio=0.4)
    store = _initial_store(data, enc, lik, seed=1)

    def loss(s):
        _, nll, pen = _loss_terms(s, enc, lik, reg, data.C, data.X, data.Y)
        return nll + pen

    assert grad_check(loss, store) < 1e-4


def test_nonfinite_loss_in_grad_check():
    store = ParamStore({"t": [[0.0]]})

    def loss(s):
        tape = Tape()
        return ad.log(tape.param(s, "t") + 1e-6)

    with pytest.raises(NumericError):
        grad_check(loss, store, eps=1e-3)


def test_nonfinite_results_raise():
    with pytest.raises(NumericError):
        value_of(ad.exp, [[1000.0]])
    with pytest.raises(NumericError):
        value_of(ad.log, [[-1.0]])


def test_backward_visits_in_reverse_recording_order():
    tape = Tape()
    x = tape.leaf([[0.5]])
    y = ad.exp(x)
    z = ad.square(y)
    loss = z.sum()
    visited = []
    for node in tape.nodes:
        if node._backward is not None:
            inner = node._backward

            def spy(g, _node=node, _inner=inner):
                visited.append(_node)
                return _inner(g)

            node._backward = spy
    tape.backward(loss)
    recorded = [n for n in tape.nodes if n._backward is not None]
    assert visited == recorded[::-1]


def test_gradients_zeroed_each_backward():
    store = ParamStore({"w": [[2.0]]})
    for _ in range(3):
        tape = Tape()
        w = tape.param(store, "w")
        tape.backward((w * w).sum())
    assert store.grads["w"][0, 0] == pytest.approx(4.0)


# --- every primitive against central differences -----------------------------------------

UNARY = {
    "exp": ad.exp,
    "square": ad.square,
    "abs": ad.absolute,
    "softplus": ad.softplus,
    "clamp": lambda v: ad.clamp(v, -1.0, 1.0),
    "sum_rows": ad.sum_rows,
    "mean": ad.mean,
    "total": ad.total,
    "cols": lambda v: ad.cols(v, 1, 3),
    "logmeanexp_rows": ad.logmeanexp_rows,
    "scale": lambda v: ad.scale(v, -2.5),
    "relu": lambda v: ad.activation(v, "relu"),
    "tanh": lambda v: ad.activation(v, "tanh"),
    "sigmoid": lambda v: ad.activation(v, "sigmoid"),
    "softmax": lambda v: ad.activation(v, "softmax"),
    "identity": lambda v: ad.activation(v, "identity"),
    "log": lambda v: ad.log(ad.square(v) + 0.5),
}
KINKED = {"abs": (0.0,), "relu": (0.0,), "clamp": (-1.0, 1.0)}


def _away_from_kinks(x, kinks, margin=1e-3):
    for k in kinks:
        close = np.abs(x - k) < margin
        x = np.where(close, k + np.sign(x - k + 1e-12) * margin * 2, x)
    return x


def _projected_loss(op, weights, names):
    def loss(s):
        tape = Tape()
        out = op(*[tape.param(s, n) for n in names])
        return ad.total(out * tape.const(weights(out.shape)))
    return loss


@settings(max_examples=15, deadline=None)
@given(seed=seeds, name=st.sampled_from(sorted(UNARY)))
def test_unary_primitive_gradients(seed, name):
    rng = np.random.default_rng(seed)
    x = _away_from_kinks(rng.uniform(-2, 2, (3, 4)), KINKED.get(name, ()))
    proj = rng.uniform(-1, 1, (3, 4))
    store = ParamStore({"x": x})
    loss = _projected_loss(UNARY[name], lambda shape: proj[:shape[0], :shape[1]], ["x"])
    assert grad_check(loss, store, eps=1e-5) < 1e-4


@settings(max_examples=15, deadline=None)
@given(seed=seeds, name=st.sampled_from(["add", "sub", "mul", "hcat", "add_row", "sub_row", "matmul"]))
def test_binary_primitive_gradients(seed, name):
    rng = np.random.default_rng(seed)
    a = rng.uniform(-2, 2, (3, 4))
    b = rng.uniform(-2, 2, (1, 4) if name.endswith("_row") else (4, 2) if name == "matmul" else (3, 4))
    op = {"add": ad.add, "sub": ad.sub, "mul": ad.mul, "hcat": lambda u, v: ad.hcat([u, v]),
          "add_row": ad.add, "sub_row": ad.sub, "matmul": ad.matmul}[name]
    proj = rng.uniform(-1, 1, (3, 8))
    store = ParamStore({"a": a, "b": b})
    loss = _projected_loss(op, lambda shape: proj[:shape[0], :shape[1]], ["a", "b"])
    assert grad_check(loss, store, eps=1e-5) < 1e-4
