import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxml.autodiff import ParamStore, Tape, grad_check
from ctxml.encoders import SampleModel
from ctxml.errors import ConfigError, DataError
from ctxml.glm import (LikelihoodSpec, RegularizationSpec, batch_nll, batch_penalty, nll, penalty,
                       predict_mean, sample_models, theta_row)

seeds = st.integers(0, 2**31 - 1)
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


def test_predict_mean_zero_x_is_offset():
    assert predict_mean([0.0, 0.0], SampleModel([2.0, -1.0], 0.75), "gaussian") == 0.75


def test_bernoulli_predict_half():
    assert predict_mean([1.0], SampleModel([2.0], -2.0), "bernoulli") == 0.5


def test_mixture_symmetric_heads_mean_zero():
    lik = LikelihoodSpec("mixture_gaussian", 2)
    model = SampleModel([0.0], 0.0, aux=[0.0, -1.0, 0.0, 1.0])
    assert predict_mean([3.0], model, lik) == 0.0


def test_hetero_mean_ignores_variance():
    model = SampleModel([1.0, 2.0], 0.5, aux=[3.0])
    assert predict_mean([1.0, 1.0], model, "hetero_gaussian") == 3.5


def test_family_aux_mismatch():
    with pytest.raises(ConfigError):
        predict_mean([1.0], SampleModel([1.0], 0.0), "hetero_gaussian")
    with pytest.raises(ConfigError):
        predict_mean([1.0], SampleModel([1.0], 0.0, aux=[1.0]), LikelihoodSpec("mixture_gaussian", 2))
    with pytest.raises(ConfigError):
        LikelihoodSpec("mixture_gaussian", 1)
    with pytest.raises(ConfigError):
        LikelihoodSpec("poisson")


def test_gaussian_nll_examples():
    model = SampleModel([1.0], 0.0)
    assert nll(2.0, [2.0], model, "gaussian") == pytest.approx(0.918939, abs=1e-6)
    assert nll(3.0, [2.0], model, "gaussian") == pytest.approx(1.418939, abs=1e-6)


def test_mixture_identical_heads_equal_gaussian():
    lik = LikelihoodSpec("mixture_gaussian", 3)
    single = SampleModel([0.4, -1.1], 0.3)
    mix = SampleModel([0.4, -1.1], 0.3, aux=np.tile([0.4, -1.1, 0.3], 3))
    for y in (-2.0, 0.1, 5.0):
        assert nll(y, [1.0, 2.0], mix, lik, 0.7) == pytest.approx(nll(y, [1.0, 2.0], single, "gaussian", 0.7),
                                                                  abs=1e-12)


def test_bernoulli_nll_example():
    model = SampleModel([1.0], math.log(3.0) - 1.0)
    assert nll(1.0, [1.0], model, "bernoulli") == pytest.approx(0.287682, abs=1e-6)


def test_bernoulli_rejects_non_binary():
    with pytest.raises(DataError):
        nll(0.5, [1.0], SampleModel([1.0], 0.0), "bernoulli")


def test_hetero_uses_log_variance():
    model = SampleModel([0.0], 0.0, aux=[math.log(4.0)])
    expected = HALF_LOG_2PI + 0.5 * math.log(4.0) + 0.5 * 1.0 / 4.0
    assert nll(1.0, [0.0], model, "hetero_gaussian") == pytest.approx(expected, abs=1e-12)


def test_log_variance_is_clamped():
    low = SampleModel([0.0], 0.0, aux=[-50.0])
    clamp = SampleModel([0.0], 0.0, aux=[-10.0])
    assert nll(0.0, [0.0], low, "hetero_gaussian") == nll(0.0, [0.0], clamp, "hetero_gaussian")


def test_penalty_examples():
    models = [SampleModel([3.0, -4.0], 0.0)]
    assert penalty(models, RegularizationSpec(alpha=0.0)) == 0.0
    assert penalty(models, RegularizationSpec(1.0, 1.0, 1.0)) == pytest.approx(7.0, abs=1e-12)
    assert penalty(models, RegularizationSpec(1.0, 1.0, 0.0)) == pytest.approx(12.5, abs=1e-12)


def test_penalty_averages_over_batch_and_splits_offsets():
    models = [SampleModel([1.0], 2.0), SampleModel([-3.0], 0.0)]
    reg = RegularizationSpec(alpha=2.0, mu_ratio=0.25, l1_ratio=1.0)
    expected = 2.0 * np.mean([0.25 * 1 + 0.75 * 2, 0.25 * 3 + 0.75 * 0])
    assert penalty(models, reg) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("kwargs", [dict(alpha=-1.0), dict(mu_ratio=1.5), dict(l1_ratio=-0.1)])
def test_regularization_ranges(kwargs):
    with pytest.raises(ConfigError):
        RegularizationSpec(**kwargs)


@pytest.mark.parametrize("family", ["gaussian", "hetero_gaussian"])
def test_nll_minimized_at_y(family):
    aux = [0.3] if family == "hetero_gaussian" else None
    grid = np.linspace(-3, 5, 801)
    vals = [nll(1.0, [1.0], SampleModel([1.0], mu - 1.0, aux=aux), family) for mu in grid]
    assert grid[int(np.argmin(vals))] == pytest.approx(1.0, abs=1e-9)


def _random_model(rng, family, p):
    lik = LikelihoodSpec(family, 3) if family == "mixture_gaussian" else LikelihoodSpec(family)
    theta = rng.uniform(-1, 1, (1, lik.output_dim(p)))
    c, o, aux = sample_models(theta, p, lik)
    return lik, SampleModel(c[0], o[0], None if aux is None else aux[0])


@settings(max_examples=20, deadline=None)
@given(seed=seeds, family=st.sampled_from(["gaussian", "hetero_gaussian", "mixture_gaussian", "bernoulli"]))
def test_density_normalizes(seed, family):
    rng = np.random.default_rng(seed)
    lik, model = _random_model(rng, family, 2)
    x = rng.uniform(-1, 1, 2)
    lv = float(rng.uniform(-1, 1))
    if family == "bernoulli":
        total = sum(math.exp(-nll(y, x, model, lik)) for y in (0.0, 1.0))
    else:
        grid = np.linspace(-25, 25, 10001)
        tape = Tape()
        theta = tape.const(np.tile(theta_row(model, lik), (grid.size, 1)))
        X = tape.const(np.tile(x, (grid.size, 1)))
        logvar = tape.const(lv) if lik.has_global_logvar else None
        dens = np.exp(-batch_nll(theta, X, tape.const(grid[:, None]), lik, logvar).value[:, 0])
        assert dens[0] == pytest.approx(math.exp(-nll(grid[0], x, model, lik, lv)), abs=1e-15)
        total = np.trapezoid(dens, grid)
    assert abs(total - 1.0) < 1e-3


@settings(max_examples=30, deadline=None)
@given(seed=seeds, alpha=st.floats(0, 3), mu=st.floats(0, 1), l1=st.floats(0, 1))
def test_penalty_convex(seed, alpha, mu, l1):
    rng = np.random.default_rng(seed)
    reg = RegularizationSpec(alpha, mu, l1)
    a = [SampleModel(rng.normal(size=3), rng.normal()) for _ in range(4)]
    b = [SampleModel(rng.normal(size=3), rng.normal()) for _ in range(4)]
    mid = [SampleModel(0.5 * (u.coefficients + v.coefficients), 0.5 * (u.offset + v.offset))
           for u, v in zip(a, b)]
    assert penalty(mid, reg) <= 0.5 * (penalty(a, reg) + penalty(b, reg)) + 1e-12


def test_theta_row_round_trip():
    lik = LikelihoodSpec("hetero_gaussian")
    theta = np.array([[0.1, 0.2, 0.3, 0.4]])
    c, o, aux = sample_models(theta, 2, lik)
    assert np.array_equal(theta_row(SampleModel(c[0], o[0], aux[0]), lik), theta[0])


@pytest.mark.parametrize("family", ["gaussian", "hetero_gaussian", "mixture_gaussian", "bernoulli"])
@pytest.mark.parametrize("l1", [0.0, 0.5])
def test_nll_and_penalty_gradients(family, l1):
    rng = np.random.default_rng(4)
    lik = LikelihoodSpec(family, 2) if family == "mixture_gaussian" else LikelihoodSpec(family)
    n, p = 6, 3
    X = rng.standard_normal((n, p))
    Y = (rng.uniform(size=(n, 1)) < 0.5).astype(float) if family == "bernoulli" else rng.standard_normal((n, 1))
    theta = rng.uniform(-1, 1, (n, lik.output_dim(p)))
    # keep away from the l1 kink at zero
    theta = np.where(np.abs(theta) < 0.05, 0.1, theta)
    store = ParamStore({"theta": theta, "lv": [[0.2]]})
    reg = RegularizationSpec(0.7, 0.4, l1)

    def loss(s):
        tape = Tape()
        t = tape.param(s, "theta")
        lv = tape.param(s, "lv") if lik.has_global_logvar else None
        return batch_nll(t, tape.const(X), tape.const(Y), lik, lv).mean() + batch_penalty(t, p, lik, reg)

    names = ["theta", "lv"] if lik.has_global_logvar else ["theta"]
    assert grad_check(loss, store, names=names) < 1e-4
