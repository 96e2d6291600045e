from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ctxml.autodiff import ParamStore
from ctxml.data import Dataset
from ctxml.datagen import GeneratorSpec, gen_linear_vc
from ctxml.encoders import EncoderSpec
from ctxml.errors import ConfigError, DataError, NumericError, ShapeError
from ctxml.glm import LikelihoodSpec, RegularizationSpec
from ctxml.training import (AdamState, BootstrapEnsemble, TrainConfig, _initial_store, adam_step,
                            bootstrap_fit, default_encoder, fit, split)


def linear_vc(n=300, seed=0, noise=0.1):
    return gen_linear_vc(GeneratorSpec("linear_vc", n=n, m=2, p=2, noise=noise, seed=seed))


def linear_encoder(data, lik=LikelihoodSpec()):
    return EncoderSpec("linear", data.m, lik.output_dim(data.p))


FAST = TrainConfig(max_epochs=60, learning_rate=0.05, patience=10)


# --- split -----------------------------------------------------------------------------

def test_split_sizes():
    tr, va = split(10, 0.2, seed=0)
    assert (tr.size, va.size) == (8, 2)
    tr, va = split(2, 0.5, seed=0)
    assert (tr.size, va.size) == (1, 1)


def test_split_rejects_tiny():
    with pytest.raises(DataError):
        split(1, 0.2, 0)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(2, 500), frac=st.floats(0.01, 0.99), seed=st.integers(0, 10**6))
def test_split_disjoint_exhaustive_seeded(n, frac, seed):
    tr, va = split(n, frac, seed)
    assert np.array_equal(np.sort(np.concatenate([tr, va])), np.arange(n))
    assert 1 <= va.size <= n - 1
    again = split(n, frac, seed)
    assert np.array_equal(tr, again[0]) and np.array_equal(va, again[1])


# --- adam --------------------------------------------------------------------------------

def test_adam_zero_gradient_leaves_params():
    store = ParamStore({"w": [[1.0, -2.0]]})
    adam_step(store, AdamState(), 0.1)
    assert np.array_equal(store["w"], [[1.0, -2.0]])


def test_adam_first_step_is_lr_sign():
    store = ParamStore({"w": [[1.0, -2.0, 0.5]]})
    store.grads["w"] = np.array([[3.0, -0.01, 200.0]])
    adam_step(store, AdamState(), 0.1)
    assert np.allclose(store["w"] - [[1.0, -2.0, 0.5]], [[-0.1, 0.1, -0.1]], atol=1e-6)


def test_adam_scalar_descent():
    store = ParamStore({"t": [[0.0]]})
    state = AdamState()
    for _ in range(100):
        store.grads["t"] = 2.0 * (store["t"] - 3.0)
        adam_step(store, state, 0.1)
    assert abs(store["t"][0, 0] - 3.0) < 0.05


def test_adam_names_nonfinite_parameter():
    store = ParamStore({"good": [[1.0]], "bad": [[1.0]]})
    store.grads["bad"] = np.array([[np.nan]])
    with pytest.raises(NumericError, match="bad"):
        adam_step(store, AdamState(), 0.1)


# --- configuration ---------------------------------------------------------------------

@pytest.mark.parametrize("kwargs", [
    dict(learning_rate=0.0), dict(val_split=1.0), dict(val_split=0.0), dict(context_dropout=1.0),
    dict(n_bootstraps=0), dict(max_epochs=-1), dict(patience=0), dict(batch_size=0),
])
def test_train_config_ranges(kwargs):
    with pytest.raises(ConfigError):
        TrainConfig(**kwargs)


def test_fit_checks_dimensions():
    data, _ = linear_vc(50)
    with pytest.raises(ShapeError):
        fit(data, EncoderSpec("linear", 3, 3))
    with pytest.raises(ShapeError):
        fit(data, EncoderSpec("linear", 2, 4))


def test_bernoulli_needs_binary_outcomes():
    data, _ = linear_vc(50)
    lik = LikelihoodSpec("bernoulli")
    with pytest.raises(DataError):
        fit(data, linear_encoder(data, lik), lik)


# --- fit ---------------------------------------------------------------------------------

def test_zero_epochs_returns_initialization():
    data, _ = linear_vc(80)
    enc = linear_encoder(data)
    model = fit(data, enc, config=TrainConfig(max_epochs=0, seed=3))
    tr, _ = split(data.n, 0.2, 3)
    init = _initial_store(data.subset(tr), enc, LikelihoodSpec(), 3)
    for name in init.names():
        assert np.array_equal(model.params[name], init[name])
    assert model.report.stopping_epoch == 0


def test_initial_log_variance_is_training_variance():
    data, _ = linear_vc(100)
    model = fit(data, linear_encoder(data), config=TrainConfig(max_epochs=0))
    tr, _ = split(data.n, 0.2, 0)
    assert model.log_variance == pytest.approx(np.log(np.var(data.Y[tr])))


def test_constant_context_matches_ols():
    rng = np.random.default_rng(0)
    n = 500
    X = rng.standard_normal((n, 2))
    Y = X @ [1.5, -0.7] + 0.3 + 0.1 * rng.standard_normal(n)
    data = Dataset(np.ones((n, 1)), X, Y)
    model = fit(data, linear_encoder(data), config=TrainConfig(max_epochs=2000, learning_rate=0.05, patience=50))
    design = np.column_stack([X, np.ones(n)])
    ols = np.linalg.lstsq(design, Y, rcond=None)[0]
    pred = model.predict(data.C[:1], data.X[:1])
    est = np.append(pred.coefficients[0], pred.offsets[0])
    assert np.max(np.abs(est - ols)) < 2e-2


def test_fit_is_bit_reproducible():
    data, _ = linear_vc(120)
    enc = EncoderSpec("mlp", 2, 3, hidden_layers=(8,))
    cfg = replace(FAST, context_dropout=0.2)
    a, b = fit(data, enc, config=cfg), fit(data, enc, config=cfg)
    for name in a.params:
        assert np.array_equal(a.params[name], b.params[name])
    assert a.report.train_loss == b.report.train_loss


def test_best_so_far_training_loss_monotone():
    data, _ = linear_vc(200)
    model = fit(data, linear_encoder(data), config=FAST)
    best = np.minimum.accumulate([model.report.initial_train_loss, *model.report.train_loss])
    assert np.all(np.diff(best) <= 1e-6)


def test_early_stopping_restores_best_validation():
    data, _ = linear_vc(60, noise=1.0)
    enc = EncoderSpec("mlp", 2, 3, hidden_layers=(32, 32))
    model = fit(data, enc, config=TrainConfig(max_epochs=400, learning_rate=0.02, patience=5))
    r = model.report
    assert r.stopping_epoch < 400
    vals = [r.initial_val_loss, *r.val_loss]
    assert r.best_epoch == int(np.argmin(vals))
    _, va = split(data.n, 0.2, 0)
    pred = model.predict(data.C[va], data.X[va])
    resid = data.Y[va] - pred.prediction
    lv = model.log_variance
    val_nll = np.mean(0.5 * np.log(2 * np.pi) + 0.5 * lv + 0.5 * resid ** 2 * np.exp(-lv))
    assert val_nll == pytest.approx(min(vals), abs=1e-10)


def test_single_sample_fits_without_validation():
    data = Dataset(np.ones((1, 1)), np.ones((1, 1)), np.array([2.0]))
    model = fit(data, config=TrainConfig(max_epochs=5))
    assert model.report.stopping_epoch == 5
    assert model.report.initial_val_loss is None


def test_divergence_reports_epoch():
    data, _ = linear_vc(50)
    with pytest.raises(NumericError, match="epoch 1"):
        fit(data, linear_encoder(data), config=TrainConfig(max_epochs=3, learning_rate=1e155))
    bad = Dataset(data.C, data.X * 1e200, data.Y)
    with pytest.raises(NumericError, match="epoch 0"):
        fit(bad, linear_encoder(bad), config=TrainConfig(max_epochs=3))


def test_minibatching_above_full_batch_limit():
    data, _ = linear_vc(1400)
    model = fit(data, linear_encoder(data), config=TrainConfig(max_epochs=2))
    assert model.report.stopping_epoch == 2


def test_alpha_shrinks_coefficients():
    data, _ = linear_vc(300)
    norms = []
    for alpha in (0.0, 0.1, 1.0):
        model = fit(data, linear_encoder(data), regularization=RegularizationSpec(alpha, 1.0, 0.0),
                    config=TrainConfig(max_epochs=300, learning_rate=0.05, patience=300))
        norms.append(np.mean(np.linalg.norm(model.predict_dataset(data).coefficients, axis=1)))
    assert norms[0] >= norms[1] >= norms[2]


# --- predict -------------------------------------------------------------------------------

def test_linear_encoder_prediction_is_analytic():
    data, _ = linear_vc(40)
    model = fit(data, linear_encoder(data), config=TrainConfig(max_epochs=0))
    W, b = model.params["enc.W0"], model.params["enc.b0"][0]
    theta = data.C @ W + b
    expected = np.sum(data.X * theta[:, :2], axis=1) + theta[:, 2]
    assert np.allclose(model.predict_dataset(data).prediction, expected, atol=1e-12)


def test_predict_column_mismatch():
    data, _ = linear_vc(40)
    model = fit(data, linear_encoder(data), config=TrainConfig(max_epochs=0))
    with pytest.raises(DataError, match="expected 2"):
        model.predict(np.ones((3, 3)), data.X[:3])


def test_fitted_params_are_read_only():
    data, _ = linear_vc(40)
    model = fit(data, linear_encoder(data), config=TrainConfig(max_epochs=0))
    with pytest.raises(ValueError):
        model.params["enc.W0"][0, 0] = 1.0


@pytest.mark.parametrize("family", ["hetero_gaussian", "mixture_gaussian", "bernoulli"])
def test_other_families_train(family):
    data, _ = linear_vc(120)
    if family == "bernoulli":
        data = Dataset(data.C, data.X, (data.Y > 0).astype(float))
    lik = LikelihoodSpec(family)
    model = fit(data, default_encoder(data, lik, hidden_layers=(8,)), lik, config=FAST)
    assert model.report.final_train_nll < model.report.initial_train_nll
    pred = model.predict_dataset(data)
    assert np.all(np.isfinite(pred.prediction))
    if family == "bernoulli":
        assert np.all((pred.prediction >= 0) & (pred.prediction <= 1))


# --- bootstrap ----------------------------------------------------------------------------

def test_bootstrap_without_resampling_equals_fit():
    data, _ = linear_vc(80)
    enc = linear_encoder(data)
    ens = bootstrap_fit(data, enc, config=FAST, resample=False)
    single = fit(data, enc, config=FAST)
    for name in single.params:
        assert np.array_equal(ens.members[0].params[name], single.params[name])


def test_bootstrap_deterministic_and_seeded_per_trajectory():
    data, _ = linear_vc(80)
    cfg = replace(FAST, n_bootstraps=3, seed=7, threads=3)
    a = bootstrap_fit(data, linear_encoder(data), config=cfg)
    b = bootstrap_fit(data, linear_encoder(data), config=replace(cfg, threads=1))
    assert [m.config.seed for m in a.members] == [7, 8, 9]
    for ma, mb, ia, ib in zip(a.members, b.members, a.indices, b.indices):
        assert np.array_equal(ia, ib)
        assert np.array_equal(ia, np.random.default_rng(ma.config.seed).integers(0, 80, 80))
        for name in ma.params:
            assert np.array_equal(ma.params[name], mb.params[name])


def test_identical_members_have_zero_width_intervals():
    data, _ = linear_vc(60)
    model = fit(data, linear_encoder(data), config=FAST)
    ens = BootstrapEnsemble((model, model, model), (np.arange(60),) * 3)
    pred = ens.predict(data.C, data.X)
    for lo, hi in pred.intervals.values():
        assert np.array_equal(lo, hi)
    assert np.allclose(pred.prediction, model.predict_dataset(data).prediction)


def test_ensemble_members_must_match():
    data, _ = linear_vc(60)
    a = fit(data, linear_encoder(data), config=TrainConfig(max_epochs=0))
    b = fit(data, EncoderSpec("mlp", 2, 3, hidden_layers=(4,)), config=TrainConfig(max_epochs=0))
    with pytest.raises(ConfigError):
        BootstrapEnsemble((a, b), (np.arange(60),) * 2)
