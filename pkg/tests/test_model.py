import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import tiny_config, tiny_model_gradient_errors
from slimseiz.chansel import SelectionConfig
from slimseiz.errors import BudgetExceeded, ShapeMismatch
from slimseiz.model import (
    REFERENCE_PARAMETER_COUNT,
    ModelConfig,
    build_model,
    channel_sweep,
    checkpoint_arrays,
    evaluate,
    forward,
    loss_fn,
    parameter_count,
    predict,
    restore_checkpoint,
    train,
)
from slimseiz.nn import dump_arrays, functional as F, load_arrays
from slimseiz.pipeline import Holdout, KFold, SegmentDataset, make_split


def _toy_dataset(cfg, n=32, seed=0):
    """Two classes separated by a sinusoid on channel 0."""
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.standard_normal((n, cfg.in_channels, cfg.input_length)).astype(np.float32)
    t = np.arange(cfg.input_length)
    X[y == 1, 0] += 2 * np.sin(2 * np.pi * t / 8)
    return SegmentDataset(X, y, [f"C{i}" for i in range(cfg.in_channels)], 16.0)


# --- parameter budget --------------------------------------------------------------


def test_default_parameter_count():
    cfg = ModelConfig()
    front = 8 * 32 * 21 + 32
    res = 2 * (32 * 12 * 5 + 12 + 12 * 12 * 3 + 12 + 12 * 32 * 3 + 32)
    mamba = 2 * (64 * 32 + 64) + (64 * 4 + 64) + 64 * (4 + 2 * 8) + (64 * 4 + 64) + (64 * 8 + 64) + (32 * 64 + 32)
    head = 2 * 32 + 2
    assert front == 5408
    assert parameter_count(cfg) == front + res + mamba + head == 21_394
    assert build_model(cfg).count() == 21_394
    assert 21_394 <= 25_000 and abs(21_394 - REFERENCE_PARAMETER_COUNT) <= 0.2 * REFERENCE_PARAMETER_COUNT


@settings(max_examples=25, deadline=None)
@given(
    st.integers(1, 10), st.sampled_from(["mamba", "conv", "none"]), st.booleans(),
    st.integers(2, 16), st.integers(1, 8), st.integers(1, 4),
)
def test_closed_form_count_matches_instantiation(k, mixer, gate, trunk, inner, state):
    cfg = ModelConfig(in_channels=k, mixer=mixer, mamba_gate=gate, trunk_channels=trunk,
                      res_inner_channels=inner, ssm_state=state, mamba_inner=2 * trunk,
                      param_budget=10**9)
    assert build_model(cfg).count() == parameter_count(cfg)


def test_budget_enforced():
    with pytest.raises(BudgetExceeded):
        build_model(ModelConfig(trunk_channels=64))


def test_config_items_round_trip():
    cfg = ModelConfig(in_channels=4, mixer="conv", mamba_gate=False, lr=3e-4,
                      res_block_kernels=((7, 3, 3), (5, 5, 3)), pool_windows=(2, 8))
    assert ModelConfig.from_items(dict(cfg.to_items())) == cfg
    with pytest.raises(ValueError):
        ModelConfig(mixer="lstm")


# --- forward pass ----------------------------------------------------------------------


def test_init_is_seed_deterministic():
    a, b, c = build_model(ModelConfig(), 1), build_model(ModelConfig(), 1), build_model(ModelConfig(), 2)
    assert all(a[n].data.tobytes() == b[n].data.tobytes() for n in a.tensors)
    assert any(a[n].data.tobytes() != c[n].data.tobytes() for n in a.tensors)
    np.testing.assert_allclose(np.exp(a["mamba.ssm.A_log"].data[0]), np.arange(1, 9), rtol=1e-6)


def test_forward_batch_equivariance_and_shapes():
    cfg = tiny_config()
    params = build_model(cfg, 3)
    X = np.random.default_rng(0).standard_normal((6, 2, 64)).astype(np.float32)
    logits, emb = forward(params, X)
    assert logits.shape == (6, 2) and emb.shape == (6, 8)
    assert np.all(np.isfinite(logits.data))
    perm = np.array([3, 0, 5, 1, 4, 2])
    np.testing.assert_allclose(forward(params, X[perm])[0].data, logits.data[perm], atol=1e-5)
    dup = np.concatenate([X, X])
    np.testing.assert_allclose(forward(params, dup)[0].data[6:], logits.data, atol=1e-5)
    with pytest.raises(ShapeMismatch):
        forward(params, X[:, :, :32])


def test_default_model_forward_is_finite():
    params = build_model(ModelConfig())
    X = np.random.default_rng(1).standard_normal((2, 8, 1024)).astype(np.float32) * 50
    assert np.all(np.isfinite(forward(params, X)[0].data))


@pytest.mark.parametrize("mixer", ["conv", "none"])
def test_ablation_mixers_run(mixer):
    params = build_model(tiny_config(mixer=mixer))
    assert forward(params, np.zeros((3, 2, 64)))[0].shape == (3, 2)


def test_lambda_zero_is_plain_cross_entropy():
    cfg = tiny_config(loss_lambda=0.0)
    params = build_model(cfg)
    X = np.random.default_rng(2).standard_normal((8, 2, 64))
    y = np.array([0, 1] * 4)
    loss, logits = loss_fn(params, X, y)
    assert loss.item() == pytest.approx(F.cross_entropy(logits, y).item())
    with_supcon, _ = loss_fn(params, X, y, replace(cfg, loss_lambda=1.0))
    assert with_supcon.item() > loss.item()


# --- gradients -----------------------------------------------------------------------------


@pytest.mark.parametrize("dtype,tol", [("float64", 1e-4), ("float32", 1e-2)])
def test_tiny_model_gradients(dtype, tol):
    errors = tiny_model_gradient_errors(dtype)
    assert len(errors) == len(build_model(tiny_config()).tensors)
    assert max(errors.values()) < tol, errors


# --- training ---------------------------------------------------------------------------------


def test_tiny_model_overfits_small_set():
    cfg = tiny_config(epochs=200, lr=3e-3)
    ds = _toy_dataset(cfg)
    params = build_model(cfg)
    result = train(params, ds)
    assert np.mean(predict(params, ds.X) == ds.y) == 1.0
    assert result.losses[-1] < result.losses[0]


def test_training_is_deterministic_and_resumable():
    cfg = tiny_config(epochs=4)
    ds = _toy_dataset(cfg)
    full = train(build_model(cfg), ds)
    first = train(build_model(cfg), ds, epochs=2)
    blob = dump_arrays(checkpoint_arrays(first.params, first.optimizer, first.epochs_done))
    params, opt, epoch = restore_checkpoint(cfg, load_arrays(blob))
    assert epoch == 2
    rest = train(params, ds, optimizer=opt, start_epoch=epoch)
    assert rest.losses == pytest.approx(full.losses[2:], rel=1e-6)
    for name in params.tensors:
        np.testing.assert_allclose(params[name].data, full.params[name].data, rtol=1e-5, atol=1e-7)
    again = train(build_model(cfg), ds)
    assert again.losses == full.losses


def test_checkpoint_preserves_predictions():
    cfg = tiny_config(epochs=2)
    ds = _toy_dataset(cfg)
    trained = train(build_model(cfg), ds).params
    params, _, _ = restore_checkpoint(cfg, load_arrays(dump_arrays(checkpoint_arrays(trained))))
    np.testing.assert_array_equal(predict(params, ds.X), predict(trained, ds.X))


def test_training_needs_both_classes():
    cfg = tiny_config()
    ds = _toy_dataset(cfg)
    with pytest.raises(ValueError):
        train(build_model(cfg), ds.subset(np.where(ds.y == 0)[0]))


# --- evaluation harness ------------------------------------------------------------------------


def test_evaluate_with_stub_learners():
    cfg = tiny_config()
    ds = _toy_dataset(cfg, n=40)
    plan = make_split(len(ds), KFold(5), 0, labels=ds.y)
    perfect = evaluate(ds, plan, cfg, lambda tr, te, fold: te.y.copy())
    assert len(perfect.folds) == 5
    assert perfect.mean_accuracy == perfect.mean_sensitivity == perfect.mean_specificity == 1.0
    constant = evaluate(ds, plan, cfg, lambda tr, te, fold: np.ones(len(te), dtype=int))
    assert constant.mean_sensitivity == 1.0 and constant.mean_specificity == 0.0
    assert constant.mean_accuracy == pytest.approx(0.5)


def test_evaluate_never_trains_on_test_fold():
    cfg = tiny_config()
    ds = _toy_dataset(cfg, n=30)
    ds.source_time_s = np.arange(30.0)
    plan = make_split(len(ds), KFold(3), 1, labels=ds.y)

    def learner(tr, te, fold):
        assert not set(tr.source_time_s) & set(te.source_time_s)
        assert len(tr) + len(te) == 30
        return te.y.copy()

    evaluate(ds, plan, cfg, learner)


def test_evaluate_trains_real_model():
    cfg = tiny_config(epochs=30, lr=3e-3)
    ds = _toy_dataset(cfg, n=60)
    plan = make_split(len(ds), Holdout(0.25), 0, labels=ds.y)
    assert evaluate(ds, plan, cfg).mean_accuracy >= 0.8


def test_channel_sweep_nested_selections(small_recording):
    seen = []

    def make(k_cfg):
        def run(tr, te, fold):
            seen.append(k_cfg.in_channels)
            return te.y.copy()

        return run

    rows = channel_sweep(
        small_recording, ModelConfig(), k_values=(1, 2, 3),
        selection=SelectionConfig(m=2, seed=4), plan_kind=Holdout(0.2), fit_predict_for=make,
    )
    assert [r.k for r in rows] == [1, 2, 3, 4]
    for a, b in zip(rows, rows[1:]):
        assert a.channels == b.channels[: a.k]
    assert set(rows[1].channels) == {1, 3}
    assert seen == [1, 2, 3, 4]
    assert all(math.isclose(r.result.mean_accuracy, 1.0) for r in rows)
