import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hoseq.errors import DimensionMismatch, SingleClass
from hoseq.feature_pipeline import ClassWeights
from hoseq.seq_models import (
    Batch,
    ModelKind,
    PredictorParams,
    TrainConfig,
    attention_weights,
    encode,
    forward,
    forward_batch,
    grad_check,
    grid_search,
    gru_hidden_states,
    init_params,
    loss,
    loss_and_grad,
    predict,
    train,
    zero_params,
)

from helpers import learnable_task

KINDS = list(ModelKind)


@pytest.mark.parametrize("kind", [ModelKind.GRU, ModelKind.LSTM])
def test_zero_recurrent_weights_output_head_bias(kind):
    p = zero_params(kind, 3, 4, 6)
    p.tensors["head_b"][:] = (0.7, -1.3)
    p.tensors["head_W"][:] = np.random.default_rng(0).normal(size=(4, 2))
    X = np.random.default_rng(1).normal(size=(5, 6, 3))
    out, _ = forward_batch(p, X)
    assert np.all(encode(p, X) == 0.0)
    assert np.allclose(out, [0.7, -1.3], atol=0, rtol=0)
    if kind is ModelKind.GRU:
        assert np.all(gru_hidden_states(p, X) == 0.0)


def test_zero_query_key_gives_uniform_attention():
    p = init_params(ModelKind.TRANSFORMER, 3, 4, 6, np.random.default_rng(0))
    p.tensors["W_q"][:] = 0.0
    p.tensors["W_k"][:] = 0.0
    A = attention_weights(p, np.random.default_rng(1).normal(size=(2, 6, 3)))
    assert np.allclose(A, 1.0 / 6, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 4, 8]), st.integers(2, 8))
def test_attention_rows_sum_to_one(seed, h, L):
    rng = np.random.default_rng(seed)
    p = init_params(ModelKind.TRANSFORMER, 3, h, L, rng)
    A = attention_weights(p, rng.normal(0, 3, size=(4, L, 3)))
    assert np.max(np.abs(A.sum(axis=-1) - 1.0)) <= 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12), st.integers(2, 12))
def test_gru_states_bounded(seed, h, L):
    rng = np.random.default_rng(seed)
    p = init_params(ModelKind.GRU, 3, h, L, rng)
    for k in p.tensors:
        p.tensors[k] *= 5.0
    assert np.max(np.abs(gru_hidden_states(p, rng.normal(0, 10, size=(3, L, 3))))) <= 1.0


@pytest.mark.parametrize("kind", KINDS)
def test_inference_is_pure_and_probabilities_bounded(kind):
    rng = np.random.default_rng(2)
    p = init_params(kind, 3, 4, 5, rng)
    X = rng.normal(size=(7, 5, 3))
    before = {k: v.copy() for k, v in p.tensors.items()}
    a, b = predict(p, X), predict(p, X)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.all((a[1] > 0) & (a[1] < 1)) and np.all(a[0] >= 0)
    assert all(np.array_equal(before[k], p.tensors[k]) for k in before)
    assert forward(p, X[0]) == forward(p, X[0])


def test_dimension_mismatch():
    p = init_params(ModelKind.GRU, 3, 4, 5, np.random.default_rng(0))
    with pytest.raises(DimensionMismatch):
        forward_batch(p, np.zeros((1, 5, 4)))


def test_loss_examples():
    p = zero_params(ModelKind.GRU, 2, 3, 4)
    X = np.zeros((4, 4, 2))
    tos = np.full(4, 3.0)
    # perfect ToS through the head bias, classification switched off
    p.tensors["head_b"][0] = math.log1p(3.0)
    b = Batch(X, tos, np.array([True, False, True, False]))
    assert loss(b, p, ClassWeights.uniform(), lambda_pp=0.0) == pytest.approx(0.0, abs=1e-15)
    # logit 0 means p = 0.5, so each example pays ln 2
    assert loss(b, p, ClassWeights.uniform(), lambda_pp=1.0) == pytest.approx(math.log(2.0), abs=1e-12)


def test_param_round_trip():
    for kind in KINDS:
        p = init_params(kind, 3, 4, 5, np.random.default_rng(3))
        q = PredictorParams.from_bytes(p.to_bytes())
        assert q.kind is kind and all(np.array_equal(p.tensors[k], q.tensors[k]) for k in p.tensors)
    with pytest.raises(ValueError):
        PredictorParams.from_bytes(b"nope")


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", [1, 2])
def test_gradient_check(kind, seed):
    assert grad_check(kind, (4, 8, 6), seed) < 1e-4


def test_full_batch_order_independence():
    tr, va = learnable_task(64, 5, seq_len=4)
    cfg = TrainConfig(max_epochs=3, patience=5, batch_size=64, dropout_prob=0.0, hidden_dim=4)
    p1, _ = train(ModelKind.GRU, tr, va, cfg, shuffle=False)
    perm = np.random.default_rng(0).permutation(len(tr))
    p2, _ = train(ModelKind.GRU, tr.take(perm), va, cfg, shuffle=False)
    for k in p1.tensors:
        assert np.allclose(p1.tensors[k], p2.tensors[k], rtol=0, atol=1e-12)


def test_frozen_validation_stops_at_patience_plus_one():
    tr, va = learnable_task(40, 1, seq_len=4)
    cfg = TrainConfig(max_epochs=50, patience=4, hidden_dim=4)
    _, hist = train(ModelKind.GRU, tr, va, cfg, val_loss_fn=lambda p: 1.0)
    assert hist.stopped_epoch == cfg.patience + 1
    assert hist.stopped_epoch <= cfg.max_epochs


def test_training_is_deterministic_and_learns():
    tr, va = learnable_task(300, 2, seq_len=5)
    cfg = TrainConfig(max_epochs=25, patience=25, hidden_dim=8)
    p1, h1 = train(ModelKind.LSTM, tr, va, cfg)
    p2, h2 = train(ModelKind.LSTM, tr, va, cfg)
    assert p1.to_bytes() == p2.to_bytes()
    assert h1.epochs == h2.epochs
    assert h1.best_val_loss < h1.epochs[0][2]


def test_single_class_rejected():
    tr, va = learnable_task(40, 1, seq_len=4)
    tr = Batch(tr.X, tr.tos_s, np.zeros(len(tr), dtype=bool))
    with pytest.raises(SingleClass):
        train(ModelKind.GRU, tr, va, TrainConfig(max_epochs=1))


def test_train_config_validation():
    for bad in (dict(learning_rate=-1e-3), dict(patience=0), dict(dropout_prob=1.0), dict(max_epochs=0)):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def _grid_data(seq_len):
    return learnable_task(60, 4, seq_len=seq_len)


def test_grid_search_single_point():
    cfg = TrainConfig(max_epochs=2, patience=2, hidden_dim=4)
    res = grid_search(["gru"], {"seq_len": [4], "hidden_dim": [4], "learning_rate": [1e-3]}, _grid_data, cfg)
    assert len(res.rows) == 1 and res.best is res.rows[0]
    assert (res.best.point.seq_len, res.best.point.hidden_dim, res.best.point.learning_rate) == (4, 4, 1e-3)


def test_grid_search_cardinality():
    cfg = TrainConfig(max_epochs=1, patience=1)
    space = {"seq_len": [3, 4], "hidden_dim": [2, 4], "learning_rate": [1e-3, 3e-3]}
    res = grid_search(["gru", "transformer"], space, _grid_data, cfg)
    for kind in (ModelKind.GRU, ModelKind.TRANSFORMER):
        assert sum(r.point.kind is kind for r in res.rows) == 8
    assert all(r.status == "ok" for r in res.rows)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grid_search_isolates_failures():
    cfg = TrainConfig(max_epochs=3, patience=3, hidden_dim=4)
    # an absurd rate drives the weights to overflow
    res = grid_search(["gru"], {"seq_len": [4], "hidden_dim": [4], "learning_rate": [1e-3, 1e300]},
                      _grid_data, cfg)
    status = {r.point.learning_rate: r for r in res.rows}
    assert status[1e300].status == "failed" and "NonFiniteLoss" in status[1e300].error
    assert status[1e-3].status == "ok" and res.best is status[1e-3]


def test_loss_and_grad_matches_loss():
    tr, _ = learnable_task(20, 0, seq_len=4)
    p = init_params(ModelKind.TRANSFORMER, 3, 4, 4, np.random.default_rng(0))
    w = ClassWeights({0: 0.8, 1: 1.4})
    value, grads = loss_and_grad(p, tr, w, 0.7)
    assert value == pytest.approx(loss(tr, p, w, 0.7), rel=1e-14)
    assert set(grads) == set(p.tensors)
