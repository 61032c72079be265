"""LSTM aggregation and the logistic head."""

import numpy as np
import pytest

from chunkwise.numeric import Tensor, grad_check, ops
from chunkwise.numeric.tensor import ShapeMismatch
from chunkwise.recurrence import (Prediction, RecurrenceConfig, classify,
                                  init_recurrence_params, logit_of,
                                  pool_hidden, run_sequence)


def make(input_width=12, hidden=6, bidirectional=False, seed=0, dtype=np.float64):
    cfg = RecurrenceConfig(input_width=input_width, hidden_width=hidden,
                           bidirectional=bidirectional)
    params = init_recurrence_params(cfg, np.random.default_rng(seed), dtype=dtype)
    return cfg, params


def test_single_step_final_equals_sequence_output():
    cfg, params = make()
    x = Tensor(np.random.default_rng(1).normal(size=(1, 12)))
    states, final = run_sequence(x, params, cfg)
    assert states.shape == (1, 6)
    np.testing.assert_array_equal(states.data[0], final.data)


def test_zero_parameters_zero_input_fixed_point():
    cfg, params = make()
    for p in params.values():
        p.data = np.zeros_like(p.data)
    states, final = run_sequence(Tensor(np.zeros((4, 12))), params, cfg)
    np.testing.assert_array_equal(final.data, np.zeros(6))
    np.testing.assert_array_equal(states.data, np.zeros((4, 6)))


def test_order_sensitivity():
    cfg, params = make()
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5, 12))
    _, fwd = run_sequence(Tensor(x), params, cfg)
    _, rev = run_sequence(Tensor(x[::-1].copy()), params, cfg)
    assert not np.allclose(fwd.data, rev.data)


def test_hidden_states_strictly_inside_unit_interval():
    cfg, params = make()
    rng = np.random.default_rng(3)
    states, final = run_sequence(Tensor(rng.normal(scale=10, size=(30, 12))),
                                 params, cfg)
    assert np.abs(states.data).max() < 1.0
    assert np.abs(final.data).max() < 1.0


def test_width_mismatch_rejected():
    cfg, params = make()
    with pytest.raises(ShapeMismatch, match="run_sequence"):
        run_sequence(Tensor(np.zeros((3, 11))), params, cfg)


def test_bidirectional_concatenates_directions():
    cfg, params = make(bidirectional=True)
    rng = np.random.default_rng(4)
    states, final = run_sequence(Tensor(rng.normal(size=(3, 12))), params, cfg)
    assert states.shape == (3, 12)
    assert final.shape == (12,)
    # forward half of final comes from the last row, backward from the first
    np.testing.assert_array_equal(final.data[:6], states.data[-1, :6])
    np.testing.assert_array_equal(final.data[6:], states.data[0, 6:])


def test_classify_zero_weights_gives_half():
    cfg, params = make()
    params["cls.w"].data = np.zeros_like(params["cls.w"].data)
    params["cls.b"].data = np.zeros_like(params["cls.b"].data)
    pred = classify(Tensor(np.random.default_rng(5).normal(size=6)), params)
    assert pred.prob == 0.5
    assert pred.label == 1  # threshold is inclusive


def test_classify_saturates_to_one():
    cfg, params = make()
    params["cls.b"].data = np.array([50.0])
    params["cls.w"].data = np.zeros_like(params["cls.w"].data)
    pred = classify(Tensor(np.zeros(6)), params)
    assert pred.prob > 1 - 1e-9
    assert pred.label == 1


def test_trained_probability_strictly_inside_unit_interval():
    cfg, params = make(seed=9)
    rng = np.random.default_rng(6)
    _, final = run_sequence(Tensor(rng.normal(size=(4, 12))), params, cfg)
    pred = classify(final, params)
    assert 0.0 < pred.prob < 1.0


def test_logistic_symmetry_negated_classifier():
    cfg, params = make(seed=7)
    h = Tensor(np.random.default_rng(8).normal(size=6))
    p = classify(h, params).prob
    params["cls.w"].data = -params["cls.w"].data
    params["cls.b"].data = -params["cls.b"].data
    q = classify(h, params).prob
    assert abs((p + q) - 1.0) < 1e-12


def test_prediction_validates_probability():
    with pytest.raises(Exception):
        Prediction(prob=float("nan"), label=0)


def test_lstm_cell_gradients():
    cfg, params = make(input_width=6, hidden=4)
    rng = np.random.default_rng(10)
    embs = Tensor(rng.normal(size=(3, 6)), requires_grad=True)
    tensors = [embs] + list(params.values())

    def f(*ps):
        _, final = run_sequence(embs, params, cfg)
        return ops.tsum(ops.mul(final, final))

    assert grad_check(f, tensors, step=1e-5) < 1e-4


def test_pool_hidden_variants():
    cfg, params = make()
    rng = np.random.default_rng(11)
    states, final = run_sequence(Tensor(rng.normal(size=(5, 12))), params, cfg)
    np.testing.assert_array_equal(pool_hidden(states, final, "final").data, final.data)
    np.testing.assert_allclose(pool_hidden(states, final, "mean").data,
                               states.data.mean(axis=0), atol=1e-12)
    np.testing.assert_allclose(pool_hidden(states, final, "max").data,
                               states.data.max(axis=0), atol=1e-12)


def test_determinism_same_seed_same_outputs():
    cfg1, params1 = make(seed=21)
    cfg2, params2 = make(seed=21)
    x = np.random.default_rng(12).normal(size=(4, 12))
    _, f1 = run_sequence(Tensor(x), params1, cfg1)
    _, f2 = run_sequence(Tensor(x.copy()), params2, cfg2)
    np.testing.assert_array_equal(f1.data, f2.data)
