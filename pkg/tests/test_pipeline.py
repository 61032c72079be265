"""Orchestration: pass planning, prediction, scheduling, training."""

import math
from dataclasses import replace

import numpy as np
import pytest

from chunkwise.chunking import TokenizedDocument, UNK_ID, chunk_count
from chunkwise.numeric import grad_check, ops
from chunkwise.pipeline import (ModelState, PipelineConfig, PipelineError,
                                TrainConfig, default_trainable, document_logit,
                                init_model, one_cycle_lr, plan_passes,
                                predict_document, train)


def tiny_config(**over):
    base = dict(vocab_size=50, chunk_size=8, overlap=2, max_chunks_per_pass=3,
                dim=16, n_layers=4, n_heads=4, ff_mult=2, hidden_width=10,
                seed=11, dtype="float32")
    base.update(over)
    return PipelineConfig(**base)


def random_doc(rng, k, vocab=50, label=None):
    return TokenizedDocument(f"doc{k}", rng.integers(4, vocab, size=k), label=label)


# -------------------------------------------------------------- plan_passes

@pytest.mark.parametrize("n,max_c,expected", [
    (15, 15, [15]),
    (16, 15, [15, 1]),
    (37, 15, [15, 15, 7]),
    (1, 15, [1]),
    (5, 1, [1, 1, 1, 1, 1]),
])
def test_plan_passes(n, max_c, expected):
    assert plan_passes(n, max_c) == expected


def test_plan_passes_rejects_bad_inputs():
    with pytest.raises(PipelineError):
        plan_passes(0, 15)
    with pytest.raises(PipelineError):
        plan_passes(3, 0)


# --------------------------------------------------------- predict_document

def test_short_document_single_pass_single_chunk():
    cfg = tiny_config()
    state = init_model(cfg)
    doc = random_doc(np.random.default_rng(0), k=5)
    pred = predict_document(doc, state)
    assert 0.0 <= pred.prob <= 1.0
    assert state.counters["encoder_passes"] == 1


def test_prediction_independent_of_pass_size():
    rng = np.random.default_rng(1)
    doc = random_doc(rng, k=70)
    probs = []
    for max_c in (1, 3, 15):
        state = init_model(tiny_config(max_chunks_per_pass=max_c))
        probs.append(predict_document(doc, state).prob)
    assert abs(probs[0] - probs[1]) < 1e-6
    assert abs(probs[0] - probs[2]) < 1e-6


def test_long_document_never_truncated():
    """20k tokens at chunk size 510: 40 chunks, 3 passes, full coverage."""
    cfg = PipelineConfig(vocab_size=50, chunk_size=510, overlap=0,
                         max_chunks_per_pass=15, dim=8, n_layers=4, n_heads=2,
                         ff_mult=2, hidden_width=8, seed=0, dtype="float32")
    state = init_model(cfg)
    doc = random_doc(np.random.default_rng(2), k=20_000)
    assert chunk_count(doc.length, 510, 0) == 40
    pred = predict_document(doc, state)
    assert state.counters["encoder_passes"] == 3
    assert 0.0 <= pred.prob <= 1.0


def test_every_token_position_can_move_the_probability():
    """Flipping any single token to UNK changes the prediction, including
    the very last position: nothing is dropped."""
    cfg = tiny_config()
    state = init_model(cfg)
    rng = np.random.default_rng(3)
    k = 61
    doc = random_doc(rng, k=k)
    base = predict_document(doc, state).prob
    for position in (0, k // 2, k - 1):
        mutated = doc.tokens.copy()
        mutated[position] = UNK_ID
        flipped = TokenizedDocument("flip", mutated)
        assert abs(predict_document(flipped, state).prob - base) > 0


# ------------------------------------------------------------ one_cycle_lr

def test_one_cycle_endpoints_and_peak():
    cfg = TrainConfig(max_lr=0.1, pct_start=0.3, div_factor=25,
                      final_div_factor=1e4)
    total = 1000
    peak = int(0.3 * total)
    assert one_cycle_lr(0, cfg, total) == pytest.approx(0.1 / 25)
    assert one_cycle_lr(peak, cfg, total) == pytest.approx(0.1)
    assert one_cycle_lr(total - 1, cfg, total) == pytest.approx(0.1 / 25 / 1e4)


def test_one_cycle_monotone_warmup_then_anneal():
    rng = np.random.default_rng(4)
    for _ in range(100):
        cfg = TrainConfig(max_lr=float(rng.uniform(1e-4, 1.0)),
                          pct_start=0.3,
                          div_factor=float(rng.uniform(2, 100)),
                          final_div_factor=float(rng.uniform(10, 1e5)))
        total = int(rng.integers(10, 400))
        peak = int(0.3 * total)
        lrs = [one_cycle_lr(s, cfg, total) for s in range(total)]
        for s in range(1, peak + 1):
            assert lrs[s] >= lrs[s - 1] - 1e-15
        for s in range(peak + 1, total):
            assert lrs[s] <= lrs[s - 1] + 1e-15
        assert max(lrs) == pytest.approx(cfg.max_lr)


def test_one_cycle_rejects_out_of_range_step():
    cfg = TrainConfig()
    with pytest.raises(PipelineError, match="outside"):
        one_cycle_lr(10, cfg, 10)
    with pytest.raises(PipelineError, match="outside"):
        one_cycle_lr(-1, cfg, 10)


# -------------------------------------------------------------------- train

def make_corpus(rng, n, vocab=50, k_range=(5, 30)):
    return [TokenizedDocument(f"c{i}", rng.integers(4, vocab,
                                                    size=int(rng.integers(*k_range))),
                              label=int(rng.random() < 0.5)) for i in range(n)]


def test_frozen_parameters_bit_identical_after_training():
    cfg = tiny_config()
    state = init_model(cfg)
    frozen_before = {n: p.data.copy() for n, p in state.frozen_params().items()}
    trainable_before = {n: p.data.copy() for n, p in state.trainable_params().items()}
    corpus = make_corpus(np.random.default_rng(5), 6)
    train(corpus, state, TrainConfig(max_lr=1e-3))
    for name, before in frozen_before.items():
        assert np.array_equal(state.params[name].data, before), name
    moved = [n for n, before in trainable_before.items()
             if not np.array_equal(state.params[n].data, before)]
    assert moved  # training actually updates the trainable set


def test_default_trainable_is_last_layer_rnn_classifier():
    cfg = tiny_config()
    groups = default_trainable(cfg)
    assert groups == ("enc3.", "rnn.", "cls.")
    state = init_model(cfg)
    names = set(state.trainable_params())
    assert all(n.startswith(groups) for n in names)
    assert not any(n.startswith(("enc0.", "enc1.", "enc2.", "emb.")) for n in names)


def test_single_document_single_step_loss_trace():
    cfg = tiny_config()
    state = init_model(cfg)
    corpus = make_corpus(np.random.default_rng(6), 1)
    _, losses = train(corpus, state, TrainConfig())
    assert len(losses) == 1


def test_unlabeled_document_rejected_before_training():
    cfg = tiny_config()
    state = init_model(cfg)
    corpus = make_corpus(np.random.default_rng(7), 3)
    corpus.append(TokenizedDocument("u", np.array([5, 6, 7])))
    before = {n: p.data.copy() for n, p in state.params.items()}
    with pytest.raises(PipelineError, match="unlabeled"):
        train(corpus, state, TrainConfig())
    for name, data in before.items():
        assert np.array_equal(state.params[name].data, data)


def test_empty_corpus_rejected():
    state = init_model(tiny_config())
    with pytest.raises(PipelineError, match="empty"):
        train([], state, TrainConfig())


def test_loss_decreases_on_separable_corpus():
    """Planted-token corpus: mean loss over the last quarter of the epoch
    beats the first quarter."""
    rng = np.random.default_rng(8)
    corpus = []
    for i in range(120):
        label = int(rng.random() < 0.5)
        tokens = rng.integers(6, 40, size=24)
        tokens[rng.integers(0, 24, size=6)] = 4 if label else 5
        corpus.append(TokenizedDocument(f"s{i}", tokens, label=label))
    state = init_model(tiny_config(overlap=0))
    _, losses = train(corpus, state, TrainConfig(max_lr=5e-3, shuffle_seed=1))
    q = len(losses) // 4
    assert np.mean(losses[-q:]) < np.mean(losses[:q])


def test_update_magnitude_linear_in_learning_rate():
    """With identical state and gradients, a doubled LR doubles the update."""
    from chunkwise.numeric import AdamW, Tensor

    rng = np.random.default_rng(9)
    deltas = []
    for lr in (1e-3, 2e-3):
        p = Tensor(rng.normal(size=(4, 3)).copy(), requires_grad=True)
        start = p.data.copy()
        p.grad = np.ones_like(p.data) * 0.7
        rng = np.random.default_rng(9)  # same params both rounds
        opt = AdamW({"p": p}, weight_decay=0.01)
        opt.step(lr)
        deltas.append(p.data - start)
    np.testing.assert_allclose(deltas[1], 2.0 * deltas[0], rtol=1e-12)


def test_batch_size_two_halves_step_count():
    cfg = tiny_config()
    state = init_model(cfg)
    corpus = make_corpus(np.random.default_rng(10), 7)
    _, losses = train(corpus, state, TrainConfig(batch_size=2))
    assert len(losses) == math.ceil(7 / 2)


def test_end_to_end_gradients_tiny_pipeline():
    """Finite differences through chunking, multi-pass encoding, recurrence,
    and the classifier at 64-bit."""
    cfg = tiny_config(dtype="float64", overlap=2)
    state = init_model(cfg, trainable=("",))
    rng = np.random.default_rng(12)
    doc = random_doc(rng, k=20)  # 3 chunks at c=8, z=2

    def f(*ps):
        return ops.bce_with_logits(document_logit(doc, state), 1.0)

    err = grad_check(f, list(state.params.values()), step=1e-5, sample=4, seed=1)
    assert err < 1e-4


def test_config_validation_window_capacity():
    with pytest.raises(PipelineError, match="pass"):
        PipelineConfig(vocab_size=10, max_chunks_per_pass=0).validate()


@pytest.mark.parametrize("overrides", [
    {"pooling": "mean"},
    {"doc_pooling": "mean"},
    {"doc_pooling": "max"},
    {"bidirectional": True},
])
def test_configuration_variants_predict(overrides):
    cfg = tiny_config(**overrides)
    state = init_model(cfg)
    doc = random_doc(np.random.default_rng(20), k=25)
    pred = predict_document(doc, state)
    assert 0.0 <= pred.prob <= 1.0


def test_variant_configurations_train_one_step():
    cfg = tiny_config(doc_pooling="mean", bidirectional=True, pooling="mean")
    state = init_model(cfg)
    corpus = make_corpus(np.random.default_rng(21), 2)
    _, losses = train(corpus, state, TrainConfig())
    assert len(losses) == 2 and all(np.isfinite(losses))
