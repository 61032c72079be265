"""Acceptance suite: one test per exit criterion, each at its stated
tolerance and runtime budget, with a PASS/FAIL line in the summary."""

import time

import numpy as np
import pytest

from conftest import log_criterion
from oracles import naive_macro_f1, naive_mcc

from chunkwise.chunking import TokenizedDocument, chunk_count, chunk_document
from chunkwise.checkpoint import load_checkpoint, save_checkpoint
from chunkwise.evaluation import (ConfusionCounts, bootstrap_ci, confusion,
                                  holm_correct, macro_f1, mcc,
                                  wilcoxon_signed_rank)
from chunkwise.experiments import (TruncationExperimentConfig,
                                   run_truncation_experiment)
from chunkwise.numeric import Tensor, grad_check, ops
from chunkwise.pipeline import (PipelineConfig, TrainConfig, document_logit,
                                init_model, one_cycle_lr, plan_passes,
                                predict_document)


def finish(name, passed, detail=""):
    log_criterion(name, bool(passed), detail)
    assert passed, f"{name}: {detail}"


# ------------------------------------------------------------------------
def test_chunker_correctness():
    """10,000 random (k, c, z) triples: coverage, multiplicity, reconstruction,
    closed-form count; plus the exact three-chunk overlap layout."""
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    for _ in range(10_000):
        c = int(rng.integers(2, 120))
        z = 2 * int(rng.integers(0, c // 2 + 1))
        k = int(rng.integers(1, 2500))
        tokens = np.arange(4, 4 + k)
        cs = chunk_document(TokenizedDocument("r", tokens), c, z)
        assert len(cs) == chunk_count(k, c, z)
        multiplicity = np.zeros(k, dtype=np.int64)
        for s, ch in zip(cs.starts, cs.chunks):
            multiplicity[s - 1:s - 1 + len(ch)] += 1
        assert multiplicity.min() >= 1
        assert multiplicity.max() <= 2
        rebuilt = np.concatenate([cs.chunks[0]] + [ch[z // 2:] for ch in cs.chunks[1:]])
        assert np.array_equal(rebuilt, tokens)

    cs = chunk_document(TokenizedDocument("fig", np.arange(4, 14)), 4, 2)
    layout_ok = (cs.starts == [1, 4, 7]
                 and [ch.tolist() for ch in cs.chunks] ==
                 [[4, 5, 6, 7], [7, 8, 9, 10], [10, 11, 12, 13]])
    elapsed = time.perf_counter() - start
    finish("chunker correctness (10k triples + exact layout)",
           layout_ok and elapsed < 10.0, f"{elapsed:.1f}s")


# ------------------------------------------------------------------------
def test_pass_arithmetic_boundary():
    """7,650 tokens fit one 15-chunk pass; one more token forces two."""
    start = time.perf_counter()
    n_at = chunk_count(7650, 510, 0)
    n_over = chunk_count(7651, 510, 0)
    ok = (plan_passes(n_at, 15) == [15] and plan_passes(n_over, 15) == [15, 1])
    elapsed = time.perf_counter() - start
    finish("pass arithmetic (7650 -> 1 pass, 7651 -> 2)",
           ok and elapsed < 1.0, f"{elapsed:.2f}s")


# ------------------------------------------------------------------------
def test_gradient_suite():
    """Encoder layer, LSTM cell, and the tiny end-to-end pipeline all pass
    central finite differences under 1e-4 relative error at 64-bit."""
    from chunkwise.encoder import EncoderConfig, init_encoder_params, layer_forward

    start = time.perf_counter()
    errs = {}

    cfg = EncoderConfig(vocab_size=40, dim=16, n_layers=4, n_heads=4,
                        ff_mult=2, max_window=12)
    params = init_encoder_params(cfg, np.random.default_rng(0), dtype=np.float64)
    rng = np.random.default_rng(1)
    x = Tensor(rng.normal(size=(2, 8, 16)), requires_grad=True)
    bias = np.zeros((2, 1, 1, 8))
    bias[:, :, :, -2:] = -1e9
    probe = Tensor(rng.normal(size=(2, 8, 16)))
    layer = [p for n, p in params.items() if n.startswith("enc0.")]

    def f_layer(*ps):
        return ops.tsum(ops.mul(layer_forward(x, params, "enc0.", cfg, bias), probe))

    errs["encoder layer"] = grad_check(f_layer, [x, *layer], step=1e-5)

    xs = Tensor(rng.normal(size=16), requires_grad=True)
    h0 = Tensor(rng.normal(size=8), requires_grad=True)
    c0 = Tensor(rng.normal(size=8), requires_grad=True)
    w = Tensor(rng.normal(size=(24, 32)) * 0.4, requires_grad=True)
    b = Tensor(rng.normal(size=32) * 0.2, requires_grad=True)
    hp = Tensor(rng.normal(size=8))
    cp = Tensor(rng.normal(size=8))

    def f_cell(*ps):
        h2, c2 = ops.lstm_step(xs, h0, c0, w, b)
        return ops.add(ops.tsum(ops.mul(h2, hp)), ops.tsum(ops.mul(c2, cp)))

    errs["lstm cell"] = grad_check(f_cell, [xs, h0, c0, w, b], step=1e-5)

    pipe = PipelineConfig(vocab_size=40, chunk_size=8, overlap=2,
                          max_chunks_per_pass=2, dim=16, n_layers=4, n_heads=4,
                          ff_mult=2, hidden_width=8, seed=3, dtype="float64")
    state = init_model(pipe, trainable=("",))
    doc = TokenizedDocument("g", np.random.default_rng(4).integers(4, 40, size=20))
    assert chunk_count(doc.length, 8, 2) == 3

    def f_pipe(*ps):
        return ops.bce_with_logits(document_logit(doc, state), 1.0)

    errs["end-to-end pipeline"] = grad_check(
        f_pipe, list(state.params.values()), step=1e-5, sample=6, seed=5)

    elapsed = time.perf_counter() - start
    worst = max(errs.values())
    finish("gradient suite (layer, cell, end-to-end) < 1e-4",
           worst < 1e-4 and elapsed < 120.0,
           f"worst {worst:.2e}, {elapsed:.1f}s")


# ------------------------------------------------------------------------
def test_batching_invariance():
    """Predictions on 50 random documents agree within 1e-6 across
    max chunks per pass of 1, 3, and 15."""
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    docs = [TokenizedDocument(f"b{i}", rng.integers(4, 60,
                                                    size=int(rng.integers(3, 120))))
            for i in range(50)]
    probs = {}
    for max_c in (1, 3, 15):
        cfg = PipelineConfig(vocab_size=60, chunk_size=12, overlap=4,
                             max_chunks_per_pass=max_c, dim=16, n_layers=4,
                             n_heads=4, ff_mult=2, hidden_width=10, seed=9,
                             dtype="float32")
        state = init_model(cfg)
        probs[max_c] = np.array([predict_document(d, state).prob for d in docs])
    spread = max(np.abs(probs[1] - probs[3]).max(),
                 np.abs(probs[1] - probs[15]).max())
    elapsed = time.perf_counter() - start
    finish("batching invariance (max_c in {1,3,15}, 50 docs) < 1e-6",
           spread < 1e-6 and elapsed < 60.0,
           f"max spread {spread:.2e}, {elapsed:.1f}s")


# ------------------------------------------------------------------------
def test_metric_oracles():
    """Macro-F1 and MCC equal an independent brute-force reimplementation
    exactly on 1,000 random confusion tables; worked values reproduced."""
    start = time.perf_counter()
    rng = np.random.default_rng(11)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        labels = rng.integers(0, 2, size=n).tolist()
        preds = rng.integers(0, 2, size=n).tolist()
        counts = confusion(preds, labels)
        assert macro_f1(counts) == naive_macro_f1(preds, labels)
        assert mcc(counts) == naive_mcc(preds, labels)
    worked = ConfusionCounts(tp=2, tn=3, fp=1, fn=1)
    ok = (abs(macro_f1(worked) - 17 / 24) < 1e-12
          and abs(mcc(worked) - 5 / 12) < 1e-12)
    elapsed = time.perf_counter() - start
    finish("metric oracles (1k tables exact + 17/24, 5/12)",
           ok and elapsed < 5.0, f"{elapsed:.1f}s")


# ------------------------------------------------------------------------
def test_statistics_suite():
    """Signed-rank exact tail, Holm decisions, and bootstrap coverage on a
    Monte-Carlo oracle with known truth."""
    start = time.perf_counter()
    p_exact = wilcoxon_signed_rank([1.0, 2.0, 3.0, 4.0, 5.0], [0.0] * 5)
    holm = holm_correct([0.01, 0.04, 0.03], alpha=0.05)

    true_accuracy = 0.8
    n_records, n_outer = 150, 500
    covered = 0
    outer_rng = np.random.default_rng(13)
    for rep in range(n_outer):
        flags = (outer_rng.random(n_records) < true_accuracy).astype(float)
        ci = bootstrap_ci(flags, lambda sub: float(sub.mean()),
                          n_resamples=2000, level=0.95, seed=rep)
        if ci.lo <= true_accuracy <= ci.hi:
            covered += 1
    coverage = covered / n_outer

    elapsed = time.perf_counter() - start
    ok = (p_exact == pytest.approx(0.0625)
          and holm == [True, False, False]
          and 0.90 <= coverage <= 0.99
          and elapsed < 300.0)
    finish("statistics suite (exact 0.0625, Holm {0.01}, coverage in [.90,.99])",
           ok, f"coverage {coverage:.3f}, {elapsed:.1f}s")


# ------------------------------------------------------------------------
def test_scheduler_shape():
    """Warmup never decreases, anneal never increases, peak and endpoints
    match the closed forms; 100 random configurations."""
    start = time.perf_counter()
    rng = np.random.default_rng(17)
    for _ in range(100):
        cfg = TrainConfig(max_lr=float(rng.uniform(1e-4, 1.0)),
                          pct_start=0.3,
                          div_factor=float(rng.uniform(2, 100)),
                          final_div_factor=float(rng.uniform(10, 1e5)))
        total = int(rng.integers(10, 500))
        peak = int(0.3 * total)
        lrs = [one_cycle_lr(s, cfg, total) for s in range(total)]
        assert lrs[0] == pytest.approx(cfg.max_lr / cfg.div_factor)
        assert lrs[peak] == pytest.approx(cfg.max_lr)
        assert lrs[-1] == pytest.approx(
            cfg.max_lr / (cfg.div_factor * cfg.final_div_factor))
        assert all(lrs[s] >= lrs[s - 1] - 1e-15 for s in range(1, peak + 1))
        assert all(lrs[s] <= lrs[s - 1] + 1e-15 for s in range(peak + 1, total))
        assert max(lrs) == pytest.approx(cfg.max_lr)
    elapsed = time.perf_counter() - start
    finish("scheduler shape (100 random configs)", elapsed < 1.0, f"{elapsed:.2f}s")


# ------------------------------------------------------------------------
def test_efficiency_linear_in_passes():
    """Doubling document length beyond one pass roughly doubles encoder
    wall time: ratio within [1.7, 2.5] over 20 repetitions."""
    start = time.perf_counter()
    cfg = PipelineConfig(vocab_size=80, chunk_size=64, overlap=0,
                         max_chunks_per_pass=15, dim=32, n_layers=4, n_heads=4,
                         ff_mult=2, hidden_width=16, seed=19, dtype="float32")
    state = init_model(cfg)
    rng = np.random.default_rng(20)
    doc_two_pass = TokenizedDocument("short", rng.integers(4, 80, size=30 * 64))
    doc_four_pass = TokenizedDocument("long", rng.integers(4, 80, size=60 * 64))
    predict_document(doc_four_pass, state)  # warm-up

    def timed(doc):
        state.counters["encoder_seconds"] = 0.0
        for _ in range(20):
            predict_document(doc, state)
        return state.counters["encoder_seconds"]

    t_short = timed(doc_two_pass)
    t_long = timed(doc_four_pass)
    ratio = t_long / t_short
    elapsed = time.perf_counter() - start
    finish("efficiency: time ratio for 2x length in [1.7, 2.5]",
           1.7 <= ratio <= 2.5 and elapsed < 300.0,
           f"ratio {ratio:.2f}, {elapsed:.1f}s")


# ------------------------------------------------------------------------
def test_persistence_roundtrip(tmp_path):
    """Checkpoint save/load reproduces 20 predictions bit-exactly."""
    start = time.perf_counter()
    cfg = PipelineConfig(vocab_size=50, chunk_size=10, overlap=4,
                         max_chunks_per_pass=3, dim=16, n_layers=4, n_heads=4,
                         ff_mult=2, hidden_width=12, seed=23, dtype="float32")
    state = init_model(cfg)
    path = tmp_path / "model.bin"
    save_checkpoint(state, path)
    restored = load_checkpoint(path)
    rng = np.random.default_rng(24)
    identical = True
    for i in range(20):
        doc = TokenizedDocument(f"p{i}", rng.integers(4, 50,
                                                      size=int(rng.integers(2, 90))))
        a, b = predict_document(doc, state), predict_document(doc, restored)
        identical &= (a.prob == b.prob and a.label == b.label)
    elapsed = time.perf_counter() - start
    finish("persistence: bit-identical predictions after round-trip",
           identical and elapsed < 30.0, f"{elapsed:.1f}s")


# ------------------------------------------------------------------------
def test_full_text_beats_truncation():
    """Seeded synthetic corpora (5,000 train / 1,000 test, tail signals):
    in at least 4 of 5 seeds, (a) the overlapping full-text model beats the
    truncated baseline by >= 10 Macro-F1 points and (b) the zero-overlap
    full-text model is at least as good as the baseline."""
    start = time.perf_counter()
    wins_a = wins_b = 0
    details = []
    for seed in range(5):
        res = run_truncation_experiment(TruncationExperimentConfig(seed=seed))
        base = res["baseline"]["macro_f1"]
        z0 = res["full_z0"]["macro_f1"]
        ovl = res["full_overlap"]["macro_f1"]
        wins_a += ovl >= base + 0.10
        wins_b += z0 >= base
        details.append(f"s{seed}: base {base:.3f} z0 {z0:.3f} ovl {ovl:.3f}")
    elapsed = time.perf_counter() - start
    finish("full text vs truncation (>=4/5 seeds, +10pt overlap margin)",
           wins_a >= 4 and wins_b >= 4 and elapsed < 1800.0,
           f"a {wins_a}/5, b {wins_b}/5, {elapsed / 60:.1f}min; " + "; ".join(details))
