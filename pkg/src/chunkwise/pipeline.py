"""End-to-end orchestration: multi-pass encoding, prediction, training.

A document of any length is chunked, each chunk decorated into a window,
windows are encoded in passes of at most ``max_c`` at a time, the
per-chunk vectors are reassembled in order, and the recurrence produces
one probability. Nothing is ever truncated.

Training makes exactly one pass over the shuffled corpus, updating only
the trainable parameter groups (by default the last encoder layer, the
recurrence, and the classifier) with decoupled-weight-decay Adam under a
one-cycle learning-rate schedule.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .chunking import TokenizedDocument, chunk_document, decorate
from .encoder import EncoderConfig, encode_batch, init_encoder_params, stack_windows
from .numeric import AdamW, Tape, Tensor, ops
from .recurrence import (Prediction, RecurrenceConfig, init_recurrence_params,
                         logit_of, pool_hidden, run_sequence)


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    """Everything needed to build and run one model."""

    vocab_size: int
    chunk_size: int = 510
    overlap: int = 0
    max_chunks_per_pass: int = 15
    dim: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ff_mult: int = 4
    hidden_width: int = 64
    bidirectional: bool = False
    pooling: str = "cls"          # chunk representation: "cls" | "mean"
    doc_pooling: str = "final"    # document vector: "final" | "mean" | "max"
    threshold: float = 0.5
    seed: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        if self.chunk_size + 2 > self.encoder.max_window:
            raise PipelineError(
                f"window width {self.chunk_size + 2} exceeds positional "
                f"capacity {self.encoder.max_window}")
        if self.max_chunks_per_pass < 1:
            raise PipelineError("max chunks per pass must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise PipelineError(f"unsupported dtype {self.dtype!r}")
        self.encoder.validate()
        self.recurrence.validate()

    @property
    def encoder(self) -> EncoderConfig:
        return EncoderConfig(vocab_size=self.vocab_size, dim=self.dim,
                             n_layers=self.n_layers, n_heads=self.n_heads,
                             ff_mult=self.ff_mult,
                             max_window=self.chunk_size + 2,
                             pooling=self.pooling)

    @property
    def recurrence(self) -> RecurrenceConfig:
        return RecurrenceConfig(input_width=4 * self.dim,
                                hidden_width=self.hidden_width,
                                bidirectional=self.bidirectional)

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


@dataclass
class ModelState:
    """All parameters plus the trainable/frozen mask and counters.

    ``counters`` (encoder pass counts, encoder wall time) exist for tests
    and diagnostics; they are the one piece of state inference mutates, so
    concurrent readers may undercount them while predictions stay correct.
    """

    config: PipelineConfig
    params: dict[str, Tensor]
    trainable: tuple[str, ...]
    counters: dict[str, float] = field(default_factory=dict)

    def apply_trainable(self) -> None:
        """Sync each tensor's requires_grad with the trainable prefixes."""
        for name, p in self.params.items():
            p.requires_grad = any(name.startswith(g) for g in self.trainable)

    def trainable_params(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if p.requires_grad}

    def frozen_params(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if not p.requires_grad}


def default_trainable(cfg: PipelineConfig) -> tuple[str, ...]:
    """Fine-tune only the last encoder layer, the recurrence, and the
    classifier; embeddings and earlier layers stay frozen."""
    return (f"enc{cfg.n_layers - 1}.", "rnn.", "cls.")


def init_model(cfg: PipelineConfig, trainable: tuple[str, ...] | None = None) -> ModelState:
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dtype = cfg.np_dtype
    params = init_encoder_params(cfg.encoder, rng, dtype=dtype)
    params.update(init_recurrence_params(cfg.recurrence, rng, dtype=dtype))
    state = ModelState(config=cfg, params=params,
                       trainable=tuple(trainable) if trainable is not None
                       else default_trainable(cfg))
    state.apply_trainable()
    return state


def plan_passes(n: int, max_c: int) -> list[int]:
    """Sizes of the encoder passes for n chunks: ceil(n / max_c) passes,
    each of max_c chunks except a final remainder."""
    if n < 1 or max_c < 1:
        raise PipelineError(f"need n >= 1 and max_c >= 1, got n={n}, max_c={max_c}")
    full, rem = divmod(n, max_c)
    return [max_c] * full + ([rem] if rem else [])


def chunk_embeddings(doc: TokenizedDocument, state: ModelState) -> Tensor:
    """Encode every chunk of the document, reassembled in chunk order.

    Encoder passes are independent: each processes at most
    ``max_chunks_per_pass`` windows, and their outputs are concatenated
    so the result covers the entire text no matter how long it is.
    """
    cfg = state.config
    chunks = chunk_document(doc, cfg.chunk_size, cfg.overlap)
    windows = [decorate(ch, cfg.chunk_size) for ch in chunks.chunks]
    ids, mask = stack_windows(windows)
    parts = []
    offset = 0
    t0 = time.perf_counter()
    for size in plan_passes(len(windows), cfg.max_chunks_per_pass):
        parts.append(encode_batch(ids[offset:offset + size],
                                  mask[offset:offset + size],
                                  state.params, cfg.encoder))
        offset += size
        state.counters["encoder_passes"] = state.counters.get("encoder_passes", 0) + 1
    state.counters["encoder_seconds"] = (state.counters.get("encoder_seconds", 0.0)
                                         + time.perf_counter() - t0)
    return parts[0] if len(parts) == 1 else ops.concat(parts, axis=0)


def document_logit(doc: TokenizedDocument, state: ModelState) -> Tensor:
    embs = chunk_embeddings(doc, state)
    need_states = state.config.doc_pooling != "final"
    hidden_states, final = run_sequence(embs, state.params,
                                        state.config.recurrence,
                                        collect_states=need_states)
    pooled = pool_hidden(hidden_states, final, state.config.doc_pooling)
    return logit_of(pooled, state.params)


def predict_document(doc: TokenizedDocument, state: ModelState) -> Prediction:
    """Tokenized document -> probability of reversal. Full text, no truncation."""
    logit = document_logit(doc, state)
    prob = float(ops.sigmoid(logit).data[0])
    return Prediction(prob=prob, label=int(prob >= state.config.threshold))


@dataclass(frozen=True)
class TrainConfig:
    """One-epoch fine-tuning settings."""

    max_lr: float = 1e-3
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    batch_size: int = 1
    betas: tuple[float, float] = (0.9, 0.999)
    weight_decay: float = 0.01
    shuffle_seed: int = 0

    def validate(self) -> None:
        if not 0.0 < self.pct_start < 1.0:
            raise PipelineError(f"pct_start must lie in (0, 1), got {self.pct_start}")
        if self.max_lr <= 0 or self.div_factor <= 0 or self.final_div_factor <= 0:
            raise PipelineError("learning-rate parameters must be positive")
        if self.batch_size < 1:
            raise PipelineError("batch size must be >= 1")

    def total_steps(self, corpus_size: int) -> int:
        return math.ceil(corpus_size / self.batch_size)


def one_cycle_lr(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Single warmup-then-anneal cycle, cosine in both phases.

    Climbs from ``max_lr / div_factor`` to ``max_lr`` over the first
    ``floor(pct_start * T)`` steps, then anneals to
    ``max_lr / (div_factor * final_div_factor)`` by the last step.
    """
    cfg.validate()
    if total_steps < 1:
        raise PipelineError("total_steps must be >= 1")
    if not 0 <= step < total_steps:
        raise PipelineError(f"step {step} outside [0, {total_steps})")
    peak = int(cfg.pct_start * total_steps)
    low = cfg.max_lr / cfg.div_factor
    floor_lr = cfg.max_lr / (cfg.div_factor * cfg.final_div_factor)
    if step < peak:
        frac = step / peak
        return low + (cfg.max_lr - low) * 0.5 * (1.0 - math.cos(math.pi * frac))
    span = total_steps - 1 - peak
    frac = (step - peak) / span if span > 0 else 1.0
    return floor_lr + (cfg.max_lr - floor_lr) * 0.5 * (1.0 + math.cos(math.pi * frac))


def train(corpus: list[TokenizedDocument], state: ModelState,
          train_cfg: TrainConfig) -> tuple[ModelState, list[float]]:
    """One seeded-shuffle epoch of fine-tuning; returns per-step losses.

    Every document must carry a label. Only trainable parameters move;
    frozen tensors come out bit-identical.
    """
    train_cfg.validate()
    if not corpus:
        raise PipelineError("training corpus is empty")
    unlabeled = [d.doc_id for d in corpus if d.label is None]
    if unlabeled:
        raise PipelineError(
            f"{len(unlabeled)} unlabeled documents (first: {unlabeled[0]!r})")
    order = np.random.default_rng(train_cfg.shuffle_seed).permutation(len(corpus))
    total = train_cfg.total_steps(len(corpus))
    optimizer = AdamW(state.trainable_params(), betas=train_cfg.betas,
                      weight_decay=train_cfg.weight_decay)
    losses: list[float] = []
    for step in range(total):
        batch = [corpus[i] for i in
                 order[step * train_cfg.batch_size:(step + 1) * train_cfg.batch_size]]
        optimizer.zero_grad()
        with Tape() as tape:
            terms = [ops.bce_with_logits(document_logit(doc, state), doc.label)
                     for doc in batch]
            loss = terms[0] if len(terms) == 1 else ops.concat(
                [ops.reshape(t, (1,)) for t in terms], axis=0)
            loss = ops.scale(ops.tsum(loss), 1.0 / len(terms))
            tape.backward(loss)
        optimizer.step(one_cycle_lr(step, train_cfg, total))
        losses.append(float(loss.data))
    return state, losses


