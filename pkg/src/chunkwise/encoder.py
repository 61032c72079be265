"""Miniature multi-layer transformer encoder over fixed-width windows.

Each window is embedded (token + learned position), run through
``n_layers`` of post-norm blocks (masked self-attention, layernorm,
feed-forward, layernorm, residuals throughout), and reduced to a single
vector by concatenating the pooled hidden states of the last four layers,
giving a representation of width ``4 * dim`` per window.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Tensor, ops
from .numeric.tensor import ShapeMismatch

REPR_LAYERS = 4  # final encoder layers concatenated into the chunk representation

ATTN_MASK_BIAS = -1e9  # additive logit for padded key positions


class EncoderError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 64
    n_layers: int = 4
    n_heads: int = 4
    ff_mult: int = 4
    max_window: int = 512
    pooling: str = "cls"  # "cls" | "mean"

    def validate(self) -> None:
        if self.n_layers < REPR_LAYERS:
            raise EncoderError(
                f"need at least {REPR_LAYERS} layers to form the representation, "
                f"got {self.n_layers}")
        if self.dim % self.n_heads != 0:
            raise EncoderError(f"dim {self.dim} not divisible by {self.n_heads} heads")
        if self.pooling not in ("cls", "mean"):
            raise EncoderError(f"unknown pooling {self.pooling!r}")
        if self.vocab_size < 1 or self.max_window < 3 or self.ff_mult < 1:
            raise EncoderError("invalid encoder configuration")

    @property
    def repr_width(self) -> int:
        return REPR_LAYERS * self.dim


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator,
                        dtype=np.float32) -> dict[str, Tensor]:
    """Fresh parameters: weights symmetric uniform scaled by 1/sqrt(dim),
    biases zero, layernorm gain one."""
    cfg.validate()
    bound = 1.0 / np.sqrt(cfg.dim)

    def uniform(*shape):
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                      requires_grad=True)

    def zeros(*shape):
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)

    def ones(*shape):
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)

    params: dict[str, Tensor] = {
        "emb.tok": uniform(cfg.vocab_size, cfg.dim),
        "emb.pos": uniform(cfg.max_window, cfg.dim),
    }
    ff = cfg.dim * cfg.ff_mult
    for i in range(cfg.n_layers):
        p = f"enc{i}."
        for proj in ("wq", "wk", "wv", "wo"):
            params[p + "attn." + proj] = uniform(cfg.dim, cfg.dim)
        # no key bias: softmax rows are invariant to it, so it could never train
        for bias in ("bq", "bv", "bo"):
            params[p + "attn." + bias] = zeros(cfg.dim)
        params[p + "ln1.g"] = ones(cfg.dim)
        params[p + "ln1.b"] = zeros(cfg.dim)
        params[p + "ff.w1"] = uniform(cfg.dim, ff)
        params[p + "ff.b1"] = zeros(ff)
        params[p + "ff.w2"] = uniform(ff, cfg.dim)
        params[p + "ff.b2"] = zeros(cfg.dim)
        params[p + "ln2.g"] = ones(cfg.dim)
        params[p + "ln2.b"] = zeros(cfg.dim)
    for name, t in params.items():
        t.name = name
    return params


def layer_forward(x: Tensor, params: dict[str, Tensor], prefix: str,
                  cfg: EncoderConfig, mask_bias: np.ndarray) -> Tensor:
    """One post-norm block on states of shape (batch, width, dim)."""
    q = ops.linear(x, params[prefix + "attn.wq"], params[prefix + "attn.bq"])
    k = ops.matmul(x, params[prefix + "attn.wk"])
    v = ops.linear(x, params[prefix + "attn.wv"], params[prefix + "attn.bv"])
    ctx = ops.multihead_attention(q, k, v, mask_bias, cfg.n_heads)
    ctx = ops.linear(ctx, params[prefix + "attn.wo"], params[prefix + "attn.bo"])
    x = ops.layer_norm(ops.add(x, ctx), params[prefix + "ln1.g"], params[prefix + "ln1.b"])
    ffn = ops.linear(ops.gelu(ops.linear(x, params[prefix + "ff.w1"],
                                         params[prefix + "ff.b1"])),
                     params[prefix + "ff.w2"], params[prefix + "ff.b2"])
    return ops.layer_norm(ops.add(x, ffn), params[prefix + "ln2.g"],
                          params[prefix + "ln2.b"])


def forward_layers(ids: np.ndarray, mask: np.ndarray, params: dict[str, Tensor],
                   cfg: EncoderConfig) -> list[Tensor]:
    """Hidden states of every layer for a batch of equal-width windows.

    Args:
        ids: int array (batch, width) of token ids.
        mask: int array (batch, width); 0 marks padding.

    Returns:
        List of ``n_layers`` tensors, each (batch, width, dim).
    """
    ids = np.asarray(ids)
    mask = np.asarray(mask)
    if ids.ndim != 2 or mask.shape != ids.shape:
        raise ShapeMismatch("forward_layers", ids.shape, mask.shape)
    b, w = ids.shape
    if b < 1:
        raise EncoderError("empty batch")
    if w > cfg.max_window:
        raise EncoderError(
            f"window width {w} exceeds positional capacity {cfg.max_window}")
    dtype = params["emb.tok"].dtype
    pos = ops.narrow(params["emb.pos"], 0, 0, w)
    x = ops.add(ops.embedding(params["emb.tok"], ids), pos)
    # additive bias: 0 on real keys, large negative on padding
    mask_bias = ((1 - mask[:, None, None, :]) * ATTN_MASK_BIAS).astype(dtype)
    states = []
    for i in range(cfg.n_layers):
        x = layer_forward(x, params, f"enc{i}.", cfg, mask_bias)
        states.append(x)
    return states


def extract_representation(per_layer_states: list[Tensor], mask: np.ndarray,
                           pooling: str = "cls") -> Tensor:
    """Concatenate pooled hidden states of the last four layers, earliest first.

    ``cls`` pooling takes the hidden state at the leading CLS position;
    ``mean`` averages over unpadded positions.
    """
    if len(per_layer_states) < REPR_LAYERS:
        raise EncoderError(
            f"need states from at least {REPR_LAYERS} layers, got {len(per_layer_states)}")
    tail = per_layer_states[-REPR_LAYERS:]
    b, w, d = tail[0].shape
    parts = []
    if pooling == "cls":
        for s in tail:
            parts.append(ops.reshape(ops.narrow(s, 1, 0, 1), (b, d)))
    elif pooling == "mean":
        mask = np.asarray(mask, dtype=tail[0].dtype.type)
        weights = mask / mask.sum(axis=1, keepdims=True)
        wrow = Tensor(weights[:, None, :])  # (b, 1, w), constant
        for s in tail:
            parts.append(ops.reshape(ops.matmul(wrow, s), (b, d)))
    else:
        raise EncoderError(f"unknown pooling {pooling!r}")
    return ops.concat(parts, axis=-1)


def encode_batch(ids: np.ndarray, mask: np.ndarray, params: dict[str, Tensor],
                 cfg: EncoderConfig) -> Tensor:
    """Encode up to a pass worth of windows into (batch, 4 * dim) vectors."""
    states = forward_layers(ids, mask, params, cfg)
    return extract_representation(states, mask, pooling=cfg.pooling)


def stack_windows(windows) -> tuple[np.ndarray, np.ndarray]:
    """Stack equal-width EncoderWindows into (ids, mask) batch arrays."""
    widths = {w.width for w in windows}
    if len(widths) != 1:
        raise EncoderError(f"windows of mixed widths {sorted(widths)} in one batch")
    ids = np.stack([w.ids for w in windows])
    mask = np.stack([w.mask for w in windows])
    return ids, mask
