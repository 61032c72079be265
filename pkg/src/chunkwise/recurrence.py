"""Recurrent aggregation of chunk embeddings into a document prediction.

An LSTM consumes the ordered per-chunk vectors (width 4 * encoder dim),
and the resulting document state feeds a logistic classifier for the
binary reversed/affirmed decision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numeric import Tensor, ops
from .numeric.tensor import ShapeMismatch


class RecurrenceError(ValueError):
    pass


@dataclass(frozen=True)
class RecurrenceConfig:
    input_width: int
    hidden_width: int = 64
    bidirectional: bool = False

    def validate(self) -> None:
        if self.input_width < 1 or self.hidden_width < 1:
            raise RecurrenceError("widths must be positive")

    @property
    def output_width(self) -> int:
        return self.hidden_width * (2 if self.bidirectional else 1)


@dataclass
class Prediction:
    """Probability of the positive class (decision reversed) and the
    thresholded label."""

    prob: float
    label: int

    def __post_init__(self):
        if not np.isfinite(self.prob) or not 0.0 <= self.prob <= 1.0:
            raise RecurrenceError(f"probability {self.prob} outside [0, 1]")


def init_recurrence_params(cfg: RecurrenceConfig, rng: np.random.Generator,
                           dtype=np.float32) -> dict[str, Tensor]:
    cfg.validate()
    bound = 1.0 / np.sqrt(cfg.hidden_width)
    shapes = {"rnn.fwd.w": (cfg.input_width + cfg.hidden_width, 4 * cfg.hidden_width)}
    if cfg.bidirectional:
        shapes["rnn.bwd.w"] = shapes["rnn.fwd.w"]
    params: dict[str, Tensor] = {}
    for name, shape in shapes.items():
        params[name] = Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype),
                              requires_grad=True, name=name)
        bname = name[:-1] + "b"
        params[bname] = Tensor(np.zeros(shape[1], dtype=dtype),
                               requires_grad=True, name=bname)
    params["cls.w"] = Tensor(rng.uniform(-bound, bound,
                                         size=(cfg.output_width, 1)).astype(dtype),
                             requires_grad=True, name="cls.w")
    params["cls.b"] = Tensor(np.zeros(1, dtype=dtype), requires_grad=True, name="cls.b")
    return params


def _direction(embeddings: Tensor, w: Tensor, b: Tensor, hidden: int,
               reverse: bool) -> tuple[list[Tensor], Tensor]:
    n = embeddings.shape[0]
    dtype = embeddings.dtype
    h = Tensor(np.zeros(hidden, dtype=dtype))
    c = Tensor(np.zeros(hidden, dtype=dtype))
    order = range(n - 1, -1, -1) if reverse else range(n)
    states: list[Tensor | None] = [None] * n
    for t in order:
        x = ops.reshape(ops.narrow(embeddings, 0, t, 1), (embeddings.shape[1],))
        h, c = ops.lstm_step(x, h, c, w, b)
        states[t] = h
    return states, h


def run_sequence(embeddings: Tensor, params: dict[str, Tensor],
                 cfg: RecurrenceConfig,
                 collect_states: bool = True) -> tuple[Tensor | None, Tensor]:
    """Run the recurrence over chunks in document order.

    Args:
        embeddings: (n, input_width) tensor, one row per chunk.
        collect_states: skip assembling the per-chunk hidden matrix when
            only the final state is needed (it is then returned as None).

    Returns:
        ``(hidden_states, final_hidden)`` of shapes (n, output_width) and
        (output_width,); directions are concatenated when bidirectional.
    """
    if embeddings.data.ndim != 2 or embeddings.shape[0] < 1:
        raise ShapeMismatch("run_sequence", embeddings.shape, (1, cfg.input_width))
    if embeddings.shape[1] != cfg.input_width:
        raise ShapeMismatch("run_sequence", embeddings.shape,
                            ("n", cfg.input_width))
    fwd_states, fwd_final = _direction(embeddings, params["rnn.fwd.w"],
                                       params["rnn.fwd.b"], cfg.hidden_width,
                                       reverse=False)
    if not cfg.bidirectional:
        if not collect_states:
            return None, fwd_final
        rows = [ops.reshape(s, (1, cfg.hidden_width)) for s in fwd_states]
        return ops.concat(rows, axis=0) if len(rows) > 1 else rows[0], fwd_final
    bwd_states, bwd_final = _direction(embeddings, params["rnn.bwd.w"],
                                       params["rnn.bwd.b"], cfg.hidden_width,
                                       reverse=True)
    final = ops.concat([fwd_final, bwd_final], axis=-1)
    if not collect_states:
        return None, final
    rows = [ops.reshape(ops.concat([f, r], axis=-1), (1, 2 * cfg.hidden_width))
            for f, r in zip(fwd_states, bwd_states)]
    return ops.concat(rows, axis=0) if len(rows) > 1 else rows[0], final


def pool_hidden(hidden_states: Tensor, final_hidden: Tensor,
                doc_pooling: str = "final") -> Tensor:
    """Document vector from the hidden sequence: final state (default),
    mean, or coordinatewise max over chunks."""
    if doc_pooling == "final":
        return final_hidden
    n, width = hidden_states.shape
    if doc_pooling == "mean":
        ones = Tensor(np.full((1, n), 1.0 / n, dtype=hidden_states.dtype))
        return ops.reshape(ops.matmul(ones, hidden_states), (width,))
    if doc_pooling == "max":
        return ops.colmax(hidden_states)
    raise RecurrenceError(f"unknown document pooling {doc_pooling!r}")


def logit_of(hidden: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Affine map of a document vector to a scalar logit."""
    w = params["cls.w"]
    if hidden.shape != (w.shape[0],):
        raise ShapeMismatch("classify", hidden.shape, (w.shape[0],))
    out = ops.add(ops.matmul(ops.reshape(hidden, (1, w.shape[0])), w),
                  params["cls.b"])
    return ops.reshape(out, (1,))


def classify(final_hidden: Tensor, params: dict[str, Tensor],
             threshold: float = 0.5) -> Prediction:
    """Logistic prediction from a document vector; label 1 iff p >= threshold."""
    logit = logit_of(final_hidden, params)
    prob = float(ops.sigmoid(logit).data[0])
    return Prediction(prob=prob, label=int(prob >= threshold))
