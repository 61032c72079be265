"""Differentiable primitives: forward evaluation plus hand-written VJPs.

Every function takes and returns :class:`~chunkwise.numeric.tensor.Tensor`
objects, validates operand shapes up front (raising
:class:`~chunkwise.numeric.tensor.ShapeMismatch` naming the primitive and
the offending shapes), and records itself on the active tape when any
input requires gradients.

Broadcasting is deliberately limited to bias addition; everything else
demands conforming shapes. Gradients accumulate by summation when a
tensor feeds several operations.
"""

from __future__ import annotations

import math

import numpy as np

from .tensor import ShapeMismatch, Tensor, active_tape

_GELU_C = math.sqrt(2.0 / math.pi)


def _result(op: str, inputs, out_data, vjp, extra_outputs=()) -> Tensor:
    rg = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=rg)
    tape = active_tape()
    if rg and tape is not None:
        tape.record(op, inputs, (out, *extra_outputs), vjp)
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(op, a.shape, b.shape)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product. 2-D operands, or batched with equal leading dims,
    or one 2-D operand applied across the other's batch dims."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    la, lb = a.shape[:-2], b.shape[:-2]
    if la and lb and la != lb:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def vjp(g):
        ga = gb = None
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            if ga.ndim > a.data.ndim:
                ga = ga.sum(axis=tuple(range(ga.ndim - a.data.ndim)))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            if gb.ndim > b.data.ndim:
                gb = gb.sum(axis=tuple(range(gb.ndim - b.data.ndim)))
        return ga, gb

    return _result("matmul", (a, b), out, vjp)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map over the last axis: ``x @ w + b``."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeMismatch("linear", x.shape, w.shape)
    if b.shape != (w.shape[1],):
        raise ShapeMismatch("linear", b.shape, (w.shape[1],))
    out = x.data @ w.data + b.data

    def vjp(g):
        gx = gw = gb = None
        if x.requires_grad:
            gx = g @ w.data.T
        if w.requires_grad:
            gw = x.data.reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        if b.requires_grad:
            gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return gx, gw, gb

    return _result("linear", (x, w, b), out, vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum. Broadcasting is restricted to bias addition: ``b``
    may be 1-D matching the last axis of ``a``, or match ``a`` minus its
    leading axis (a per-position bias shared across a batch)."""
    if a.shape != b.shape:
        last_dim_bias = (b.data.ndim == 1 and a.data.ndim >= 1
                         and a.shape[-1] == b.shape[0])
        leading_bias = (b.data.ndim == a.data.ndim - 1 and a.shape[1:] == b.shape)
        if not (last_dim_bias or leading_bias):
            raise ShapeMismatch("add", a.shape, b.shape)
    out = a.data + b.data

    def vjp(g):
        ga = g if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if b.shape == g.shape:
                gb = g
            elif b.data.ndim == g.ndim - 1:
                gb = g.sum(axis=0)
            else:
                gb = g.reshape(-1, g.shape[-1]).sum(axis=0)
        return ga, gb

    return _result("add", (a, b), out, vjp)


def add_const(a: Tensor, const: np.ndarray) -> Tensor:
    """Add a non-differentiable array (e.g. an attention mask); numpy
    broadcasting applies to the constant only."""
    out = a.data + const

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        ga = g
        if ga.shape != a.shape:
            # undo broadcasting of `a` (never happens in practice: const broadcasts)
            raise ShapeMismatch("add_const", ga.shape, a.shape)
        return (ga,)

    return _result("add_const", (a,), out, vjp)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("sub", a, b)
    out = a.data - b.data

    def vjp(g):
        return (g if a.requires_grad else None,
                -g if b.requires_grad else None)

    return _result("sub", (a, b), out, vjp)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("mul", a, b)
    out = a.data * b.data

    def vjp(g):
        return (g * b.data if a.requires_grad else None,
                g * a.data if b.requires_grad else None)

    return _result("mul", (a, b), out, vjp)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)
    out = a.data * s

    def vjp(g):
        return (g * s if a.requires_grad else None,)

    return _result("scale", (a,), out, vjp)


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def vjp(g):
        return (g * (1.0 - out * out) if a.requires_grad else None,)

    return _result("tanh", (a,), out, vjp)


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_np(a.data)

    def vjp(g):
        return (g * out * (1.0 - out) if a.requires_grad else None,)

    return _result("sigmoid", (a,), out, vjp)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh form: ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    x = a.data
    x2 = x * x
    inner = _GELU_C * (x + 0.044715 * (x2 * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        dinner = _GELU_C * (1.0 + 0.134145 * x2)
        da = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * da,)

    return _result("gelu", (a,), out, vjp)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically safe softmax along ``axis``; rows sum to one."""
    x = a.data
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        if not a.requires_grad:
            return (None,)
        dot = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - dot),)

    return _result("softmax", (a,), out, vjp)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale+shift."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp(g):
        gx = gg = gb = None
        if gain.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if bias.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        if x.requires_grad:
            gy = g * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            gx = inv * (gy - m1 - xhat * m2)
        return gx, gg, gb

    return _result("layer_norm", (x, gain, bias), out, vjp)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("concat of zero tensors")
    base = list(tensors[0].shape)
    ax = axis % len(base)
    for t in tensors[1:]:
        other = list(t.shape)
        if len(other) != len(base) or any(
                o != b for i, (o, b) in enumerate(zip(other, base)) if i != ax):
            raise ShapeMismatch("concat", tensors[0].shape, t.shape)
    out = np.concatenate([t.data for t in tensors], axis=ax)
    sizes = [t.shape[ax] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        grads = []
        for i, t in enumerate(tensors):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(offsets[i], offsets[i + 1])
                grads.append(g[tuple(idx)])
            else:
                grads.append(None)
        return tuple(grads)

    return _result("concat", tuple(tensors), out, vjp)


def narrow(x: Tensor, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice of length ``size`` starting at ``start`` along ``axis``."""
    ax = axis % x.data.ndim
    if start < 0 or size < 1 or start + size > x.shape[ax]:
        raise ShapeMismatch("narrow", x.shape, (axis, start, size))
    idx = [slice(None)] * x.data.ndim
    idx[ax] = slice(start, start + size)
    out = x.data[tuple(idx)]

    def vjp(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros_like(x.data)
        gx[tuple(idx)] = g
        return (gx,)

    return _result("narrow", (x,), out, vjp)


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != x.data.size:
        raise ShapeMismatch("reshape", x.shape, shape)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape) if x.requires_grad else None,)

    return _result("reshape", (x,), out, vjp)


def transpose(x: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    out = x.data.transpose(axes)
    inverse = tuple(axes.index(i) for i in range(len(axes)))

    def vjp(g):
        return (g.transpose(inverse) if x.requires_grad else None,)

    return _result("transpose", (x,), out, vjp)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup: ``out[..., :] = table[ids[...], :]``."""
    ids = np.asarray(ids)
    if table.data.ndim != 2:
        raise ShapeMismatch("embedding", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ValueError(f"embedding: id out of range for table of {table.shape[0]} rows")
    out = table.data[ids]

    def vjp(g):
        if not table.requires_grad:
            return (None,)
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _result("embedding", (table,), out, vjp)


def colmax(x: Tensor) -> Tensor:
    """Columnwise maximum of a 2-D tensor; gradient routes to the argmax."""
    if x.data.ndim != 2:
        raise ShapeMismatch("colmax", x.shape, ("n", "d"))
    idx = np.argmax(x.data, axis=0)
    cols = np.arange(x.shape[1])
    out = x.data[idx, cols]

    def vjp(g):
        if not x.requires_grad:
            return (None,)
        gx = np.zeros_like(x.data)
        gx[idx, cols] = g
        return (gx,)

    return _result("colmax", (x,), out, vjp)


def tsum(x: Tensor) -> Tensor:
    out = x.data.sum()

    def vjp(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype, copy=True)
                if x.requires_grad else None,)

    return _result("tsum", (x,), np.asarray(out), vjp)


def bce_with_logits(logit: Tensor, target: float) -> Tensor:
    """Numerically stable binary cross-entropy of a scalar logit."""
    if logit.data.size != 1:
        raise ShapeMismatch("bce_with_logits", logit.shape, (1,))
    x = logit.data
    y = float(target)
    out = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))

    def vjp(g):
        if not logit.requires_grad:
            return (None,)
        return (g * (_sigmoid_np(x) - y),)

    return _result("bce_with_logits", (logit,), out, vjp)


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, mask_bias: np.ndarray,
                        n_heads: int) -> Tensor:
    """Fused scaled-dot-product attention over heads split from the last axis.

    Inputs are (batch, width, dim) with ``dim`` divisible by ``n_heads``;
    ``mask_bias`` is a non-differentiable additive logit array broadcast
    over (batch, heads, width, width), typically a large negative number
    on padded key positions. One tape record covers the head split,
    scores, masked softmax, value mixing, and head merge.
    """
    if not (q.shape == k.shape == v.shape) or q.data.ndim != 3:
        raise ShapeMismatch("multihead_attention", q.shape, k.shape, v.shape)
    bsz, width, dim = q.shape
    if dim % n_heads != 0:
        raise ShapeMismatch("multihead_attention", q.shape, (n_heads,))
    hd = dim // n_heads
    inv_scale = 1.0 / math.sqrt(hd)

    def split(t: np.ndarray) -> np.ndarray:
        return t.reshape(bsz, width, n_heads, hd).transpose(0, 2, 1, 3)

    qh, kh, vh = split(q.data), split(k.data), split(v.data)
    scores = qh @ np.swapaxes(kh, -1, -2) * inv_scale + mask_bias
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    attn = e / e.sum(axis=-1, keepdims=True)
    out = (attn @ vh).transpose(0, 2, 1, 3).reshape(bsz, width, dim)

    def vjp(g):
        gh = g.reshape(bsz, width, n_heads, hd).transpose(0, 2, 1, 3)
        gq = gk = gv = None
        d_attn = gh @ np.swapaxes(vh, -1, -2)
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        if v.requires_grad:
            gv = (np.swapaxes(attn, -1, -2) @ gh).transpose(0, 2, 1, 3) \
                .reshape(bsz, width, dim)
        if q.requires_grad:
            gq = ((d_scores @ kh) * inv_scale).transpose(0, 2, 1, 3) \
                .reshape(bsz, width, dim)
        if k.requires_grad:
            gk = ((np.swapaxes(d_scores, -1, -2) @ qh) * inv_scale) \
                .transpose(0, 2, 1, 3).reshape(bsz, width, dim)
        return gq, gk, gv

    return _result("multihead_attention", (q, k, v), out, vjp)


def lstm_step(x: Tensor, h: Tensor, c: Tensor, w: Tensor, b: Tensor):
    """One fused LSTM cell step on 1-D state vectors.

    Gate pre-activations come from ``concat(x, h) @ w + b`` with ``w`` of
    shape ``(in + hidden, 4 * hidden)`` and gate order (input, forget,
    output, candidate). Returns ``(h_next, c_next)``.
    """
    hid = h.shape[0]
    if x.data.ndim != 1 or h.data.ndim != 1 or c.shape != (hid,):
        raise ShapeMismatch("lstm_step", x.shape, h.shape, c.shape)
    if w.shape != (x.shape[0] + hid, 4 * hid) or b.shape != (4 * hid,):
        raise ShapeMismatch("lstm_step", w.shape, (x.shape[0] + hid, 4 * hid))
    xh = np.concatenate([x.data, h.data])
    z = xh @ w.data + b.data
    zi, zf, zo, zg = z[:hid], z[hid:2 * hid], z[2 * hid:3 * hid], z[3 * hid:]
    gi, gf, go = _sigmoid_np(zi), _sigmoid_np(zf), _sigmoid_np(zo)
    gg = np.tanh(zg)
    c2 = gf * c.data + gi * gg
    tc2 = np.tanh(c2)
    h2 = go * tc2

    rg = any(t.requires_grad for t in (x, h, c, w, b))
    out_h = Tensor(h2, requires_grad=rg)
    out_c = Tensor(c2, requires_grad=rg)

    def vjp(gh, gc):
        dgo = gh * tc2
        dc2 = gc + gh * go * (1.0 - tc2 * tc2)
        dgf = dc2 * c.data
        dgi = dc2 * gg
        dgg = dc2 * gi
        dz = np.concatenate([
            dgi * gi * (1.0 - gi),
            dgf * gf * (1.0 - gf),
            dgo * go * (1.0 - go),
            dgg * (1.0 - gg * gg),
        ])
        gxh = w.data @ dz if (x.requires_grad or h.requires_grad) else None
        return (
            gxh[:x.shape[0]] if x.requires_grad else None,
            gxh[x.shape[0]:] if h.requires_grad else None,
            dc2 * gf if c.requires_grad else None,
            np.outer(xh, dz) if w.requires_grad else None,
            dz if b.requires_grad else None,
        )

    tape = active_tape()
    if rg and tape is not None:
        tape.record("lstm_step", (x, h, c, w, b), (out_h, out_c), vjp)
    return out_h, out_c


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
