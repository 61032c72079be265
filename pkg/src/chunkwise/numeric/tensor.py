"""Dense tensors with a tape for reverse-mode differentiation.

Tensors wrap a numpy array plus a ``requires_grad`` flag. Primitive
operations (see :mod:`chunkwise.numeric.ops`) append a node to the active
:class:`Tape` whenever any differentiable input is involved, so the tape
ends up in execution (hence topological) order and can be walked backwards
to accumulate gradients.

Tensors are treated as immutable after construction; the only sanctioned
mutations are gradient accumulation during a backward pass and parameter
updates by an optimizer between steps. A tape is confined to one thread;
independent tapes may run concurrently.
"""

from __future__ import annotations

import threading

import numpy as np

FLOAT_DTYPES = (np.float32, np.float64)


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not conform for a primitive."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = shapes
        desc = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {desc}")


class Tensor:
    """A dense row-major array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeMismatch("accumulate_grad", g.shape, self.data.shape)
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad = self.grad + g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag}, requires_grad={self.requires_grad})"


class Node:
    """One executed primitive: inputs, outputs, and its vector-Jacobian hook."""

    __slots__ = ("op", "inputs", "outputs", "vjp")

    def __init__(self, op: str, inputs, outputs, vjp):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.vjp = vjp


_ACTIVE = threading.local()


def active_tape() -> "Tape | None":
    stack = getattr(_ACTIVE, "stack", None)
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed primitives, enabling reverse traversal.

    Use as a context manager around the forward computation, then call
    :meth:`backward` on a scalar loss produced inside the context.
    """

    def __init__(self):
        self.nodes: list[Node] = []

    def __enter__(self) -> "Tape":
        stack = getattr(_ACTIVE, "stack", None)
        if stack is None:
            stack = _ACTIVE.stack = []
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _ACTIVE.stack.pop()

    def record(self, op: str, inputs, outputs, vjp) -> None:
        self.nodes.append(Node(op, tuple(inputs), tuple(outputs), vjp))

    def backward(self, loss: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate gradients of ``loss`` into every tensor that requires them.

        Returns a map from tensor to its gradient array. Tensors with
        ``requires_grad=False`` (frozen parameters, constants) receive none.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            out_grads = [grads.get(id(o)) for o in node.outputs]
            if all(g is None for g in out_grads):
                continue
            filled = [g if g is not None else np.zeros_like(o.data)
                      for g, o in zip(out_grads, node.outputs)]
            in_grads = node.vjp(*filled)
            for t, g in zip(node.inputs, in_grads):
                if g is None or not isinstance(t, Tensor) or not t.requires_grad:
                    continue
                prev = grads.get(id(t))
                grads[id(t)] = g if prev is None else prev + g
        result: dict[Tensor, np.ndarray] = {}
        seen: set[int] = set()
        for node in self.nodes:
            for t in node.inputs + node.outputs:
                if isinstance(t, Tensor) and t.requires_grad and id(t) not in seen:
                    seen.add(id(t))
                    g = grads.get(id(t))
                    if g is not None:
                        t.accumulate_grad(g)
                        result[t] = t.grad
        return result


# Convenience alias matching the domain vocabulary: the tape *is* the
# record of the computation.
ComputationRecord = Tape
