"""Central finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from collections.abc import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


class GradCheckError(RuntimeError):
    """Non-finite value met while checking gradients."""


def grad_check(fn: Callable[..., Tensor], points: Sequence[Tensor] | Tensor,
               step: float = 1e-5, sample: int | None = None,
               seed: int = 0) -> float:
    """Compare analytic gradients of a scalar function against central differences.

    Args:
        fn: callable taking the point tensors and returning a scalar Tensor.
        points: tensor or sequence of tensors to differentiate with respect to;
            each must have ``requires_grad=True``.
        step: finite-difference half-step (use 64-bit tensors; differences are
            unreliable at 32-bit).
        sample: if given, check only this many randomly chosen coordinates per
            tensor instead of all of them (seeded; for large parameter sets).

    Returns:
        The maximum over checked coordinates of
        ``|analytic - numeric| / (|analytic| + |numeric| + 1e-12)``.
    """
    if isinstance(points, Tensor):
        points = [points]
    points = list(points)
    if step <= 0:
        raise ValueError("step must be positive")
    for p in points:
        p.zero_grad()
    with Tape() as tape:
        out = fn(*points)
        if out.data.size != 1:
            raise ValueError("grad_check requires a scalar-valued function")
        tape.backward(out)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in points]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, an in zip(points, analytic):
        flat = p.data.reshape(-1)
        n = flat.size
        coords = (np.arange(n) if sample is None or sample >= n
                  else rng.choice(n, size=sample, replace=False))
        an_flat = an.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn(*points).data.reshape(-1)[0])
            flat[i] = orig - step
            down = float(fn(*points).data.reshape(-1)[0])
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            a = float(an_flat[i])
            if not (np.isfinite(numeric) and np.isfinite(a)):
                raise GradCheckError(
                    f"non-finite gradient at {p.name or 'tensor'}[{i}]: "
                    f"analytic={a}, numeric={numeric}")
            err = abs(a - numeric) / (abs(a) + abs(numeric) + 1e-12)
            if err > worst:
                worst = err
    return worst
