"""Finite-difference gradient verification for the autodiff engine."""

from __future__ import annotations

import numpy as np

from .engine import Tape, Tensor


def gradcheck(fn, inputs, eps: float = 1e-6) -> float:
    """Compare reverse-mode gradients of ``fn(*inputs)`` against central
    finite differences.

    ``fn`` must be deterministic and return a scalar Tensor.  ``inputs`` are
    float64 Tensors with ``requires_grad=True``; every element of every input
    is perturbed.  Returns the worst relative error across all inputs, where
    the relative error for one input is ``max|fd - analytic|`` scaled by the
    largest gradient magnitude seen (floored at 1e-8).
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise TypeError("gradcheck requires float64 inputs")
        t.zero_grad()

    with Tape() as tape:
        loss = fn(*inputs)
        tape.backward(loss)
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        for t in inputs
    ]

    worst = 0.0
    for t, an in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = fn(*inputs).item()
            flat[i] = orig - eps
            fm = fn(*inputs).item()
            flat[i] = orig
            fd[i] = (fp - fm) / (2.0 * eps)
        an_flat = an.reshape(-1)
        denom = max(np.abs(an_flat).max(initial=0.0), np.abs(fd).max(initial=0.0), 1e-8)
        rel = np.abs(fd - an_flat).max(initial=0.0) / denom
        worst = max(worst, rel)
    return worst
