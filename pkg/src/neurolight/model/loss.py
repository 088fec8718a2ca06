"""Training and evaluation objective."""

from __future__ import annotations

import numpy as np

from ..tensor import Tensor, absolute, mul, sub, sum_all


def nmae(pred: Tensor, target) -> Tensor:
    """Normalized mean absolute error, averaged over the batch.

    Each item is normalized by its own target L1 norm, so devices with
    strong and weak fields weigh equally.  The target is a constant: no
    gradient flows into it.
    """
    if not isinstance(pred, Tensor):
        pred = Tensor(pred)
    t = np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"prediction {pred.shape} vs target {t.shape}")
    b = t.shape[0]
    norms = np.abs(t).reshape(b, -1).sum(axis=1)
    if np.any(norms < np.finfo(t.dtype).tiny):
        raise ValueError("zero-norm target item; degenerate record")
    w = (1.0 / (b * norms)).astype(t.dtype).reshape((b,) + (1,) * (t.ndim - 1))
    return sum_all(mul(absolute(sub(pred, t)), w))
