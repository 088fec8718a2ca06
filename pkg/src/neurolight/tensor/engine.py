"""Dense-array tensors with reverse-mode automatic differentiation.

The engine is deliberately small: a ``Tensor`` wraps one real numpy array
(complex quantities live as paired real channels at the call sites), and a
``Tape`` records every differentiable operation executed while it is active.
Recording order is creation order, which is already topological, so
``Tape.backward`` replays the list once in reverse and accumulates vector-
Jacobian products into ``Tensor.grad``.

No tape active means no recording: forward passes outside a ``with Tape():``
block allocate nothing beyond their outputs and are safe to run concurrently.
"""

from __future__ import annotations

import numpy as np

_TAPE_STACK: list["Tape"] = []

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A real-valued dense array tracked by the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            if np.iscomplexobj(arr):
                raise TypeError(
                    "complex data must be stored as paired real channels"
                )
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        """The underlying array (no copy); treat as read-only."""
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Run reverse-mode accumulation from this scalar via the active tape."""
        if not _TAPE_STACK:
            raise RuntimeError("backward() requires an active Tape")
        _TAPE_STACK[-1].backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


class _Node:
    __slots__ = ("out", "parents", "fn")

    def __init__(self, out, parents, fn):
        self.out = out
        self.parents = parents
        self.fn = fn


class Tape:
    """Ordered record of operations; reverse replay computes gradients."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        popped = _TAPE_STACK.pop()
        assert popped is self

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, parents: tuple, fn) -> None:
        self._nodes.append(_Node(out, parents, fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(tensor) into .grad for every tensor that
        requires grad and contributed to loss under this tape."""
        if loss.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        for node in reversed(self._nodes):
            g = node.out.grad
            if g is None:
                continue
            grads = node.fn(g)
            for parent, pg in zip(node.parents, grads):
                if pg is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = pg
                else:
                    parent.grad = parent.grad + pg

    def clear(self) -> None:
        self._nodes.clear()


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def record(out: Tensor, parents: tuple, fn) -> None:
    """Attach a backward closure to the active tape, if recording applies."""
    tape = active_tape()
    if tape is not None and out.requires_grad:
        tape.record(out, parents, fn)


def result(data: np.ndarray, parents: tuple, fn) -> Tensor:
    """Build an op output, wiring requires_grad propagation and recording."""
    needs = any(p.requires_grad for p in parents) and active_tape() is not None
    out = Tensor(data, requires_grad=needs)
    if needs:
        record(out, parents, fn)
    return out
