"""Dense tensors with tape-based reverse-mode differentiation.

Operations are recorded on the innermost active :class:`Tape` whenever at
least one input requires a gradient. Outside any tape the same code runs as a
plain numpy forward pass, which is what evaluation and finite differences use.
"""
from __future__ import annotations

import logging
import threading
from typing import Any, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of the gradient tape (non-scalar loss, dead tape, ...)."""


_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Context:
    """Scratch space an operation uses to pass data from forward to backward."""

    needs: tuple = ()

    def save(self, **kwargs):
        self.__dict__.update(kwargs)


class _Record:
    __slots__ = ("fn", "ctx", "inputs", "output")

    def __init__(self, fn, ctx, inputs, output):
        self.fn = fn
        self.ctx = ctx
        self.inputs = inputs
        self.output = output


class Tape:
    """Ordered record of differentiable operations for one forward pass.

    Use as a context manager around the forward computation, then call
    :meth:`backward` once on the scalar loss. A tape can be reused after
    :meth:`reset`.
    """

    def __init__(self):
        self.records: list[_Record] = []
        self.consumed = False
        self.last_visited: list[int] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        else:  # pragma: no cover - mismatched nesting
            stack.remove(self)

    @property
    def alive(self) -> bool:
        return not self.consumed

    def reset(self) -> None:
        for rec in self.records:
            rec.output._tape = None
        self.records = []
        self.consumed = False
        self.last_visited = []

    def backward(self, loss: "Tensor") -> None:
        if self.consumed:
            raise TapeError("backward() already ran on this tape; call reset() first")
        if loss._tape is not self:
            raise TapeError("loss was not produced under this tape")
        if loss.data.size != 1:
            raise TapeError(f"backward() needs a scalar loss, got shape {loss.shape}")

        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        visited = []
        for pos in range(len(self.records) - 1, -1, -1):
            rec = self.records[pos]
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            visited.append(pos)
            in_grads = rec.fn.backward(rec.ctx, g)
            if not isinstance(in_grads, tuple):
                in_grads = (in_grads,)
            for t, gi, need in zip(rec.inputs, in_grads, rec.ctx.needs):
                if not need or gi is None:
                    continue
                if gi.shape != t.data.shape:
                    raise DimensionError(
                        f"{rec.fn.__name__}.backward returned grad of shape {gi.shape} "
                        f"for input of shape {t.data.shape}"
                    )
                if t._tape is None:
                    t.grad = gi.astype(t.data.dtype, copy=True) if t.grad is None else t.grad + gi
                else:
                    key = id(t)
                    grads[key] = gi if key not in grads else grads[key] + gi
        self.last_visited = visited
        self.consumed = True


def backward(loss: "Tensor") -> None:
    """Populate ``.grad`` of every leaf reachable from ``loss``."""
    if not isinstance(loss, Tensor) or loss._tape is None:
        raise TapeError("loss is not attached to a live tape")
    loss._tape.backward(loss)


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if dtype is None and not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    return arr


class Tensor:
    """A numpy array plus the bookkeeping reverse mode needs."""

    __array_priority__ = 100

    def __init__(self, data: Any, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._tape: Tape | None = None

    @property
    def shape(self) -> tuple:
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

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        backward(self)

    # arithmetic -------------------------------------------------------
    def _wrap(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        from . import ops
        return ops.add(self, self._wrap(other))

    def __radd__(self, other):
        from . import ops
        return ops.add(self._wrap(other), self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, self._wrap(other))

    def __rsub__(self, other):
        from . import ops
        return ops.sub(self._wrap(other), self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, self._wrap(other))

    def __rmul__(self, other):
        from . import ops
        return ops.mul(self._wrap(other), self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, self._wrap(other))

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(self._wrap(other), self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __pow__(self, p: float):
        from . import ops
        return ops.power(self, p)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, self._wrap(other))

    def __getitem__(self, index):
        from . import ops
        return ops.getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)


class Function:
    """Base class for a differentiable primitive.

    Subclasses implement ``forward(ctx, *arrays, **kwargs) -> ndarray`` and
    ``backward(ctx, grad) -> grad or tuple of grads`` (one per tensor input,
    ``None`` where no gradient is needed).
    """

    @staticmethod
    def forward(ctx: Context, *args, **kwargs) -> np.ndarray:
        raise NotImplementedError

    @staticmethod
    def backward(ctx: Context, grad: np.ndarray):
        raise NotImplementedError

    @classmethod
    def apply(cls, *inputs: Tensor, **kwargs) -> Tensor:
        tensors: Sequence[Tensor] = inputs
        ctx = Context()
        tape = active_tape()
        track = tape is not None and any(t.requires_grad for t in tensors)
        if track:
            ctx.needs = tuple(t.requires_grad for t in tensors)
        out = Tensor(cls.forward(ctx, *[t.data for t in tensors], **kwargs))
        if track:
            out.requires_grad = True
            out._tape = tape
            tape.records.append(_Record(cls, ctx, tuple(tensors), out))
        return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)
