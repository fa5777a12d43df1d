"""Dense 4-D tensors with reverse-mode automatic differentiation.

Every value flowing through the engine is an (N, C, H, W) array.  Network
activations use the batch/channel/spatial convention; convolution weights are
(C_out, C_in, k, k); per-channel vectors such as biases and batch-norm scales
are stored as (1, C, 1, 1); scalars (losses) as (1, 1, 1, 1).

Operations in :mod:`rsnlab.engine.ops` record a backward closure on their
output tensor.  Calling :meth:`Tensor.backward` on a scalar walks the recorded
tape in reverse topological order and accumulates gradients into ``.grad``.
"""

from __future__ import annotations

import contextlib

import numpy as np

from ..errors import GraphError, ShapeError

SUPPORTED_DTYPES = (np.float32, np.float64)

# When False, ops skip tape construction entirely (inference / finite
# differences).  Toggled by the no_grad() context manager.
_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A 4-D float array with an optional same-shape gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in SUPPORTED_DTYPES:
            if not np.issubdtype(arr.dtype, np.number):
                raise ShapeError(f"tensor data must be numeric, got dtype {arr.dtype}")
            arr = arr.astype(np.float32)
        if arr.ndim != 4:
            raise ShapeError(f"tensors are (N, C, H, W); got {arr.ndim} dimension(s) {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.name = name
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()

    # -- constructors ------------------------------------------------------

    @staticmethod
    def scalar(value: float, dtype=np.float32) -> "Tensor":
        return Tensor(np.full((1, 1, 1, 1), value, dtype=dtype))

    @staticmethod
    def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> "Tensor":
        return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)

    # -- views -------------------------------------------------------------

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{tag})"

    # -- autodiff ----------------------------------------------------------

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match tensor shape {self.shape}")
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Reverse-mode sweep from this scalar through the recorded tape."""
        if self.data.size != 1:
            raise ShapeError(f"backward() starts from a scalar, got shape {self.shape}")
        if self._backward is None and not self._parents:
            raise GraphError("backward called before any differentiable forward pass")

        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- light operator sugar (defined in ops, bound late) ------------------

    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)


def make_result(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op result, attaching the tape entry when recording is on."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def check_same_dtype(*tensors: Tensor) -> None:
    dtypes = {t.data.dtype for t in tensors}
    if len(dtypes) > 1:
        raise ShapeError(f"mixed dtypes in one operation: {sorted(d.name for d in dtypes)}")
