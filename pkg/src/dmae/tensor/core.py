"""Dense tensors with a reverse-mode gradient tape.

Every differentiable operation appends a :class:`Node` to the active
:class:`Tape`.  Because operations are recorded in execution order the tape is
already topologically sorted, so :func:`backward` is a single reverse sweep.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32


class ContractError(ValueError):
    """Raised when an operation is called outside its documented contract."""


class DimensionError(ContractError):
    """Raised on incompatible tensor shapes."""


class Node:
    __slots__ = ("index", "parents", "backward_fn", "grad", "freed")

    def __init__(self, index: int, parents: tuple, backward_fn: Callable):
        self.index = index
        self.parents = parents
        self.backward_fn = backward_fn
        self.grad = None
        self.freed = False

    def free(self) -> None:
        self.parents = ()
        self.backward_fn = None
        self.grad = None
        self.freed = True


class Tape:
    """Ordered record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, out: "Tensor", parents: Sequence["Tensor"], backward_fn: Callable) -> None:
        node = Node(len(self.nodes), tuple(parents), backward_fn)
        self.nodes.append(node)
        out._node = node
        out._tape = self
        out.requires_grad = True

    def backward(self, loss: "Tensor") -> None:
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
        node = loss._node
        if node is None or node.freed or loss._tape is not self:
            if loss.requires_grad and loss._node is None:
                # loss is itself a leaf
                _accumulate(loss, np.ones_like(loss.data))
                return
            raise ContractError("loss was not recorded on this tape")

        node.grad = np.ones_like(loss.data)
        for current in reversed(self.nodes[: node.index + 1]):
            g = current.grad
            if g is None:
                continue
            parent_grads = current.backward_fn(g)
            for parent, pg in zip(current.parents, parent_grads):
                if pg is None or not parent.requires_grad:
                    continue
                pnode = parent._node
                if pnode is None or pnode.freed:
                    _accumulate(parent, pg)
                elif pnode.grad is None:
                    pnode.grad = pg
                else:
                    pnode.grad = pnode.grad + pg
        self.clear()

    def clear(self) -> None:
        for node in self.nodes:
            node.free()
        self.nodes = []


def _accumulate(leaf: "Tensor", g: np.ndarray) -> None:
    g = np.asarray(g, dtype=leaf.data.dtype)
    if g.shape != leaf.data.shape:
        raise DimensionError(f"gradient shape {g.shape} != value shape {leaf.data.shape}")
    if leaf.grad is None:
        leaf.grad = g.copy()
    else:
        leaf.grad = leaf.grad + g


_tape_stack: list[Tape] = []
_default_tape = Tape()
_grad_enabled = True


def current_tape() -> Tape:
    return _tape_stack[-1] if _tape_stack else _default_tape


@contextlib.contextmanager
def recording(tape: Optional[Tape] = None) -> Iterator[Tape]:
    """Record operations onto ``tape`` (a fresh one by default)."""
    tape = Tape() if tape is None else tape
    _tape_stack.append(tape)
    try:
        yield tape
    finally:
        _tape_stack.pop()


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
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
    """An n-dimensional float array that can take part in a gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_node", "_tape", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: Optional[str] = None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data)
        if dtype is None:
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else DEFAULT_DTYPE
        self.data = arr.astype(dtype, copy=False)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._node: Optional[Node] = None
        self._tape: Optional[Tape] = None
        self.name = name

    # -- introspection -------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def node_id(self) -> Optional[int]:
        if self._node is None or self._node.freed:
            return None
        return self._node.index

    @property
    def is_leaf(self) -> bool:
        return self._node is None or self._node.freed

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators (implemented in ops) --------------------------------
    def __add__(self, other):
        return _ops().add(self, other)

    def __radd__(self, other):
        return _ops().add(other, self)

    def __sub__(self, other):
        return _ops().sub(self, other)

    def __rsub__(self, other):
        return _ops().sub(other, self)

    def __mul__(self, other):
        return _ops().mul(self, other)

    def __rmul__(self, other):
        return _ops().mul(other, self)

    def __truediv__(self, other):
        return _ops().div(self, other)

    def __rtruediv__(self, other):
        return _ops().div(other, self)

    def __neg__(self):
        return _ops().neg(self)

    def __pow__(self, exponent: float):
        return _ops().power(self, exponent)

    def __matmul__(self, other):
        return _ops().matmul(self, other)

    def __getitem__(self, index):
        return _ops().getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False):
        return _ops().sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return _ops().mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops().reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return _ops().transpose(self, axes or None)

    @property
    def T(self):
        return _ops().transpose(self, None)

    def exp(self):
        return _ops().exp(self)

    def log(self):
        return _ops().log(self)

    def tanh(self):
        return _ops().tanh(self)

    def abs(self):
        return _ops().abs(self)

    def sqrt(self):
        return _ops().sqrt(self)


def _ops():
    from dmae.tensor import ops

    return ops


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if dtype is None:
        dtype = np.asarray(x).dtype if np.asarray(x).dtype in (np.float32, np.float64) else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` and record it on the active tape when a parent needs grad."""
    out = Tensor(data, dtype=data.dtype)
    if _grad_enabled and any(p.requires_grad for p in parents):
        current_tape().record(out, parents, backward_fn)
    return out


def backward(loss: Tensor, tape: Optional[Tape] = None) -> None:
    """Populate ``.grad`` on every requires-grad leaf reachable from ``loss``.

    Gradients accumulate into existing leaf ``.grad`` arrays.  The tape is
    freed afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if tape is None:
        tape = loss._tape if loss._tape is not None else current_tape()
    tape.backward(loss)
