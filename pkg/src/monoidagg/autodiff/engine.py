"""Define-by-run reverse-mode autodiff tape.

A single global tape records operations whose inputs require gradients; the
tape is rebuilt on every forward pass (ragged multiset batches make a static
graph awkward). Node ids are append-only, so reverse iteration is already a
reverse topological order.

Storage dtype is float32. Gradient checking re-runs fragments on float64
copies of the parameters; operations compute in whatever dtype their inputs
carry, so the same code serves both modes.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "AutodiffError",
    "ShapeError",
    "GraphError",
    "Tensor",
    "Tape",
    "backward",
    "no_grad",
    "grad_enabled",
    "record",
    "active_tape",
    "tensor",
    "constant",
    "zeros",
]

_DEBUG = bool(os.environ.get("MONOID_AGG_DEBUG"))


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class GraphError(AutodiffError):
    pass


class Tape:
    """Append-only record of one forward pass.

    Each entry is (op kind, input node ids, backward fn, leaf tensor or None).
    For leaf entries the backward fn is None and the tensor reference is kept
    so gradients can be deposited on it after the reverse sweep.
    """

    __slots__ = ("kinds", "inputs", "backwards", "leaves", "consumed")

    def __init__(self):
        self.kinds: list[str] = []
        self.inputs: list[tuple[int, ...]] = []
        self.backwards: list[Callable | None] = []
        self.leaves: list["Tensor | None"] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self.kinds)

    def append(self, kind: str, input_ids: tuple[int, ...], bwd, leaf) -> int:
        self.kinds.append(kind)
        self.inputs.append(input_ids)
        self.backwards.append(bwd)
        self.leaves.append(leaf)
        return len(self.kinds) - 1


_tape: Tape | None = None
_epoch: int = 0
_grad_enabled: bool = True


def active_tape() -> Tape:
    """The tape ops currently record onto, creating a fresh one if needed."""
    global _tape, _epoch
    if _tape is None or _tape.consumed:
        _tape = Tape()
        _epoch += 1
    return _tape


def reset_graph() -> None:
    global _tape, _epoch
    _tape = None
    _epoch += 1


class no_grad:
    """Context manager that disables tape recording (evaluation mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """Dense n-d float array, optionally attached to the active tape."""

    __slots__ = ("data", "requires_grad", "node_id", "epoch", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=np.float32):
        arr = np.asarray(data)
        if arr.dtype != np.float32 and arr.dtype != np.float64:
            arr = arr.astype(dtype)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.epoch = -1
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Operator sugar; implementations live in ops.py and are attached there to
    # avoid a circular import.
    def __add__(self, other):
        return _OPS["add"](self, other)

    def __radd__(self, other):
        return _OPS["add"](self, other)

    def __sub__(self, other):
        return _OPS["sub"](self, other)

    def __rsub__(self, other):
        return _OPS["sub"](constant(other, like=self), self)

    def __mul__(self, other):
        return _OPS["mul"](self, other)

    def __rmul__(self, other):
        return _OPS["mul"](self, other)

    def __matmul__(self, other):
        return _OPS["matmul"](self, other)


_OPS: dict[str, Callable] = {}


def _register_sugar(name: str, fn: Callable) -> None:
    _OPS[name] = fn


def tensor(data, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def constant(value, like: Tensor | None = None) -> Tensor:
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(value, dtype=dtype))


def zeros(shape, requires_grad: bool = False, dtype=np.float32) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


def _ensure_node(tape: Tape, t: Tensor) -> int:
    """Register a tensor created outside the current tape as a leaf."""
    if t.epoch == _epoch and t.node_id is not None:
        return t.node_id
    nid = tape.append("leaf", (), None, t if t.requires_grad else None)
    t.node_id = nid
    t.epoch = _epoch
    return nid


def record(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray, bwd: Callable) -> Tensor:
    """Create the op's output tensor, recording it when gradients are needed.

    ``bwd(upstream)`` must return one gradient array (or None) per input, each
    shaped like the corresponding input's data.
    """
    if not _grad_enabled or not any(t.requires_grad for t in inputs):
        return Tensor(out_data)
    tape = active_tape()
    ids = tuple(_ensure_node(tape, t) for t in inputs)
    out = Tensor(out_data, requires_grad=True)
    out.node_id = tape.append(kind, ids, bwd, None)
    out.epoch = _epoch
    return out


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar loss.

    Populates ``.grad`` on every leaf tensor registered in the tape (zeros for
    leaves with no path to the loss) and returns the full node-id -> gradient
    map. The tape is consumed; the next recorded op starts a fresh graph.
    """
    global _tape
    if loss.data.size != 1:
        raise GraphError(f"backward: loss must be scalar, got shape {loss.data.shape}")
    tape = _tape
    if tape is None or tape.consumed:
        raise GraphError("backward: no active graph (backward called twice without a new forward?)")
    if loss.epoch != _epoch or loss.node_id is None:
        raise GraphError("backward: loss is not connected to the active graph")

    n = len(tape)
    grads: list[np.ndarray | None] = [None] * n
    grads[loss.node_id] = np.ones_like(loss.data)

    backwards = tape.backwards
    inputs = tape.inputs
    for i in range(loss.node_id, -1, -1):
        g = grads[i]
        if g is None:
            continue
        bwd = backwards[i]
        if bwd is None:
            continue
        input_grads = bwd(g)
        for nid, gin in zip(inputs[i], input_grads):
            if gin is None:
                continue
            if grads[nid] is None:
                grads[nid] = gin
            else:
                grads[nid] = grads[nid] + gin

    result: dict[int, np.ndarray] = {}
    for i, leaf in enumerate(tape.leaves):
        if leaf is None:
            continue
        g = grads[i]
        if g is None:
            g = np.zeros_like(leaf.data)
        if _DEBUG and g.shape != leaf.data.shape:
            raise ShapeError(f"backward: leaf gradient shape {g.shape} != value shape {leaf.data.shape}")
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        result[i] = g
    for i, g in enumerate(grads):
        if g is not None:
            result.setdefault(i, g)

    tape.consumed = True
    _tape = None
    return result
