"""Differentiable operation suite over :class:`~monoidagg.autodiff.engine.Tensor`.

Elementwise arithmetic follows numpy broadcasting; gradients are summed back
over broadcast axes. Domain-sensitive ops (sigmoid, binary cross-entropy,
sqrt) are guarded so finite inputs never produce NaN or Inf.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .engine import ShapeError, Tensor, constant, record, _register_sugar

__all__ = [
    "add", "sub", "mul", "smul", "matmul", "concat", "gather_rows",
    "take_slice", "reshape", "stack_rows", "reduce_sum", "reduce_mean",
    "tree_sum", "sorted_tree_sum", "reduce_max0", "reduce_min0",
    "square", "sqrt0", "sigmoid", "tanh_", "gelu", "emax",
    "bce_elem", "bce", "mse",
]

_BCE_EPS = 1e-7


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return constant(x, like=like)


def _check(op: str, *ts: Tensor) -> None:
    for t in ts:
        if t.data.size == 0:
            raise ShapeError(f"{op}: empty tensor of shape {t.data.shape}")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.data.shape} and {b.data.shape} do not conform") from None


def add(a, b) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    _check("add", a, b)
    _broadcast_shape("add", a, b)
    out = a.data + b.data
    ash, bsh = a.data.shape, b.data.shape

    def bwd(up):
        return _unbroadcast(up, ash), _unbroadcast(up, bsh)

    return record("add", (a, b), out, bwd)


def sub(a, b) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    _check("sub", a, b)
    _broadcast_shape("sub", a, b)
    out = a.data - b.data
    ash, bsh = a.data.shape, b.data.shape

    def bwd(up):
        return _unbroadcast(up, ash), _unbroadcast(-up, bsh)

    return record("sub", (a, b), out, bwd)


def mul(a, b) -> Tensor:
    a = _lift(a, b) if not isinstance(a, Tensor) else a
    b = _lift(b, a)
    _check("mul", a, b)
    _broadcast_shape("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd
    ash, bsh = ad.shape, bd.shape

    def bwd(up):
        return _unbroadcast(up * bd, ash), _unbroadcast(up * ad, bsh)

    return record("mul", (a, b), out, bwd)


def smul(a: Tensor, c: float) -> Tensor:
    """Multiply by a python scalar without materializing a constant tensor."""
    _check("smul", a)
    c = float(c)
    out = a.data * c

    def bwd(up):
        return (up * c,)

    return record("smul", (a,), out, bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise TypeError("matmul expects Tensor operands")
    _check("matmul", a, b)
    ad, bd = a.data, b.data
    ok = (
        (ad.ndim == 2 and bd.ndim == 2 and ad.shape[1] == bd.shape[0])
        or (ad.ndim == 1 and bd.ndim == 2 and ad.shape[0] == bd.shape[0])
        or (ad.ndim == 2 and bd.ndim == 1 and ad.shape[1] == bd.shape[0])
    )
    if not ok:
        raise ShapeError(f"matmul: shapes {ad.shape} and {bd.shape} do not conform")
    out = ad @ bd

    if ad.ndim == 2 and bd.ndim == 2:
        def bwd(up):
            return up @ bd.T, ad.T @ up
    elif ad.ndim == 1:
        def bwd(up):
            return bd @ up, np.outer(ad, up)
    else:
        def bwd(up):
            return np.outer(up, bd), ad.T @ up

    return record("matmul", (a, b), out, bwd)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise ShapeError("concat: no tensors given")
    _check("concat", *parts)
    datas = [p.data for p in parts]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[d.shape for d in datas]} do not conform along axis {axis}") from None
    ax = axis if axis >= 0 else out.ndim + axis
    sizes = [d.shape[ax] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(up):
        sl = [slice(None)] * up.ndim
        grads = []
        for i in range(len(sizes)):
            sl[ax] = slice(offsets[i], offsets[i + 1])
            grads.append(up[tuple(sl)])
        return tuple(grads)

    return record("concat", tuple(parts), out, bwd)


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows (axis 0) by integer index array; backward scatter-adds."""
    _check("gather_rows", a)
    idx = np.asarray(idx, dtype=np.intp)
    out = a.data[idx]
    ashape = a.data.shape

    def bwd(up):
        buf = np.zeros(ashape, dtype=up.dtype)
        np.add.at(buf, idx, up)
        return (buf,)

    return record("gather_rows", (a,), out, bwd)


def take_slice(a: Tensor, key) -> Tensor:
    """Static basic slice of a tensor (no fancy indexing)."""
    _check("take_slice", a)
    out = a.data[key]
    if out.size == 0:
        raise ShapeError(f"take_slice: result empty for key {key!r} on shape {a.data.shape}")
    ashape = a.data.shape

    def bwd(up):
        buf = np.zeros(ashape, dtype=up.dtype)
        buf[key] = up
        return (buf,)

    return record("slice", (a,), out, bwd)


def reshape(a: Tensor, shape) -> Tensor:
    _check("reshape", a)
    out = a.data.reshape(shape)
    ashape = a.data.shape

    def bwd(up):
        return (up.reshape(ashape),)

    return record("reshape", (a,), out, bwd)


def stack_rows(parts: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape vectors into a matrix of rows."""
    return concat([reshape(p, (1,) + p.data.shape) for p in parts], axis=0)


def reduce_sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    _check("reduce_sum", a)
    out = a.data.sum(axis=axis, keepdims=keepdims)
    ashape = a.data.shape

    def bwd(up):
        g = up
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ashape).copy(),)

    return record("reduce_sum", (a,), out, bwd)


def reduce_mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    _check("reduce_mean", a)
    out = a.data.mean(axis=axis, keepdims=keepdims)
    ashape = a.data.shape
    count = a.data.size if axis is None else a.data.shape[axis]

    def bwd(up):
        g = up
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, ashape) / count,)

    return record("reduce_mean", (a,), out, bwd)


def _pairwise_sum0(x: np.ndarray) -> np.ndarray:
    """Balanced pairwise reduction over axis 0; odd tail carried to the next
    round. The order is a pure function of the length, so results are
    independent of how callers might split the work."""
    while x.shape[0] > 1:
        k = x.shape[0] // 2
        s = x[0 : 2 * k : 2] + x[1 : 2 * k : 2]
        if x.shape[0] % 2:
            s = np.concatenate([s, x[2 * k :]], axis=0)
        x = s
    return x[0]


def _lexsort_rows(mat: np.ndarray) -> np.ndarray:
    # lexsort treats the LAST key as primary; reverse so column 0 leads.
    return np.lexsort(mat.T[::-1])


def tree_sum(a: Tensor) -> Tensor:
    """Sum over axis 0 in fixed pairwise-tree order."""
    _check("tree_sum", a)
    out = _pairwise_sum0(a.data)
    ashape = a.data.shape

    def bwd(up):
        return (np.broadcast_to(up, ashape).copy(),)

    return record("tree_sum", (a,), out, bwd)


def sorted_tree_sum(a: Tensor) -> Tensor:
    """Sum over axis 0 in canonical order: rows sorted lexicographically, then
    a fixed pairwise tree. The result depends only on the multiset of rows, so
    permuting inputs leaves the output bit-identical. Gradient is uniform (the
    sum is symmetric), so sorting has no backward cost."""
    _check("sorted_tree_sum", a)
    d = a.data
    if d.ndim == 1:
        out = _pairwise_sum0(np.sort(d))
    elif d.ndim == 2:
        out = _pairwise_sum0(d[_lexsort_rows(d)])
    elif d.ndim == 3:
        # (n, B, h): canonicalize each batch column independently.
        acc = np.empty(d.shape[1:], dtype=d.dtype)
        for b in range(d.shape[1]):
            col = d[:, b, :]
            acc[b] = _pairwise_sum0(col[_lexsort_rows(col)])
        out = acc
    else:
        raise ShapeError(f"sorted_tree_sum: unsupported ndim {d.ndim}")
    ashape = d.shape

    def bwd(up):
        return (np.broadcast_to(up, ashape).copy(),)

    return record("sorted_tree_sum", (a,), out, bwd)


def reduce_max0(a: Tensor) -> Tensor:
    """Elementwise max over axis 0; gradient goes to the first (lowest-index)
    argmax along that axis."""
    _check("reduce_max0", a)
    d = a.data
    out = d.max(axis=0)
    am = d.argmax(axis=0)

    def bwd(up):
        buf = np.zeros_like(d)
        np.put_along_axis(buf, am[None], up[None], axis=0)
        return (buf,)

    return record("reduce_max0", (a,), out, bwd)


def reduce_min0(a: Tensor) -> Tensor:
    _check("reduce_min0", a)
    d = a.data
    out = d.min(axis=0)
    am = d.argmin(axis=0)

    def bwd(up):
        buf = np.zeros_like(d)
        np.put_along_axis(buf, am[None], up[None], axis=0)
        return (buf,)

    return record("reduce_min0", (a,), out, bwd)


def square(a: Tensor) -> Tensor:
    _check("square", a)
    d = a.data
    out = d * d

    def bwd(up):
        return (up * (2.0 * d),)

    return record("square", (a,), out, bwd)


def sqrt0(a: Tensor) -> Tensor:
    """sqrt clamped at zero: negative inputs (rounding artifacts) map to 0,
    where the gradient is also 0."""
    _check("sqrt0", a)
    clipped = np.maximum(a.data, 0.0)
    out = np.sqrt(clipped)

    def bwd(up):
        denom = np.where(out > 0.0, 2.0 * out, 1.0)
        return (np.where(out > 0.0, up / denom, 0.0),)

    return record("sqrt0", (a,), out, bwd)


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a: Tensor) -> Tensor:
    _check("sigmoid", a)
    s = _sigmoid_stable(a.data)

    def bwd(up):
        return (up * s * (1.0 - s),)

    return record("sigmoid", (a,), s, bwd)


def tanh_(a: Tensor) -> Tensor:
    _check("tanh", a)
    t = np.tanh(a.data)

    def bwd(up):
        return (up * (1.0 - t * t),)

    return record("tanh", (a,), t, bwd)


_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_A = 0.044715


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    _check("gelu", a)
    x = a.data
    u = _GELU_C * (x + _GELU_A * x * x * x)
    t = np.tanh(u)
    out = 0.5 * x * (1.0 + t)

    def bwd(up):
        du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
        return (up * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du),)

    return record("gelu", (a,), out, bwd)


def emax(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise maximum of two same-shape tensors; ties route the gradient
    to the first argument."""
    _check("emax", a, b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"emax: shapes {a.data.shape} and {b.data.shape} differ")
    ad, bd = a.data, b.data
    mask = ad >= bd
    out = np.where(mask, ad, bd)

    def bwd(up):
        return up * mask, up * (~mask)

    return record("emax", (a, b), out, bwd)


def bce_elem(pred: Tensor, target: Tensor) -> Tensor:
    """Per-element binary cross-entropy on probabilities.

    Probabilities are clamped to [eps, 1-eps] so saturated sigmoids keep the
    loss finite; targets receive no gradient.
    """
    target = _lift(target, pred)
    _check("bce", pred, target)
    _broadcast_shape("bce", pred, target)
    p = np.clip(pred.data, _BCE_EPS, 1.0 - _BCE_EPS)
    y = target.data
    out = -(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    pshape = pred.data.shape

    def bwd(up):
        return (_unbroadcast(up * (p - y) / (p * (1.0 - p)), pshape), None)

    return record("bce", (pred, target), out, bwd)


def bce(pred: Tensor, target) -> Tensor:
    """Mean binary cross-entropy over all elements."""
    return reduce_mean(bce_elem(pred, target))


def mse(pred: Tensor, target) -> Tensor:
    """Mean squared error over all elements."""
    target = _lift(target, pred)
    _check("mse", pred, target)
    if pred.data.shape != target.data.shape:
        raise ShapeError(f"mse: shapes {pred.data.shape} and {target.data.shape} differ")
    diff = pred.data - target.data
    n = diff.size
    out = np.asarray((diff * diff).sum() / n, dtype=pred.data.dtype)

    def bwd(up):
        return up * (2.0 / n) * diff, None

    return record("mse", (pred, target), out, bwd)


_register_sugar("add", add)
_register_sugar("sub", sub)
_register_sugar("mul", mul)
_register_sugar("matmul", matmul)
