"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`Tape` records every operation whose inputs live on it.  Leaves are
created with :meth:`Tape.leaf`; tensors built without a tape are constants
and carry no gradient.  Shapes are never broadcast implicitly: every op checks
its operands and the few ops that spread a vector across rows (``add_bias``)
say so in their name.

Example::

    tape = Tape()
    x = tape.leaf(np.array([3.0]))
    y = tape.leaf(np.array([4.0]))
    grads = tape.backward(total(multiply(x, y)))
    grads[x]  # array([4.])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "Tape",
    "Gradients",
    "constant",
    "matmul",
    "elementwise",
    "add",
    "subtract",
    "multiply",
    "scale",
    "add_bias",
    "sigmoid",
    "tanh",
    "exp",
    "log",
    "clamp_min",
    "concat",
    "stack",
    "take",
    "slice_axis",
    "reshape",
    "transpose",
    "softmax",
    "total",
    "mean",
    "gather_rows",
    "pick",
    "numeric_gradient",
    "gradcheck",
]


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class Tensor:
    """Immutable float64 array, optionally attached to a tape node."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape: Tape | None = None, node: int | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.node = node

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        where = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}{where})"


def constant(value) -> Tensor:
    data = np.array(value, dtype=np.float64)
    _check_finite(data, "constant")
    return Tensor(data)


@dataclass
class _Node:
    parents: tuple[int, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None
    shape: tuple[int, ...]


class Gradients(dict):
    """Leaf gradients keyed by node id; also indexable by the leaf tensor."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            key = key.node
        return super().__getitem__(key)


class Tape:
    """Append-only record of operations.  Single writer."""

    def __init__(self):
        self._nodes: list[_Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, value) -> Tensor:
        data = np.array(value, dtype=np.float64)
        _check_finite(data, "leaf")
        self._nodes.append(_Node((), None, data.shape))
        return Tensor(data, self, len(self._nodes) - 1)

    def leaves(self) -> list[int]:
        return [i for i, n in enumerate(self._nodes) if n.backward is None]

    def record(self, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
        ids = tuple(p.node if p.tape is self else -1 for p in parents)
        self._nodes.append(_Node(ids, backward, data.shape))
        return Tensor(data, self, len(self._nodes) - 1)

    def backward(self, root: Tensor) -> Gradients:
        """Accumulate d(root)/d(leaf) for every leaf on this tape.

        Leaves the root does not depend on receive zeros.
        """
        if root.tape is not self:
            raise ValueError("root tensor is not recorded on this tape")
        if root.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
        pending: list[np.ndarray | None] = [None] * (root.node + 1)
        pending[root.node] = np.ones(root.shape)
        grads = Gradients()
        for i in range(root.node, -1, -1):
            g = pending[i]
            node = self._nodes[i]
            if node.backward is None:
                grads[i] = g if g is not None else np.zeros(node.shape)
                continue
            if g is None:
                continue
            pending[i] = None
            for pid, pg in zip(node.parents, node.backward(g)):
                if pid < 0 or pg is None:
                    continue
                if pending[pid] is None:
                    pending[pid] = pg
                else:
                    pending[pid] = pending[pid] + pg
        for i in range(root.node + 1, len(self._nodes)):
            if self._nodes[i].backward is None:
                grads[i] = np.zeros(self._nodes[i].shape)
        return grads


def _check_finite(data: np.ndarray, op: str) -> None:
    # the sum is finite whenever every entry is; only fall back on the full
    # scan when it is not (overflowing sums of finite values)
    if np.isfinite(data.sum()):
        return
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


def _result(op: str, data: np.ndarray, parents: Sequence[Tensor], backward) -> Tensor:
    _check_finite(data, op)
    tape = None
    for p in parents:
        if p.tape is not None:
            if tape is not None and p.tape is not tape:
                raise ValueError(f"{op}: operands are recorded on different tapes")
            tape = p.tape
    if tape is None:
        return Tensor(data)
    return tape.record(data, parents, backward)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# -- linear algebra ---------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of 2-D operands, or batched product of 3-D operands
    sharing the leading batch dimension."""
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        ad, bd = a.data, b.data

        def backward(g):
            return g @ bd.T, ad.T @ g

    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
        ad, bd = a.data, b.data

        def backward(g):
            return g @ bd.transpose(0, 2, 1), ad.transpose(0, 2, 1) @ g

    else:
        raise ShapeError(f"matmul: unsupported ranks {a.ndim} and {b.ndim}")
    return _result("matmul", a.data @ b.data, (a, b), backward)


# -- elementwise ------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b), lambda g: (g, g))


def subtract(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("subtract", a, b)
    return _result("subtract", a.data - b.data, (a, b), lambda g: (g, -g))


def multiply(a: Tensor, b: Tensor) -> Tensor:
    _same_shape("multiply", a, b)
    ad, bd = a.data, b.data
    return _result("multiply", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(x: Tensor, factor: float) -> Tensor:
    return _result("scale", x.data * factor, (x,), lambda g: (g * factor,))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add vector ``b`` to every row along the last axis of ``x``."""
    if b.ndim != 1 or x.shape[-1:] != b.shape:
        raise ShapeError(f"add_bias: {x.shape} + {b.shape}")
    lead = tuple(range(x.ndim - 1))
    return _result("add_bias", x.data + b.data, (x, b), lambda g: (g, g.sum(axis=lead)))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return _result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _result("tanh", t, (x,), lambda g: (g * (1.0 - t * t),))


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)
    return _result("exp", e, (x,), lambda g: (g * e,))


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise NonFiniteError("log of a non-positive value")
    xd = x.data
    return _result("log", np.log(xd), (x,), lambda g: (g / xd,))


def clamp_min(x: Tensor, floor: float) -> Tensor:
    """max(x, floor); no gradient reaches clamped entries."""
    keep = x.data >= floor
    return _result("clamp_min", np.maximum(x.data, floor), (x,), lambda g: (g * keep,))


_ELEMENTWISE = {"sigmoid": sigmoid, "tanh": tanh, "multiply": multiply, "add": add}


def elementwise(op: str, *tensors: Tensor) -> Tensor:
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*tensors)


# -- structure --------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat of nothing")
    ndim = tensors[0].ndim
    axis = axis % ndim
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != ndim or t.shape[:axis] + t.shape[axis + 1 :] != ref[:axis] + ref[axis + 1 :]:
            raise ShapeError(f"concat: {t.shape} does not align with {ref} on axis {axis}")
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return _result("concat", data, tensors, lambda g: np.split(g, cuts, axis=axis))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("stack of nothing")
    for t in tensors[1:]:
        _same_shape("stack", tensors[0], t)
    data = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)
    return _result(
        "stack", data, tensors, lambda g: [np.take(g, i, axis=axis) for i in range(n)]
    )


def take(x: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one position along ``axis``, dropping that axis."""
    axis = axis % x.ndim
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = index
        out[tuple(sl)] = g
        return (out,)

    return _result("take", np.take(x.data, index, axis=axis), (x,), backward)


def slice_axis(x: Tensor, start: int, stop: int, axis: int = -1) -> Tensor:
    axis = axis % x.ndim
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[sl] = g
        return (out,)

    return _result("slice", x.data[sl], (x,), backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return _result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes: Sequence[int] | None = None) -> Tensor:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result(
        "transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),)
    )


# -- reductions and normalisation -------------------------------------------


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Softmax along ``axis`` with max subtraction."""
    if x.shape[axis] < 1:
        raise ShapeError("softmax over an empty axis")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result("softmax", s, (x,), backward)


def total(x: Tensor) -> Tensor:
    shape = x.shape
    return _result("total", np.array(x.data.sum()), (x,), lambda g: (np.full(shape, g),))


def mean(x: Tensor) -> Tensor:
    shape, n = x.shape, x.data.size
    return _result(
        "mean", np.array(x.data.mean()), (x,), lambda g: (np.full(shape, g / n),)
    )


def gather_rows(table: Tensor, ids) -> Tensor:
    """Rows of a 2-D table indexed by an integer array of any shape.

    The gradient scatters back into the gathered rows only.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError(f"gather_rows needs a 2-D table, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")
    shape = table.shape

    def backward(g):
        out = np.zeros(shape)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, shape[1]))
        return (out,)

    return _result("gather_rows", table.data[ids], (table,), backward)


def pick(x: Tensor, index) -> Tensor:
    """``out[b] = x[b, index[b]]`` for a 2-D ``x``."""
    index = np.asarray(index, dtype=np.int64)
    if x.ndim != 2 or index.shape != (x.shape[0],):
        raise ShapeError(f"pick: {x.shape} with index shape {index.shape}")
    if index.size and (index.min() < 0 or index.max() >= x.shape[1]):
        raise IndexError("pick index out of range")
    rows = np.arange(x.shape[0])
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        out[rows, index] = g
        return (out,)

    return _result("pick", x.data[rows, index], (x,), backward)


# -- finite-difference checking ---------------------------------------------


def numeric_gradient(fn: Callable[..., float], arrays: Sequence[np.ndarray], h: float = 1e-5):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. each array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gflat = a.reshape(-1), g.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + h
            up = fn(*arrays)
            flat[k] = orig - h
            down = fn(*arrays)
            flat[k] = orig
            gflat[k] = (up - down) / (2 * h)
        out.append(g)
    return out


def gradcheck(
    build: Callable[..., Tensor], arrays: Iterable[np.ndarray], h: float = 1e-5
) -> float:
    """Largest |analytic - numeric| / max(1, |analytic|) over every input entry.

    ``build`` maps input tensors to a scalar tensor; it is called once on a
    tape for the analytic gradient and repeatedly on constants for the
    numeric one.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tape = Tape()
    leaves = [tape.leaf(a) for a in arrays]
    grads = tape.backward(build(*leaves))
    numeric = numeric_gradient(
        lambda *xs: float(build(*(Tensor(x) for x in xs)).data), arrays, h
    )
    worst = 0.0
    for leaf, num in zip(leaves, numeric):
        ana = grads[leaf]
        err = np.abs(ana - num) / np.maximum(1.0, np.abs(ana))
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
