"""
Define-by-run reverse-mode automatic differentiation over numpy arrays.

Operations executed inside ``with Tape() as tape:`` on tensors that require
gradients are recorded in execution order; `backward` replays the record in
reverse. Outside of a tape (or inside `no_grad`) the same functions evaluate
plain numpy expressions, so rendering code paths are shared with training.
"""

from __future__ import annotations


__all__ = [
    "Tensor",
    "Node",
    "Tape",
    "no_grad",
    "current_tape",
    "parameter",
    "constant",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "matmul",
    "relu",
    "sigmoid",
    "shifted_softplus",
    "exp",
    "concat",
    "sum",
    "mean",
    "mse",
    "take",
    "take_along",
    "weighted_gather",
    "broadcast_to",
    "reshape",
    "cumsum",
    "detach",
    "backward",
    "numerical_gradient",
    "relative_error",
]

import builtins
import contextlib
import threading
from dataclasses import dataclass
from typing import (
    Callable,
    Dict,
    Iterator,
    List,
    Optional,
    Sequence,
    Tuple,
    Union,
)

import numpy as np
import numpy.typing as npt

from hsnerf.backend import get_dtype
from hsnerf.errors import ShapeError
from hsnerf.numbers import Array


Operand = Union["Tensor", npt.ArrayLike]
VJP = Callable[[Array], Tuple[Optional[Array], ...]]


class Tensor:
    """A dense array with an optional gradient slot.

    Tensors hash and compare by identity so they can key gradient maps.
    """

    __slots__ = ("data", "requires_grad", "grad", "name")

    # make `ndarray <op> Tensor` dispatch to the reflected Tensor operator
    __array_priority__ = 100

    data: Array
    requires_grad: bool
    grad: Optional[Array]
    name: Optional[str]

    def __init__(
        self,
        data: npt.ArrayLike,
        *,
        requires_grad: bool = False,
        name: Optional[str] = None,
        dtype: Optional[npt.DTypeLike] = None,
    ):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None and isinstance(data, np.ndarray):
            dtype = data.dtype if data.dtype.kind == "f" else get_dtype()
        self.data = np.asarray(
            data, dtype=get_dtype() if dtype is None else dtype
        )
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name

    def __repr__(self) -> str:
        label = f", name={self.name!r}" if self.name else ""
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{label}{flag})"

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError("item", self.shape, ())
        return float(self.data.reshape(()))

    def numpy(self) -> Array:
        return self.data

    # algebra

    def __add__(self, other: Operand) -> Tensor:
        return add(self, other)

    def __radd__(self, other: Operand) -> Tensor:
        return add(other, self)

    def __sub__(self, other: Operand) -> Tensor:
        return sub(self, other)

    def __rsub__(self, other: Operand) -> Tensor:
        return sub(other, self)

    def __mul__(self, other: Operand) -> Tensor:
        return mul(self, other)

    def __rmul__(self, other: Operand) -> Tensor:
        return mul(other, self)

    def __truediv__(self, other: Operand) -> Tensor:
        return div(self, other)

    def __rtruediv__(self, other: Operand) -> Tensor:
        return div(other, self)

    def __matmul__(self, other: Operand) -> Tensor:
        return matmul(self, other)

    def __rmatmul__(self, other: Operand) -> Tensor:
        return matmul(other, self)

    def __neg__(self) -> Tensor:
        return neg(self)

    def __getitem__(self, index) -> Tensor:
        return take(self, index)


@dataclass(frozen=True)
class Node:
    """One executed operation: inputs precede the output on the tape."""

    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    vjp: VJP


class _TapeStack(threading.local):
    def __init__(self) -> None:
        self.stack: List[Optional[Tape]] = []


_tapes = _TapeStack()


class Tape:
    """Ordered record of the operations of one forward pass."""

    __slots__ = ("nodes",)

    nodes: List[Node]

    def __init__(self) -> None:
        self.nodes = []

    def __enter__(self) -> Tape:
        _tapes.stack.append(self)
        return self

    def __exit__(self, *exc_info) -> None:
        popped = _tapes.stack.pop()
        assert popped is self, "tapes must be exited in LIFO order"

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes)

    def record(self, node: Node) -> None:
        self.nodes.append(node)


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, e.g. for rendering or finite differences."""
    _tapes.stack.append(None)
    try:
        yield
    finally:
        _tapes.stack.pop()


def current_tape() -> Optional[Tape]:
    return _tapes.stack[-1] if _tapes.stack else None


def parameter(data: npt.ArrayLike, name: Optional[str] = None) -> Tensor:
    """A trainable leaf in the configured dtype."""
    return Tensor(data, requires_grad=True, name=name, dtype=get_dtype())


def constant(data: npt.ArrayLike) -> Tensor:
    return Tensor(data, requires_grad=False)


def _wrap(x: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _apply(op: str, inputs: Tuple[Tensor, ...], out: Array, vjp: VJP) -> Tensor:
    tape = current_tape()
    tracked = tape is not None and builtins.any(
        t.requires_grad for t in inputs
    )
    result = Tensor(out, requires_grad=tracked, dtype=out.dtype)
    if tracked:
        assert tape is not None
        tape.record(Node(op, inputs, result, vjp))
    return result


def _unbroadcast(grad: Array, shape: Tuple[int, ...]) -> Array:
    """Sum out the axes numpy broadcasting added or stretched."""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# elementwise


def add(a: Operand, b: Operand) -> Tensor:
    ta = _wrap(a, b if isinstance(b, Tensor) else None)
    tb = _wrap(b, ta)
    _broadcast_shape("add", ta, tb)

    def vjp(g: Array):
        return _unbroadcast(g, ta.shape), _unbroadcast(g, tb.shape)

    return _apply("add", (ta, tb), ta.data + tb.data, vjp)


def sub(a: Operand, b: Operand) -> Tensor:
    ta = _wrap(a, b if isinstance(b, Tensor) else None)
    tb = _wrap(b, ta)
    _broadcast_shape("sub", ta, tb)

    def vjp(g: Array):
        return _unbroadcast(g, ta.shape), _unbroadcast(-g, tb.shape)

    return _apply("sub", (ta, tb), ta.data - tb.data, vjp)


def mul(a: Operand, b: Operand) -> Tensor:
    ta = _wrap(a, b if isinstance(b, Tensor) else None)
    tb = _wrap(b, ta)
    _broadcast_shape("mul", ta, tb)

    def vjp(g: Array):
        return (
            _unbroadcast(g * tb.data, ta.shape),
            _unbroadcast(g * ta.data, tb.shape),
        )

    return _apply("mul", (ta, tb), ta.data * tb.data, vjp)


def div(a: Operand, b: Operand) -> Tensor:
    ta = _wrap(a, b if isinstance(b, Tensor) else None)
    tb = _wrap(b, ta)
    _broadcast_shape("div", ta, tb)
    out = ta.data / tb.data

    def vjp(g: Array):
        return (
            _unbroadcast(g / tb.data, ta.shape),
            _unbroadcast(-g * out / tb.data, tb.shape),
        )

    return _apply("div", (ta, tb), out, vjp)


def neg(a: Operand) -> Tensor:
    ta = _wrap(a)
    return _apply("neg", (ta,), -ta.data, lambda g: (-g,))


def relu(a: Operand) -> Tensor:
    ta = _wrap(a)
    mask = ta.data > 0
    out = np.where(mask, ta.data, 0).astype(ta.dtype)
    return _apply("relu", (ta,), out, lambda g: (g * mask,))


def _sigmoid(x: Array) -> Array:
    # overflow-free; exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a: Operand) -> Tensor:
    ta = _wrap(a)
    out = _sigmoid(ta.data)
    return _apply("sigmoid", (ta,), out, lambda g: (g * out * (1.0 - out),))


def shifted_softplus(a: Operand, shift: float = 1.0) -> Tensor:
    """ln(1 + exp(x - shift)); smooth and strictly positive."""
    ta = _wrap(a)
    z = ta.data - shift
    out = np.logaddexp(0.0, z).astype(ta.dtype)
    slope = _sigmoid(z)
    return _apply("shifted_softplus", (ta,), out, lambda g: (g * slope,))


def exp(a: Operand) -> Tensor:
    ta = _wrap(a)
    out = np.exp(ta.data)
    return _apply("exp", (ta,), out, lambda g: (g * out,))


# linear algebra


def matmul(a: Operand, b: Operand) -> Tensor:
    """(..., k) @ (k, n) -> (..., n)."""
    ta = _wrap(a, b if isinstance(b, Tensor) else None)
    tb = _wrap(b, ta)
    if tb.ndim != 2 or ta.ndim < 1 or ta.shape[-1] != tb.shape[0]:
        raise ShapeError("matmul", ta.shape, tb.shape)

    def vjp(g: Array):
        ga = g @ tb.data.T
        k, n = tb.shape
        gb = ta.data.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return _apply("matmul", (ta, tb), ta.data @ tb.data, vjp)


# structure


def concat(tensors: Sequence[Operand], axis: int = -1) -> Tensor:
    ts = tuple(_wrap(t) for t in tensors)
    if not ts:
        raise ValueError("concat of zero tensors")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if len(t.shape) != len(ref) or builtins.any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != ax
        ):
            raise ShapeError("concat", ref, t.shape)
    sizes = [t.shape[ax] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g: Array):
        return tuple(np.split(g, splits, axis=ax))

    out = np.concatenate([t.data for t in ts], axis=ax)
    return _apply("concat", ts, out, vjp)


def broadcast_to(a: Operand, shape: Sequence[int]) -> Tensor:
    ta = _wrap(a)
    target = tuple(shape)
    try:
        out = np.broadcast_to(ta.data, target)
    except ValueError:
        raise ShapeError("broadcast_to", ta.shape, target) from None
    return _apply(
        "broadcast_to",
        (ta,),
        np.array(out),
        lambda g: (_unbroadcast(g, ta.shape),),
    )


def reshape(a: Operand, shape: Sequence[int]) -> Tensor:
    ta = _wrap(a)
    try:
        out = ta.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError("reshape", ta.shape, tuple(shape)) from None
    return _apply("reshape", (ta,), out, lambda g: (g.reshape(ta.shape),))


def _is_basic_index(index) -> bool:
    parts = index if isinstance(index, tuple) else (index,)
    return builtins.all(
        p is None or p is Ellipsis or isinstance(p, (slice, int, np.integer))
        for p in parts
    )


def take(a: Operand, index) -> Tensor:
    """Basic or advanced indexing; repeated indices accumulate gradients."""
    ta = _wrap(a)
    if isinstance(index, Tensor):
        index = index.data.astype(np.intp)
    try:
        out = np.array(ta.data[index])
    except IndexError as e:
        raise ShapeError(f"take[{e}]", ta.shape) from None

    basic = _is_basic_index(index)

    def vjp(g: Array):
        grad = np.zeros_like(ta.data)
        if basic:
            grad[index] += g
        else:
            np.add.at(grad, index, g)
        return (grad,)

    return _apply("take", (ta,), out, vjp)


def take_along(a: Operand, indices: npt.ArrayLike) -> Tensor:
    """Gather along the last axis: out[..., k] = a[..., indices[..., k]]."""
    ta = _wrap(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.shape[:-1] != ta.shape[:-1]:
        raise ShapeError("take_along", ta.shape, idx.shape)
    out = np.take_along_axis(ta.data, idx, axis=-1)

    def vjp(g: Array):
        m = ta.shape[-1]
        flat_idx = idx.reshape(-1, idx.shape[-1])
        rows = np.arange(flat_idx.shape[0])[:, None]
        grad = np.zeros((flat_idx.shape[0], m), dtype=ta.dtype)
        np.add.at(grad, (rows, flat_idx), g.reshape(flat_idx.shape))
        return (grad.reshape(ta.shape),)

    return _apply("take_along", (ta,), out, vjp)


def weighted_gather(
    table: Operand, indices: npt.ArrayLike, weights: npt.ArrayLike
) -> Tensor:
    """out[n] = sum_c weights[n, c] * table[indices[n, c]].

    The interpolation kernel of grid encodings; only `table` is
    differentiable.
    """
    tt = _wrap(table)
    idx = np.asarray(indices, dtype=np.intp)
    w = np.asarray(weights, dtype=tt.dtype)
    if tt.ndim != 2 or idx.shape != w.shape or idx.ndim != 2:
        raise ShapeError("weighted_gather", tt.shape, idx.shape, w.shape)
    out = np.einsum("nc,ncf->nf", w, tt.data[idx])

    def vjp(g: Array):
        grad = np.zeros_like(tt.data)
        contrib = w[:, :, None] * g[:, None, :]
        np.add.at(grad, idx.reshape(-1), contrib.reshape(-1, tt.shape[1]))
        return (grad,)

    return _apply("weighted_gather", (tt,), out, vjp)


def _shift(x: Array, axis: int, forward: bool) -> Array:
    """Shift by one along `axis`, filling the vacated slot with zero."""
    out = np.zeros_like(x)
    src = [slice(None)] * x.ndim
    dst = [slice(None)] * x.ndim
    if forward:
        src[axis], dst[axis] = slice(None, -1), slice(1, None)
    else:
        src[axis], dst[axis] = slice(1, None), slice(None, -1)
    out[tuple(dst)] = x[tuple(src)]
    return out


def cumsum(a: Operand, axis: int = -1, *, exclusive: bool = False) -> Tensor:
    ta = _wrap(a)
    ax = axis % ta.ndim
    out = np.cumsum(ta.data, axis=ax)
    if exclusive:
        out = _shift(out, ax, forward=True)

    def vjp(g: Array):
        rev = np.flip(np.cumsum(np.flip(g, axis=ax), axis=ax), axis=ax)
        if exclusive:
            rev = _shift(rev, ax, forward=False)
        return (rev,)

    return _apply("cumsum", (ta,), out, vjp)


# reductions


def _expand(g: Array, shape, axis, keepdims: bool) -> Array:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum(a: Operand, axis=None, keepdims: bool = False) -> Tensor:  # noqa
    ta = _wrap(a)
    out = np.asarray(ta.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g: Array):
        return (np.array(_expand(g, ta.shape, axis, keepdims)),)

    return _apply("sum", (ta,), out, vjp)


def mean(a: Operand, axis=None, keepdims: bool = False) -> Tensor:
    ta = _wrap(a)
    out = np.asarray(ta.data.mean(axis=axis, keepdims=keepdims))
    count = ta.size // builtins.max(out.size, 1)

    def vjp(g: Array):
        return (np.array(_expand(g, ta.shape, axis, keepdims)) / count,)

    return _apply("mean", (ta,), out, vjp)


def mse(a: Operand, b: Operand) -> Tensor:
    """Mean squared error over all elements."""
    ta = _wrap(a, b if isinstance(b, Tensor) else None)
    tb = _wrap(b, ta)
    if ta.shape != tb.shape:
        raise ShapeError("mse", ta.shape, tb.shape)
    diff = ta.data - tb.data
    n = builtins.max(diff.size, 1)

    def vjp(g: Array):
        scaled = (2.0 / n) * g * diff
        return scaled, -scaled

    return _apply("mse", (ta, tb), np.asarray(np.mean(diff * diff)), vjp)


def detach(a: Operand) -> Tensor:
    ta = _wrap(a)
    return Tensor(ta.data, requires_grad=False, dtype=ta.dtype)


# reverse pass


def backward(
    tape: Tape,
    loss: Tensor,
    params: Optional[Sequence[Tensor]] = None,
) -> Dict[Tensor, Array]:
    """Gradients of a scalar `loss` w.r.t. the trainable leaves of `tape`.

    Leaves listed in `params` but unreachable from `loss` get zero gradients.
    Every returned gradient is also stored in the leaf's ``grad`` slot.
    """
    if loss.size != 1:
        raise ShapeError("backward (loss must be scalar)", loss.shape, ())

    produced = {id(node.output) for node in tape.nodes}
    leaves: Dict[int, Tensor] = {}
    for node in tape.nodes:
        for t in node.inputs:
            if t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)
    for p in params or ():
        leaves.setdefault(id(p), p)
    if loss.requires_grad and id(loss) not in produced:
        leaves.setdefault(id(loss), loss)

    grads: Dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for t, gt in zip(node.inputs, node.vjp(g)):
            if gt is None or not t.requires_grad:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gt
            else:
                grads[key] = np.array(gt, dtype=t.dtype)

    result: Dict[Tensor, Array] = {}
    for key, leaf in leaves.items():
        g = grads.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        leaf.grad = g.reshape(leaf.shape)
        result[leaf] = leaf.grad
    return result


def numerical_gradient(
    fn: Callable[[], Tensor], wrt: Tensor, h: float = 1e-5
) -> Array:
    """Central finite differences of the scalar `fn()` w.r.t. `wrt`."""
    grad = np.zeros_like(wrt.data, dtype=np.float64)
    flat = wrt.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = fn().item()
            flat[i] = orig - h
            down = fn().item()
            flat[i] = orig
            grad.reshape(-1)[i] = (up - down) / (2 * h)
    return grad


def relative_error(
    analytic: npt.ArrayLike, numeric: npt.ArrayLike, floor: float = 1e-8
) -> float:
    """max|a - n| / max(max|a|, max|n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = builtins.max(
        float(np.max(np.abs(a), initial=0.0)),
        float(np.max(np.abs(n), initial=0.0)),
        floor,
    )
    return float(np.max(np.abs(a - n), initial=0.0)) / scale
