"""Dense numpy-backed tensors with define-by-run reverse-mode differentiation.

Every op builds a new :class:`Tensor` that remembers its parents and a
closure mapping the upstream gradient to one gradient per parent. Calling
:func:`backward` on a scalar orders the graph into a :class:`Tape` and walks
it once in reverse, accumulating into the ``grad`` buffer of every leaf
that requires gradients.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float32
_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


def get_default_dtype():
    return _DEFAULT_DTYPE


def set_default_dtype(dtype) -> None:
    global _DEFAULT_DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}")
    _DEFAULT_DTYPE = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype of newly created tensors (float32/float64)."""
    old = _DEFAULT_DTYPE
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(old)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (evaluation passes)."""
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.array(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = False
        t._parents = ()
        t._backward = None
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
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

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _not_scalar(self.shape)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims: bool = False):
        return reduce("sum", self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return reduce("mean", self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def _not_scalar(shape):
    raise ShapeError(f"expected a single-element tensor, got shape {shape}")


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.asarray(x, dtype=_DEFAULT_DTYPE))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor._wrap(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of trailing-dimension broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _result(
        a.data + b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _result(
        a.data - b.data, (a, b),
        lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    return _result(
        a.data * b.data, (a, b),
        lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b)
    out = a.data / b.data

    def back(g):
        ga = g / b.data
        return unbroadcast(ga, a.shape), unbroadcast(-ga * out, b.shape)

    return _result(out, (a, b), back)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result(-a.data, (a,), lambda g: (-g,))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    return _result(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def maximum(a, scalar: float) -> Tensor:
    """max(a, scalar); the gradient passes only where ``a > scalar``."""
    a = as_tensor(a)
    keep = a.data > scalar
    out = np.where(keep, a.data, np.asarray(scalar, dtype=a.data.dtype))
    return _result(out, (a,), lambda g: (g * keep,))


_ELEMENTWISE = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(kind: str, a, b) -> Tensor:
    if kind == "max-with-scalar":
        if isinstance(b, Tensor):
            if b.size != 1:
                raise ShapeError(f"max-with-scalar needs a scalar, got shape {b.shape}")
            b = float(b.data.reshape(-1)[0])
        return maximum(a, float(b))
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise op {kind!r}") from None
    return fn(a, b)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    s = _sigmoid_np(x.data)
    return _result(s, (x,), lambda g: (g * s * (1.0 - s),))


def selu(x) -> Tensor:
    x = as_tensor(x)
    pos = x.data > 0
    ex = np.exp(np.minimum(x.data, 0.0))
    out = SELU_SCALE * np.where(pos, x.data, SELU_ALPHA * (ex - 1.0))
    dydx = SELU_SCALE * np.where(pos, 1.0, SELU_ALPHA * ex)
    return _result(out.astype(x.dtype, copy=False), (x,), lambda g: (g * dydx,))


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data).astype(x.dtype, copy=False)
    s = _sigmoid_np(x.data)
    return _result(out, (x,), lambda g: (g * s,))


_ACTIVATIONS = {"sigmoid": sigmoid, "selu": selu, "softplus": softplus}


def activation(kind: str, x) -> Tensor:
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ValueError(f"unknown activation {kind!r}") from None


# ---------------------------------------------------------------------------
# contractions and reductions
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    """Batched ``a[..., m, p] @ b[p, q]``; ``b`` must be a rank-2 weight matrix."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2:
        raise ShapeError(f"matmul weight must be rank 2, got shape {b.shape}")
    if a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")

    def back(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _result(a.data @ b.data, (a, b), back)


def _norm_axis(axis, ndim: int):
    if axis is None:
        return None
    axes = (axis,) if isinstance(axis, int) else tuple(axis)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise ShapeError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    return tuple(sorted(out))


def reduce(kind: str, x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    all_axes = axes if axes is not None else tuple(range(x.ndim))
    count = int(np.prod([x.shape[i] for i in all_axes])) if all_axes else 1

    def expand(g):
        if not keepdims:
            for ax in all_axes:
                g = np.expand_dims(g, ax)
        return g

    if kind == "sum":
        out = x.data.sum(axis=axes, keepdims=keepdims)
        back = lambda g: (np.broadcast_to(expand(g), x.shape).copy(),)
    elif kind == "mean":
        out = x.data.mean(axis=axes, keepdims=keepdims)
        back = lambda g: (np.broadcast_to(expand(g) / count, x.shape).copy(),)
    elif kind == "max":
        out = x.data.max(axis=axes, keepdims=keepdims)
        hit = x.data == x.data.max(axis=axes, keepdims=True)
        # ties share the gradient evenly
        share = hit / hit.sum(axis=axes, keepdims=True)
        back = lambda g: (expand(g) * share,)
    else:
        raise ValueError(f"unknown reduction {kind!r}")
    return _result(np.asarray(out, dtype=x.dtype), (x,), back)


def directional_cumsum(x, direction: str, axis: int = -2) -> Tensor:
    """Cumulative sum along ``axis``.

    ``forward``: out[i] = sum(x[j] for j <= i); ``backward``: out[i] = sum(x[j] for j >= i).
    The gradient of one is the other applied to the upstream gradient.
    """
    x = as_tensor(x)
    if direction not in ("forward", "backward"):
        raise ValueError(f"direction must be 'forward' or 'backward', got {direction!r}")
    ax = _norm_axis(axis, x.ndim)[0]
    fwd = lambda v: np.cumsum(v, axis=ax)
    bwd = lambda v: np.flip(np.cumsum(np.flip(v, ax), axis=ax), ax)
    if direction == "forward":
        return _result(fwd(x.data), (x,), lambda g: (bwd(g),))
    return _result(bwd(x.data), (x,), lambda g: (fwd(g),))


# ---------------------------------------------------------------------------
# shape manipulation
# ---------------------------------------------------------------------------


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"cannot reshape {x.shape} to {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (g.reshape(x.shape),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    try:
        out = np.broadcast_to(x.data, shape)
    except ValueError:
        raise ShapeError(f"cannot broadcast {x.shape} to {tuple(shape)}") from None
    return _result(out, (x,), lambda g: (unbroadcast(g, x.shape),))


def expand_dims(x, axis: int) -> Tensor:
    x = as_tensor(x)
    return _result(np.expand_dims(x.data, axis), (x,), lambda g: (g.reshape(x.shape),))


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty list")
    ref = tensors[0]
    ax = _norm_axis(axis, ref.ndim)[0]
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[i] != ref.shape[i] for i in range(ref.ndim) if i != ax
        ):
            raise ShapeError(f"concat extent mismatch: {ref.shape} vs {t.shape} on axis {ax}")
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(lo, hi), axis=ax) for lo, hi in zip(bounds[:-1], bounds[1:])
        )

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, back)


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack of an empty list")
    ax = axis if axis >= 0 else axis + tensors[0].ndim + 1
    return concat([expand_dims(t, ax) for t in tensors], axis=ax)


def slice(x, axis: int, start: int, stop: int) -> Tensor:  # noqa: A001
    """Contiguous range ``[start, stop)`` along one axis."""
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)[0]
    n = x.shape[ax]
    if not (0 <= start <= stop <= n):
        raise ShapeError(f"slice [{start}, {stop}) out of range for extent {n} on axis {ax}")
    index = [np.s_[:]] * x.ndim
    index[ax] = np.s_[start:stop]
    index = tuple(index)

    def back(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _result(x.data[index], (x,), back)


def take(x, indices: np.ndarray, axis: int) -> Tensor:
    """Gather along ``axis`` with an integer index array (gradients scatter-add)."""
    x = as_tensor(x)
    ax = _norm_axis(axis, x.ndim)[0]
    indices = np.asarray(indices, dtype=np.intp)

    def back(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        moved = np.moveaxis(full, ax, 0)
        gm = np.moveaxis(g, tuple(range(ax, ax + indices.ndim)), tuple(range(indices.ndim)))
        np.add.at(moved, indices, gm)
        return (full,)

    return _result(np.take(x.data, indices, axis=ax), (x,), back)


def take_along_batch(x, indices: np.ndarray) -> Tensor:
    """``out[b, i, j, ...] = x[b, indices[b, i, j], ...]`` for a leading batch axis."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    rows = np.arange(x.shape[0]).reshape((-1,) + (1,) * (indices.ndim - 1))

    def back(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(full, (np.broadcast_to(rows, indices.shape), indices), g)
        return (full,)

    return _result(x.data[rows, indices], (x,), back)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` over unmasked rows."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be [n, C], got {logits.shape}")
    n, c = logits.shape
    targets = np.asarray(targets, dtype=np.intp).reshape(-1)
    if targets.shape[0] != n:
        raise ShapeError(f"{targets.shape[0]} targets for {n} logit rows")
    keep = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool).reshape(-1)
    if keep.shape[0] != n:
        raise ShapeError(f"mask of length {keep.shape[0]} for {n} logit rows")
    if np.any(targets[keep] < 0) or np.any(targets[keep] >= c):
        raise ValueError(f"target class out of range [0, {c})")
    count = int(keep.sum())
    if count == 0:
        raise ValueError("every position is masked; mean cross entropy is undefined")
    safe_t = np.where(keep, targets, 0)
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logz
    nll = -logp[np.arange(n), safe_t]
    loss = np.asarray((nll * keep).sum() / count, dtype=logits.dtype)

    def back(g):
        p = np.exp(logp)
        p[np.arange(n), safe_t] -= 1.0
        return (p * (keep[:, None] * (g / count)),)

    return _result(loss, (logits,), back)


# ---------------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------------


class Tape:
    """Topologically ordered record of the ops that produced ``loss``.

    Built on demand from the graph recorded during the forward pass; a tape
    is single-use and drops its references once it has been replayed.
    """

    def __init__(self, loss: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack = [(loss, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen or not node.requires_grad:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order
        self.loss = loss
        self.consumed = False

    def __len__(self) -> int:
        return len(self.nodes)

    def replay(self) -> None:
        if self.consumed:
            raise RuntimeError("tape has already been replayed")
        grads: dict[int, np.ndarray] = {id(self.loss): np.ones_like(self.loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
            node._parents = ()
            node._backward = None
        self.nodes = []
        self.consumed = True


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ValueError("loss does not depend on any tensor that requires grad")
    Tape(loss).replay()
