"""Tape based reverse mode automatic differentiation on dense float64 arrays.

Every differentiable value is a :class:`Tensor` wrapping a ``numpy`` array.
Operations record a node on an implicit tape (the ``_ctx`` chain); calling
:func:`backward` on a scalar loss walks the tape once in reverse topological
order and accumulates gradients into ``.grad`` of every tensor that requested
them.  The engine is first order only and keeps everything in 64-bit floats.

Randomness never goes through global state: draw from an explicit :class:`Rng`.
"""

from __future__ import annotations

import numpy as np

from .errors import DomainError, GraphError, NumericError

Array = np.ndarray


def _as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


def unbroadcast(grad: Array, shape: tuple) -> Array:
    """Sum ``grad`` down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array with an optional gradient slot.

    Attributes
    ----------
    data : numpy.ndarray
        The value, always ``float64``.
    requires_grad : bool
        Whether backward should accumulate into ``grad``.
    grad : numpy.ndarray or None
        Populated by :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_ctx")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_f64(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._ctx = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic; plain numbers and arrays are wrapped as constants
    def __add__(self, other):
        return Add.apply(self, _wrap(other))

    def __radd__(self, other):
        return Add.apply(_wrap(other), self)

    def __sub__(self, other):
        return Sub.apply(self, _wrap(other))

    def __rsub__(self, other):
        return Sub.apply(_wrap(other), self)

    def __mul__(self, other):
        return Mul.apply(self, _wrap(other))

    def __rmul__(self, other):
        return Mul.apply(_wrap(other), self)

    def __truediv__(self, other):
        return Div.apply(self, _wrap(other))

    def __rtruediv__(self, other):
        return Div.apply(_wrap(other), self)

    def __neg__(self):
        return Neg.apply(self)

    def __pow__(self, p):
        return Pow.apply(self, p=float(p))

    def __matmul__(self, other):
        return MatMul.apply(self, _wrap(other))

    def __getitem__(self, key):
        return Slice.apply(self, key=key)

    def sum(self, axis=None, keepdims: bool = False):
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, axes=None):
        return Transpose.apply(self, axes=axes)

    def backward(self):
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Function:
    """One differentiable operation; a node on the tape.

    Subclasses implement ``forward`` (ndarrays in, ndarray out) and
    ``backward`` (output gradient in, one gradient per parent out, with
    ``None`` for parents that need none).
    """

    def __init__(self, *parents: Tensor):
        self.parents = parents
        self.saved = ()

    def save(self, *xs):
        self.saved = xs

    @classmethod
    def apply(cls, *args, **kwargs) -> Tensor:
        tensors = [a for a in args if isinstance(a, Tensor)]
        ctx = cls(*tensors)
        raw = [a.data if isinstance(a, Tensor) else a for a in args]
        out = Tensor(cls.forward(ctx, *raw, **kwargs))
        if any(t.requires_grad for t in tensors):
            out.requires_grad = True
            out._ctx = ctx
        return out


class Add(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a.shape, b.shape)
        return a + b

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx.saved
        return unbroadcast(g, sa), unbroadcast(g, sb)


class Sub(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a.shape, b.shape)
        return a - b

    @staticmethod
    def backward(ctx, g):
        sa, sb = ctx.saved
        return unbroadcast(g, sa), unbroadcast(-g, sb)


class Mul(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a, b)
        return a * b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return unbroadcast(g * b, a.shape), unbroadcast(g * a, b.shape)


class Div(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a, b)
        return a / b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return unbroadcast(g / b, a.shape), unbroadcast(-g * a / (b * b), b.shape)


class Neg(Function):
    @staticmethod
    def forward(ctx, a):
        return -a

    @staticmethod
    def backward(ctx, g):
        return (-g,)


class Pow(Function):
    @staticmethod
    def forward(ctx, a, p):
        ctx.save(a, p)
        return a ** p

    @staticmethod
    def backward(ctx, g):
        a, p = ctx.saved
        return (g * p * a ** (p - 1.0),)


class MatMul(Function):
    @staticmethod
    def forward(ctx, a, b):
        ctx.save(a, b)
        return a @ b

    @staticmethod
    def backward(ctx, g):
        a, b = ctx.saved
        return g @ b.T, a.T @ g


class Exp(Function):
    @staticmethod
    def forward(ctx, a):
        out = np.exp(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, g):
        (out,) = ctx.saved
        return (g * out,)


class Log(Function):
    @staticmethod
    def forward(ctx, a):
        ctx.save(a)
        return np.log(a)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.saved
        return (g / a,)


class Tanh(Function):
    @staticmethod
    def forward(ctx, a):
        out = np.tanh(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, g):
        (out,) = ctx.saved
        return (g * (1.0 - out * out),)


class Sigmoid(Function):
    @staticmethod
    def forward(ctx, a):
        # stable logistic: exp(-|a|) never overflows
        e = np.exp(-np.abs(a))
        out = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, g):
        (out,) = ctx.saved
        return (g * out * (1.0 - out),)


class Sqrt(Function):
    @staticmethod
    def forward(ctx, a):
        out = np.sqrt(a)
        ctx.save(out)
        return out

    @staticmethod
    def backward(ctx, g):
        (out,) = ctx.saved
        return (g * 0.5 / out,)


class Softplus(Function):
    @staticmethod
    def forward(ctx, a):
        ctx.save(a)
        # overflow-safe form: log1p(exp(-|a|)) + max(a, 0)
        return np.log1p(np.exp(-np.abs(a))) + np.maximum(a, 0.0)

    @staticmethod
    def backward(ctx, g):
        (a,) = ctx.saved
        e = np.exp(-np.abs(a))
        sig = np.where(a >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        return (g * sig,)


class ClampMin(Function):
    @staticmethod
    def forward(ctx, a, lo):
        ctx.save(a > lo)
        return np.maximum(a, lo)

    @staticmethod
    def backward(ctx, g):
        (mask,) = ctx.saved
        return (g * mask,)


class Sum(Function):
    @staticmethod
    def forward(ctx, a, axis, keepdims):
        ctx.save(a.shape, axis, keepdims)
        return np.sum(a, axis=axis, keepdims=keepdims)

    @staticmethod
    def backward(ctx, g):
        shape, axis, keepdims = ctx.saved
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(a % len(shape) for a in axes)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)


class Mean(Function):
    @staticmethod
    def forward(ctx, a, axis, keepdims):
        out = np.mean(a, axis=axis, keepdims=keepdims)
        ctx.save(a.shape, axis, keepdims, a.size / max(out.size, 1))
        return out

    @staticmethod
    def backward(ctx, g):
        shape, axis, keepdims, count = ctx.saved
        if axis is not None and not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            axes = tuple(a % len(shape) for a in axes)
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy() / count,)


class Reshape(Function):
    @staticmethod
    def forward(ctx, a, shape):
        ctx.save(a.shape)
        return a.reshape(shape)

    @staticmethod
    def backward(ctx, g):
        (shape,) = ctx.saved
        return (g.reshape(shape),)


class Transpose(Function):
    @staticmethod
    def forward(ctx, a, axes):
        ctx.save(axes, a.ndim)
        return np.transpose(a, axes)

    @staticmethod
    def backward(ctx, g):
        axes, ndim = ctx.saved
        if axes is None:
            return (np.transpose(g),)
        inv = np.argsort(axes)
        return (np.transpose(g, inv),)


class Slice(Function):
    """Basic (non-advanced) indexing with slices and integers."""

    @staticmethod
    def forward(ctx, a, key):
        parts = key if isinstance(key, tuple) else (key,)
        if any(isinstance(p, (list, np.ndarray)) for p in parts):
            raise DomainError("advanced indexing is not supported here; use gather_rows")
        ctx.save(a.shape, key)
        return a[key]

    @staticmethod
    def backward(ctx, g):
        shape, key = ctx.saved
        out = np.zeros(shape)
        out[key] = g
        return (out,)


class BroadcastTo(Function):
    @staticmethod
    def forward(ctx, a, shape):
        ctx.save(a.shape)
        return np.broadcast_to(a, shape).copy()

    @staticmethod
    def backward(ctx, g):
        (shape,) = ctx.saved
        return (unbroadcast(g, shape),)


class Concat(Function):
    @staticmethod
    def forward(ctx, *arrays, axis):
        ctx.save(axis, [a.shape[axis] for a in arrays])
        return np.concatenate(arrays, axis=axis)

    @staticmethod
    def backward(ctx, g):
        axis, sizes = ctx.saved
        splits = np.cumsum(sizes)[:-1]
        return tuple(np.split(g, splits, axis=axis))


class GatherRows(Function):
    """Select rows ``a[..., idx, :]`` with per-batch integer indices.

    ``a`` has shape ``batch + (n, d)`` and ``idx`` shape ``batch + tail``;
    the result has shape ``batch + tail + (d,)``.  The selection itself is
    not differentiable; gradients scatter-add back into the rows.
    """

    @staticmethod
    def forward(ctx, a, idx):
        nbatch = a.ndim - 2
        lead = np.ix_(*[np.arange(s) for s in a.shape[:nbatch]])
        lead = tuple(l.reshape(l.shape + (1,) * (idx.ndim - nbatch)) for l in lead)
        ctx.save(a.shape, lead, idx)
        return a[lead + (idx,)]

    @staticmethod
    def backward(ctx, g):
        shape, lead, idx = ctx.saved
        out = np.zeros(shape)
        np.add.at(out, lead + (idx,), g)
        return (out,)


class SoftmaxLastAxis(Function):
    @staticmethod
    def forward(ctx, a, axis):
        if not np.all(np.isfinite(a)):
            raise NumericError("softmax received non-finite logits")
        shifted = a - np.max(a, axis=axis, keepdims=True)
        e = np.exp(shifted)
        out = e / np.sum(e, axis=axis, keepdims=True)
        ctx.save(out, axis)
        return out

    @staticmethod
    def backward(ctx, g):
        out, axis = ctx.saved
        dot = np.sum(g * out, axis=axis, keepdims=True)
        return (out * (g - dot),)


def exp(t: Tensor) -> Tensor:
    return Exp.apply(_wrap(t))


def log(t: Tensor) -> Tensor:
    return Log.apply(_wrap(t))


def tanh(t: Tensor) -> Tensor:
    return Tanh.apply(_wrap(t))


def sigmoid(t: Tensor) -> Tensor:
    return Sigmoid.apply(_wrap(t))


def sqrt(t: Tensor) -> Tensor:
    return Sqrt.apply(_wrap(t))


def softplus(t: Tensor) -> Tensor:
    """Numerically stable ``log(1 + exp(x))``; exact for large ``|x|``."""
    return Softplus.apply(_wrap(t))


def clamp_min(t: Tensor, lo: float) -> Tensor:
    return ClampMin.apply(_wrap(t), lo=float(lo))


def softmax_stable(t: Tensor, axis: int = -1) -> Tensor:
    """Shift invariant softmax along ``axis``.

    Subtracts the running maximum before exponentiating so that any finite
    logits are safe.  Non-finite input raises :class:`NumericError` instead
    of propagating NaN.
    """
    return SoftmaxLastAxis.apply(_wrap(t), axis=axis)


def concat(tensors, axis: int = 0) -> Tensor:
    return Concat.apply(*[_wrap(t) for t in tensors], axis=axis)


def broadcast_to(t: Tensor, shape) -> Tensor:
    return BroadcastTo.apply(_wrap(t), shape=tuple(shape))


def gather_rows(t: Tensor, idx: Array) -> Tensor:
    idx = np.asarray(idx)
    if not np.issubdtype(idx.dtype, np.integer):
        raise DomainError("gather_rows requires integer indices")
    return GatherRows.apply(_wrap(t), idx=idx)


def backward(loss: Tensor) -> None:
    """Run reverse mode accumulation from a scalar ``loss``.

    Raises
    ------
    GraphError
        If the loss is not scalar or is detached from any tape.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if not loss.requires_grad or loss._ctx is None:
        raise GraphError("backward called on a tensor detached from the tape")

    order: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or node._ctx is None:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._ctx.parents:
            if p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        ctx = node._ctx
        grads = ctx.backward(ctx, node.grad)
        for parent, g in zip(ctx.parents, grads):
            if g is None or not parent.requires_grad:
                continue
            g = np.asarray(g, dtype=np.float64)
            if parent.grad is None:
                parent.grad = g.copy() if g.base is not None else g
            else:
                parent.grad = parent.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def assert_finite(t: Tensor, where: str) -> Tensor:
    data = t.data if isinstance(t, Tensor) else t
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values detected in {where}")
    return t


def finite_difference_grad(f, x: Tensor, step: float = 1e-5) -> Array:
    """Central difference gradient of a scalar function, one coordinate at a time.

    ``f`` receives a plain (non-tracked) :class:`Tensor` and must return a
    scalar (float or 0-d tensor).  Used as the independent oracle for the
    reverse mode engine; cost is two evaluations per coordinate.
    """

    def evaluate(arr):
        out = f(Tensor(arr))
        return float(out.data) if isinstance(out, Tensor) else float(out)

    base = x.data.copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        i = it.multi_index
        arr = base.copy()
        arr[i] = base[i] + step
        hi = evaluate(arr)
        arr[i] = base[i] - step
        lo = evaluate(arr)
        grad[i] = (hi - lo) / (2.0 * step)
        it.iternext()
    return grad


class Rng:
    """Explicit deterministic random stream (PCG64 behind numpy's Generator).

    The same seed yields the same draw sequence on a given platform.  Child
    streams derived through :meth:`child` are independent of each other and
    of the parent's future draws, and do not depend on how much the parent
    has already been consumed.
    """

    def __init__(self, seed: int, _ss: np.random.SeedSequence | None = None):
        if _ss is None:
            if seed < 0:
                raise DomainError("seed must be a nonnegative integer")
            _ss = np.random.SeedSequence(int(seed))
        self.seed = int(seed)
        self._ss = _ss
        self._gen = np.random.Generator(np.random.PCG64(_ss))

    def child(self, tag: int) -> "Rng":
        ss = np.random.SeedSequence(entropy=self._ss.entropy,
                                    spawn_key=self._ss.spawn_key + (int(tag),))
        return Rng(self.seed, _ss=ss)

    def normal(self, shape=()) -> Array:
        return self._gen.standard_normal(size=shape, dtype=np.float64)

    def uniform(self, low: float, high: float, shape=()) -> Array:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, shape=()) -> Array:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> Array:
        return self._gen.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> Array:
        return self._gen.choice(n, size=k, replace=False)
