"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every primitive returns a new :class:`Tensor`.  When any input requires a
gradient the result carries a :class:`Node` holding its parents and a
backward closure; the graph reachable from a root *is* the tape for that
root.  Node ids come from a per-:class:`Tape` counter, so sorting by id gives
a topological order and gradient accumulation follows tape-node order.
"""

from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

from .. import kernels


class DimensionError(ValueError):
    """Input shapes are incompatible for the requested primitive."""


class NumericError(ArithmeticError):
    """A primitive produced NaN or Inf."""


class ContractError(ValueError):
    """A call violated a documented precondition."""


_DTYPES = {"float64": np.float64, "float32": np.float32}
_state = threading.local()


def _st():
    if not hasattr(_state, "dtype"):
        _state.dtype = np.float64
        _state.grad_enabled = True
        _state.tape = Tape()
    return _state


def set_default_dtype(name):
    """Switch the dtype used for new tensors ("float64" or "float32")."""
    if name not in _DTYPES:
        raise ValueError(f"unsupported dtype {name!r}")
    _st().dtype = _DTYPES[name]


def get_default_dtype():
    return _st().dtype


@contextlib.contextmanager
def no_grad():
    """Evaluate primitives without recording them."""
    st = _st()
    prev = st.grad_enabled
    st.grad_enabled = False
    try:
        yield
    finally:
        st.grad_enabled = prev


class Tape:
    """Monotone node counter.  A fresh tape starts a new generation."""

    _generations = itertools.count()

    def __init__(self):
        self.generation = next(Tape._generations)
        self._ids = itertools.count()
        self.size = 0

    def next_id(self):
        self.size += 1
        return next(self._ids)


def new_tape():
    """Start a new tape for the current thread and return it."""
    tape = Tape()
    _st().tape = tape
    return tape


def current_tape():
    return _st().tape


class Node:
    __slots__ = ("id", "generation", "op", "parents", "backward")

    def __init__(self, op, parents, backward):
        tape = _st().tape
        self.id = tape.next_id()
        self.generation = tape.generation
        self.op = op
        self.parents = parents
        self.backward = backward


class Tensor:
    """Dense array with an optional gradient requirement and a tape handle."""

    __slots__ = ("values", "requires_grad", "_node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, values, requires_grad=False, name=None, dtype=None):
        arr = np.array(values, dtype=dtype or _st().dtype)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.values = arr
        self.requires_grad = bool(requires_grad)
        self._node = None
        self.name = name

    @property
    def shape(self):
        return self.values.shape

    @property
    def ndim(self):
        return self.values.ndim

    @property
    def size(self):
        return self.values.size

    @property
    def tape_id(self):
        return None if self._node is None else (self._node.generation, self._node.id)

    @property
    def is_leaf(self):
        return self._node is None

    def item(self):
        return float(self.values)

    def numpy(self):
        return self.values

    def detach(self):
        return detach(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor({self.values!r}{flag})"

    def __len__(self):
        return len(self.values)

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
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def detach(t):
    """Same values, no tape handle, never receives gradient."""
    out = Tensor.__new__(Tensor)
    out.values = t.values
    out.requires_grad = False
    out._node = None
    out.name = None
    return out


def _tracked(t):
    return t.requires_grad


def _check_finite(op, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op} produced non-finite values")


def _make(op, values, parents, backward):
    """Wrap a primitive result, recording it when any parent is tracked."""
    _check_finite(op, values)
    out = Tensor.__new__(Tensor)
    out.values = values
    out.name = None
    if _st().grad_enabled and any(_tracked(p) for p in parents):
        out.requires_grad = True
        out._node = Node(op, parents, backward)
    else:
        out.requires_grad = False
        out._node = None
    return out


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: cannot broadcast {a.shape} with {b.shape}") from None


# ---------------------------------------------------------------- primitives

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return _make("add", a.values + b.values, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return _make("sub", a.values - b.values, (a, b), backward)


def mul(a, b):
    """Elementwise product with broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    av, bv = a.values, b.values

    def backward(g):
        return _unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)

    return _make("mul", av * bv, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    av, bv = a.values, b.values

    def backward(g):
        return (_unbroadcast(g / bv, av.shape),
                _unbroadcast(-g * av / (bv * bv), bv.shape))

    return _make("div", av / bv, (a, b), backward)


def scale(a, c):
    """Multiply by a python scalar constant."""
    a = as_tensor(a)
    c = float(c)
    return _make("scale", a.values * c, (a,), lambda g: (g * c,))


def broadcast_to(a, shape):
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.values, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast_to: {a.shape} -> {shape}") from None
    sa = a.shape
    return _make("broadcast", out, (a,), lambda g: (_unbroadcast(g, sa),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.values, b.values

    def backward(g):
        return g @ bv.T, av.T @ g

    return _make("matmul", av @ bv, (a, b), backward)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects 2-D, got {a.shape}")
    return _make("transpose", a.values.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    a = as_tensor(a)
    sa = a.shape
    try:
        out = a.values.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: {sa} -> {shape}") from None
    return _make("reshape", out, (a,), lambda g: (g.reshape(sa),))


def take(a, index, axis):
    """Select positions ``index`` along ``axis``; repeats accumulate in backward."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    if index.size and (index.min() < 0 or index.max() >= a.shape[axis]):
        raise DimensionError(f"take: index out of range for axis {axis} of {a.shape}")
    sa = a.shape

    def backward(g):
        full = np.zeros(sa, dtype=g.dtype)
        np.add.at(np.moveaxis(full, axis, 0), index, np.moveaxis(g, axis, 0))
        return (full,)

    return _make("take", np.take(a.values, index, axis=axis), (a,), backward)


def relu(a):
    """max(x, 0); the subgradient at 0 is 0."""
    a = as_tensor(a)
    mask = a.values > 0
    return _make("relu", np.where(mask, a.values, 0.0).astype(a.values.dtype),
                 (a,), lambda g: (g * mask,))


def exp(a):
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.values)
    return _make("exp", out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    av = a.values
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(av)
    return _make("log", out, (a,), lambda g: (g / av,))


def sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    sa = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, sa).copy(),)

    return _make("sum", np.asarray(a.values.sum(axis=axis, keepdims=keepdims)),
                 (a,), backward)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    sa = a.shape
    n = a.values.size if axis is None else sa[axis]

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, sa).copy(),)

    return _make("mean", np.asarray(a.values.mean(axis=axis, keepdims=keepdims)),
                 (a,), backward)


def _softmax_np(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(a):
    """Softmax over the last axis."""
    a = as_tensor(a)
    y = _softmax_np(a.values)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make("softmax", y, (a,), backward)


def log_softmax(a):
    """Numerically stable log(softmax(a)) over the last axis."""
    a = as_tensor(a)
    z = a.values - a.values.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    y = np.exp(out)

    def backward(g):
        return (g - y * g.sum(axis=-1, keepdims=True),)

    return _make("log_softmax", out, (a,), backward)


def suffix_sum(a):
    """Normalised suffix sums over the last axis: ``s_i / s_1``.

    ``s_i`` sums entries ``i..C``; dividing by the total makes the head
    exactly 1 in floating point.  For a probability vector the divisor is 1,
    so the values equal the plain suffix sums.
    """
    a = as_tensor(a)
    av = a.values
    s = np.flip(np.cumsum(np.flip(av, -1), axis=-1), -1)
    total = s[..., :1]
    out = s / total

    def backward(g):
        # d out_i / d a_k = [k >= i] / S - s_i / S^2
        prefix = np.cumsum(g, axis=-1)
        return (prefix / total - (g * s).sum(axis=-1, keepdims=True) / (total * total),)

    return _make("suffix_sum", out, (a,), backward)


def conv2d(x, weight, stride=1, padding=0, backend=None):
    """Cross-correlation of ``x`` [B,C,H,W] with ``weight`` [O,C,kh,kw]."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d expects 4-D input and weight, got {x.shape}, {weight.shape}")
    B, C, H, W = x.shape
    O, Cw, kh, kw = weight.shape
    if C != Cw:
        raise DimensionError(f"conv2d: input has {C} channels, weight expects {Cw}")
    if stride < 1 or padding < 0:
        raise DimensionError("conv2d: stride must be >= 1 and padding >= 0")
    Hp, Wp = H + 2 * padding, W + 2 * padding
    if Hp < kh or Wp < kw:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    xv = x.values
    if padding:
        xv = np.pad(xv, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = kernels.im2col(xv, kh, kw, stride, backend)
    wmat = weight.values.reshape(O, -1)
    out = np.matmul(wmat, cols).reshape(B, O, Ho, Wo)
    padded_shape = xv.shape

    def backward(g):
        g2 = g.reshape(B, O, Ho * Wo)
        gw = np.einsum("bop,bkp->ok", g2, cols).reshape(weight.shape)
        gcols = np.matmul(wmat.T, g2)
        gx = kernels.col2im(gcols, padded_shape, kh, kw, stride, backend)
        if padding:
            gx = gx[:, :, padding:padding + H, padding:padding + W]
        return np.ascontiguousarray(gx), gw

    return _make("conv2d", out, (x, weight), backward)


# ------------------------------------------------------------------ backward

class GradientMap:
    """Leaf tensor -> gradient array.  Missing keys mean exactly zero."""

    def __init__(self, items=()):
        self._d = {}
        for t, g in items:
            self._d[id(t)] = (t, g)

    def __getitem__(self, t):
        return self._d[id(t)][1]

    def __setitem__(self, t, g):
        self._d[id(t)] = (t, g)

    def __contains__(self, t):
        return id(t) in self._d

    def __len__(self):
        return len(self._d)

    def __iter__(self):
        return (t for t, _ in self._d.values())

    def get(self, t, default=None):
        hit = self._d.get(id(t))
        return default if hit is None else hit[1]

    def keys(self):
        return list(self)

    def values(self):
        return [g for _, g in self._d.values()]

    def items(self):
        return list(self._d.values())

    def zeros_like(self):
        return GradientMap((t, np.zeros_like(g)) for t, g in self._d.values())

    def __repr__(self):
        names = [t.name or f"<{t.shape}>" for t in self]
        return f"GradientMap({names})"


def _collect(root):
    seen = {}
    stack = [root]
    while stack:
        t = stack.pop()
        if id(t) in seen:
            continue
        seen[id(t)] = t
        if t._node is not None:
            stack.extend(t._node.parents)
    return seen


def backward(root, targets=None):
    """Gradients of scalar ``root`` w.r.t. ``targets`` (default: all leaves).

    Only the subgraph linking ``root`` to ``targets`` is traversed, so
    gradients never leak into other leaves.  A target that is unreachable
    (or detached) receives an all-zero gradient.  The graph is not freed;
    several backward calls may share one forward pass.
    """
    if not isinstance(root, Tensor) or root.values.size != 1:
        raise ContractError("backward root must be a scalar Tensor")
    if root._node is None:
        if targets is None:
            return GradientMap()
        return GradientMap((t, np.zeros_like(t.values)) for t in targets)

    graph = _collect(root)
    if targets is None:
        targets = [t for t in graph.values() if t._node is None and t.requires_grad]
    targets = list(targets)
    for t in targets:
        if t._node is not None:
            raise ContractError("backward targets must be leaf tensors")
    target_ids = {id(t) for t in targets}

    inner = sorted((t for t in graph.values() if t._node is not None),
                   key=lambda t: (t._node.generation, t._node.id))
    needed = set(i for i in target_ids if i in graph)
    for t in inner:
        if any(id(p) in needed for p in t._node.parents):
            needed.add(id(t))

    grads = {id(root): np.ones_like(root.values)}
    for t in reversed(inner):
        g = grads.pop(id(t), None)
        if g is None or id(t) not in needed:
            continue
        parents = t._node.parents
        pgrads = t._node.backward(g)
        for p, pg in zip(parents, pgrads):
            if id(p) not in needed or pg is None:
                continue
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg

    out = GradientMap()
    for t in targets:
        g = grads.get(id(t))
        out[t] = np.zeros_like(t.values) if g is None else g.reshape(t.shape)
    return out


def leaf(values, name=None):
    """A gradient-requiring leaf tensor."""
    return Tensor(values, requires_grad=True, name=name)
