"""Dense real tensors with reverse-mode automatic differentiation.

Values are numpy arrays (float32 by default, float64 on request); every
operation records a backward closure so scalar losses differentiate through
arbitrary compositions. The op set is exactly what the enhancement models
need: elementwise arithmetic and activations, batched matmul, shape ops,
reductions, fused softmax, layer norm, and 1-D convolutions.

Gradient accumulation is additive: repeated backward() calls keep adding to
leaf .grad buffers until zero_grad(). Intermediate nodes have their grads
cleared at the start of each backward pass.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DimensionError, GraphError

DEFAULT_DTYPE = np.float32

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the with-block (inference mode)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif arr.dtype != np.float32 and arr.dtype != np.float64:
        arr = arr.astype(DEFAULT_DTYPE)
    if not arr.flags["C_CONTIGUOUS"]:
        arr = np.ascontiguousarray(arr)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Tensor:
    """N-d real tensor participating in a dynamically built graph.

    Attributes:
        data: numpy ndarray, C-contiguous, float32 or float64.
        grad: accumulated gradient (ndarray of the same shape) or None.
        requires_grad: whether gradients should flow to this tensor.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn: Callable[[np.ndarray], None] | None = None

    # ---- basic introspection -------------------------------------------

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

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_scalar(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self.op!r})"

    # ---- gradient plumbing ---------------------------------------------

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(np.asarray(g), self.data.shape)
        if g.shape != self.data.shape:
            raise GraphError(f"gradient shape {g.shape} does not match value shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g.astype(self.data.dtype, copy=False)

    def backward(self) -> None:
        backward(self)

    # ---- operators -------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return pow_const(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, *shape)

    def transpose(self, axes=None):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def _raise_scalar(t: Tensor):
    raise GraphError(f"item() needs a single-element tensor, got shape {t.shape}")


def _coerce(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def _make(data: np.ndarray, parents: Sequence[Tensor], grad_fn, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = req
    if req:
        out._parents = tuple(parents)
        out._grad_fn = grad_fn
    else:
        out._parents = ()
        out._grad_fn = None
    return out


# ---- graph traversal ------------------------------------------------------


class CompGraph:
    """Topologically ordered view of the graph reachable from a root.

    order lists parents before children; each node appears exactly once.
    """

    def __init__(self, root: Tensor):
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(root, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.root = root
        self.order = order


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation from a scalar loss.

    Leaf gradients add onto any existing .grad (call zero_grad between
    steps); intermediate-node grads are scratch and reset per call.
    """
    if loss.data.size != 1:
        raise GraphError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = CompGraph(loss)
    for node in graph.order:
        if node._grad_fn is not None:
            node.grad = None
    loss.grad = np.ones_like(loss.data)
    for node in reversed(graph.order):
        if node._grad_fn is not None and node.grad is not None:
            node._grad_fn(node.grad)


# ---- arithmetic -------------------------------------------------------------


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)

    def grad_fn(g):
        a._accumulate(g)
        b._accumulate(g)

    return _make(a.data + b.data, (a, b), grad_fn, "add")


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)

    def grad_fn(g):
        a._accumulate(g)
        b._accumulate(-g)

    return _make(a.data - b.data, (a, b), grad_fn, "sub")


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    ad, bd = a.data, b.data

    def grad_fn(g):
        a._accumulate(g * bd)
        b._accumulate(g * ad)

    return _make(ad * bd, (a, b), grad_fn, "mul")


def div(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    ad, bd = a.data, b.data
    out = ad / bd

    def grad_fn(g):
        a._accumulate(g / bd)
        b._accumulate(-g * out / bd)

    return _make(out, (a, b), grad_fn, "div")


def neg(a: Tensor) -> Tensor:
    def grad_fn(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), grad_fn, "neg")


def pow_const(a: Tensor, p: float) -> Tensor:
    p = float(p)
    ad = a.data
    out = ad**p

    def grad_fn(g):
        a._accumulate(g * p * ad ** (p - 1.0))

    return _make(out, (a,), grad_fn, "pow")


def maximum(a, b) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    a = a if isinstance(a, Tensor) else _coerce(a, b)
    b = _coerce(b, a)
    take_a = a.data >= b.data

    def grad_fn(g):
        a._accumulate(g * take_a)
        b._accumulate(g * ~take_a)

    return _make(np.maximum(a.data, b.data), (a, b), grad_fn, "maximum")


def abs_(a: Tensor) -> Tensor:
    sgn = np.sign(a.data)

    def grad_fn(g):
        a._accumulate(g * sgn)

    return _make(np.abs(a.data), (a,), grad_fn, "abs")


# ---- elementwise transcendental --------------------------------------------


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)

    def grad_fn(g):
        a._accumulate(g * out)

    return _make(out, (a,), grad_fn, "exp")


def log(a: Tensor) -> Tensor:
    def grad_fn(g):
        a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), grad_fn, "log")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)

    def grad_fn(g):
        a._accumulate(g * 0.5 / out)

    return _make(out, (a,), grad_fn, "sqrt")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)

    def grad_fn(g):
        a._accumulate(g * (1.0 - out * out))

    return _make(out, (a,), grad_fn, "tanh")


def _sigmoid_nd(x: np.ndarray) -> np.ndarray:
    # Two-branch form: never exponentiates a positive number.
    out = np.empty_like(x)
    pos = x >= 0
    np.exp(-x, where=pos, out=out)
    out[pos] = 1.0 / (1.0 + out[pos])
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_nd(a.data)

    def grad_fn(g):
        a._accumulate(g * out * (1.0 - out))

    return _make(out, (a,), grad_fn, "sigmoid")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def grad_fn(g):
        a._accumulate(g * mask)

    return _make(np.where(mask, a.data, 0.0).astype(a.data.dtype, copy=False), (a,), grad_fn, "relu")


def silu(a: Tensor) -> Tensor:
    s = _sigmoid_nd(a.data)
    out = a.data * s

    def grad_fn(g):
        a._accumulate(g * (s + out * (1.0 - s)))

    return _make(out, (a,), grad_fn, "silu")


def softplus(a: Tensor) -> Tensor:
    x = a.data
    out = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)
    s = _sigmoid_nd(x)

    def grad_fn(g):
        a._accumulate(g * s)

    return _make(out.astype(x.dtype, copy=False), (a,), grad_fn, "softplus")


_ACTIVATIONS = {
    "relu": relu,
    "sigmoid": sigmoid,
    "silu": silu,
    "tanh": tanh,
    "exp": exp,
    "softplus": softplus,
}


def activation(x: Tensor, kind: str) -> Tensor:
    """Apply a named activation; raises on unknown names."""
    try:
        fn = _ACTIVATIONS[kind]
    except KeyError:
        raise DimensionError(f"unknown activation kind {kind!r}") from None
    return fn(x)


# ---- matmul and shape ops ---------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product [..., m, k] @ [..., k, n] with broadcasting."""
    if not isinstance(a, Tensor) or not isinstance(b, Tensor):
        raise DimensionError("matmul takes two tensors")
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def grad_fn(g):
        a._accumulate(np.matmul(g, bd.swapaxes(-1, -2)))
        b._accumulate(np.matmul(ad.swapaxes(-1, -2), g))

    return _make(np.matmul(ad, bd), (a, b), grad_fn, "matmul")


def reshape(a: Tensor, *shape) -> Tensor:
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape

    def grad_fn(g):
        a._accumulate(g.reshape(old))

    return _make(a.data.reshape(shape), (a,), grad_fn, "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def grad_fn(g):
        a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), grad_fn, "transpose")


def swapaxes(a: Tensor, i: int, j: int) -> Tensor:
    def grad_fn(g):
        a._accumulate(g.swapaxes(i, j))

    return _make(a.data.swapaxes(i, j), (a,), grad_fn, "swapaxes")


def getitem(a: Tensor, idx) -> Tensor:
    """Basic indexing (ints, slices, ellipsis); backward scatter-adds."""
    items = idx if isinstance(idx, tuple) else (idx,)
    for item in items:
        if not isinstance(item, (int, np.integer, slice, type(Ellipsis), type(None))):
            # integer/boolean arrays can alias elements; += would drop duplicates
            raise GraphError(f"getitem supports basic indexing only, got {type(item).__name__}")
    out = a.data[idx]
    shape, dtype = a.data.shape, a.data.dtype

    def grad_fn(g):
        buf = np.zeros(shape, dtype=dtype)
        buf[idx] += g
        a._accumulate(buf)

    return _make(out, (a,), grad_fn, "getitem")


def concat(tensors: Iterable[Tensor], axis: int = 0) -> Tensor:
    ts = list(tensors)
    if not ts:
        raise DimensionError("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def grad_fn(g):
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            t._accumulate(g[tuple(sl)])

    return _make(np.concatenate([t.data for t in ts], axis=axis), ts, grad_fn, "concat")


def pad(a: Tensor, pad_width) -> Tensor:
    """Zero-pad; pad_width is a per-axis sequence of (before, after)."""
    pw = tuple((int(lo), int(hi)) for lo, hi in pad_width)
    if len(pw) != a.ndim:
        raise DimensionError(f"pad_width has {len(pw)} entries for a {a.ndim}-d tensor")
    inner = tuple(slice(lo, lo + n) for (lo, _), n in zip(pw, a.data.shape))

    def grad_fn(g):
        a._accumulate(g[inner])

    return _make(np.pad(a.data, pw), (a,), grad_fn, "pad")


# ---- reductions ------------------------------------------------------------


def _expand_reduced(g: np.ndarray, shape, axis, keepdims) -> np.ndarray:
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape

    def grad_fn(g):
        a._accumulate(_expand_reduced(g, shape, axis, keepdims))

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), grad_fn, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.data.shape
    n = a.data.size if axis is None else shape[axis]

    def grad_fn(g):
        a._accumulate(_expand_reduced(g, shape, axis, keepdims) / n)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), grad_fn, "mean")


# ---- fused composites -------------------------------------------------------


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically safe softmax. -inf entries map to exactly 0; a row of
    all -inf maps to all zeros rather than NaN."""
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    s = e.sum(axis=axis, keepdims=True)
    out = e / np.maximum(s, np.finfo(x.dtype).tiny)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        a._accumulate(out * (g - inner))

    return _make(out.astype(x.dtype, copy=False), (a,), grad_fn, "softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    mu = mean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = mean(mul(xc, xc), axis=-1, keepdims=True)
    inv = pow_const(add(var, eps), -0.5)
    return add(mul(mul(xc, inv), gain), bias)


def conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, causal: bool = False) -> Tensor:
    """Length-preserving 1-D convolution over frames.

    Args:
        x: [L, C_in] input frames.
        kernel: [k, C_in, C_out] filter taps.
        bias: optional [C_out].
        causal: pad k-1 frames on the left only; otherwise pad symmetrically
            ((k-1)//2 left, k//2 right).

    Returns:
        [L, C_out].
    """
    if x.ndim != 2 or kernel.ndim != 3:
        raise DimensionError(f"conv1d expects x [L,C_in], kernel [k,C_in,C_out]; got {x.shape}, {kernel.shape}")
    k, c_in, _ = kernel.shape
    if x.shape[1] != c_in:
        raise DimensionError(f"conv1d channel mismatch: x has {x.shape[1]}, kernel expects {c_in}")
    L = x.shape[0]
    if k == 1:
        out = matmul(x, getitem(kernel, 0))
    else:
        if causal:
            xp = pad(x, ((k - 1, 0), (0, 0)))
        else:
            xp = pad(x, (((k - 1) // 2, k // 2), (0, 0)))
        out = None
        for j in range(k):
            term = matmul(getitem(xp, slice(j, j + L)), getitem(kernel, j))
            out = term if out is None else add(out, term)
    if bias is not None:
        out = add(out, bias)
    return out


def depthwise_conv1d(x: Tensor, kernel: Tensor, bias: Tensor | None = None, causal: bool = False) -> Tensor:
    """Per-channel 1-D convolution: kernel [k, C] filters channel c with its
    own k taps. Padding matches conv1d."""
    if x.ndim != 2 or kernel.ndim != 2:
        raise DimensionError(f"depthwise_conv1d expects x [L,C], kernel [k,C]; got {x.shape}, {kernel.shape}")
    k, c = kernel.shape
    if x.shape[1] != c:
        raise DimensionError(f"depthwise_conv1d channel mismatch: x has {x.shape[1]}, kernel expects {c}")
    L = x.shape[0]
    if causal:
        xp = pad(x, ((k - 1, 0), (0, 0)))
    else:
        xp = pad(x, (((k - 1) // 2, k // 2), (0, 0)))
    out = None
    for j in range(k):
        term = mul(getitem(xp, slice(j, j + L)), getitem(kernel, j))
        out = term if out is None else add(out, term)
    if bias is not None:
        out = add(out, bias)
    return out


# ---- gradient checking ------------------------------------------------------


def grad_check(f, x: Tensor, h: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference grads.

    f maps the tensor to a scalar Tensor. x.data is perturbed in place one
    coordinate at a time, so f must read x on every call. Use float64 inputs
    for meaningful tolerances.

    Returns:
        max_i |ad_i - fd_i| / max(max|ad|, max|fd|, 1e-6).
    """
    x.zero_grad()
    out = f(x)
    backward(out)
    if x.grad is None:
        raise GraphError("f does not depend on x")
    g_ad = x.grad.copy()
    flat = x.data.reshape(-1)
    g_fd = np.zeros_like(flat)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(x).item()
            flat[i] = orig - h
            fm = f(x).item()
            flat[i] = orig
            g_fd[i] = (fp - fm) / (2.0 * h)
    g_fd = g_fd.reshape(x.data.shape)
    num = float(np.max(np.abs(g_ad - g_fd)))
    den = max(float(np.max(np.abs(g_ad))), float(np.max(np.abs(g_fd))), 1e-6)
    return num / den


def grad_check_params(loss_fn, named_params, h: float = 1e-5) -> dict[str, float]:
    """grad_check over a set of named parameter tensors.

    loss_fn takes no arguments and rebuilds the scalar loss from current
    parameter values. Returns {name: max relative error}.
    """
    errs: dict[str, float] = {}
    for name, p in named_params:
        errs[name] = grad_check(lambda _t, fn=loss_fn: fn(), p, h)
    return errs


# ---- small constructors -----------------------------------------------------


def zeros(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype))


def ones(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype))
