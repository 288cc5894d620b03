"""Dense numpy-backed tensors with reverse-mode automatic differentiation.

Every differentiable operation records its inputs and a backward closure on
the output tensor. The graph is implicit: each tensor carries a monotonically
increasing creation index, so walking the reachable nodes in descending index
order is a valid reverse topological order.

Broadcasting is restricted to the case where the second operand's shape is a
suffix of the first operand's shape (a bias broadcast over leading batch
dimensions), or the operand is a Python scalar.
"""

from __future__ import annotations

import itertools
import os
from contextlib import contextmanager
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

_counter = itertools.count()
_grad_enabled = True
DEBUG = os.environ.get("RELECTRA_DEBUG", "") not in ("", "0")


class ShapeError(ValueError):
    pass


class GradientStateError(RuntimeError):
    pass


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def set_debug(flag: bool) -> None:
    global DEBUG
    DEBUG = bool(flag)


class Tensor:
    """A dense real array with an optional gradient.

    ``data`` is a numpy array (row-major). ``grad`` is populated on leaves with
    ``requires_grad=True`` after :meth:`backward` and has the same shape.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_id", "_done", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._id = next(_counter)
        self._done = False
        self.op = "leaf"

    # -- basic properties ---------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return self.shape[0]

    # -- operators ------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor / tensor is not supported; multiply by a reciprocal")
        return mul(self, 1.0 / other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return permute(self, axes)

    @property
    def T(self):
        return swap_last(self)

    # -- autodiff -------------------------------------------------------------
    def backward(self) -> None:
        backward(self)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward_fn, op: str) -> Tensor:
    if DEBUG and not np.all(np.isfinite(data)):
        if all(np.all(np.isfinite(p.data)) for p in parents):
            raise FloatingPointError(f"non-finite output from {op} on finite inputs")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._id = next(_counter)
    out._done = False
    out.op = op
    needs = _grad_enabled and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_suffix(a_shape: tuple, b_shape: tuple, what: str) -> None:
    if a_shape == b_shape:
        return
    if len(b_shape) <= len(a_shape) and a_shape[len(a_shape) - len(b_shape):] == b_shape:
        return
    raise ShapeError(f"{what}: shapes {a_shape} and {b_shape} are not compatible")


def _reduce_to(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    return grad.reshape((-1,) + shape).sum(axis=0) if lead > 0 else grad


# -- elementwise ----------------------------------------------------------------

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        return _make(a.data + b, (a,), lambda g: (g,), "add_scalar")
    _check_suffix(a.shape, b.shape, "add")
    bshape = b.shape
    return _make(a.data + b.data, (a, b), lambda g: (g, _reduce_to(g, bshape)), "add")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -b)
    return add(a, neg(b))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        s = b
        return _make(a.data * s, (a,), lambda g: (g * s,), "mul_scalar")
    _check_suffix(a.shape, b.shape, "mul")
    ad, bd, bshape = a.data, b.data, b.shape
    return _make(ad * bd, (a, b), lambda g: (g * bd, _reduce_to(g * ad, bshape)), "mul")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return _make(np.log(ad), (a,), lambda g: (g / ad,), "log")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0
    return _make(a.data * pos, (a,), lambda g: (g * pos,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a: Tensor) -> Tensor:
    """Tanh-approximated GELU."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * (x * x * x))
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(out, (a,), bw, "gelu")


def dropout(a: Tensor, p: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout. Identity when ``p == 0`` or ``rng`` is None."""
    if p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p).astype(a.dtype) / (1.0 - p)
    return mul(a, Tensor(keep))


# -- shape ops ------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "permute")


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return permute(a, axes)


def getitem(a: Tensor, idx) -> Tensor:
    """Basic (slice/int) indexing; fancy indexing goes through :func:`embedding`."""
    shape, dtype = a.shape, a.dtype

    def bw(g):
        out = np.zeros(shape, dtype=dtype)
        out[idx] = g
        return (out,)

    return _make(a.data[idx], (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bw, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    expanded = [reshape(t, t.shape[:axis] + (1,) + t.shape[axis:]) for t in tensors]
    return concat(expanded, axis=axis)


def permute_rows(x: Tensor, perm: np.ndarray) -> Tensor:
    """Gather rows of ``x`` (B, L, d) by permutations ``perm`` (R, B, L).

    Returns (R, B, L, d). Each ``perm[r, b]`` must be a permutation of
    ``range(L)``; the backward pass scatters through the inverse permutation.
    """
    xd = x.data
    out = np.take_along_axis(xd[None], perm[..., None], axis=2)
    inv = np.argsort(perm, axis=-1, kind="stable")

    def bw(g):
        back = np.take_along_axis(g, inv[..., None], axis=2)
        return (back.sum(axis=0),)

    return _make(out, (x,), bw, "permute_rows")


def permute_along(x: Tensor, perm: np.ndarray) -> Tensor:
    """Reorder rows of ``x`` (..., L, d) by per-batch permutations ``perm`` (..., L)."""
    out = np.take_along_axis(x.data, perm[..., None], axis=-2)
    inv = np.argsort(perm, axis=-1, kind="stable")
    return _make(out, (x,), lambda g: (np.take_along_axis(g, inv[..., None], axis=-2),), "permute_along")


# -- reductions -----------------------------------------------------------------

def tsum(a: Tensor, axis=None) -> Tensor:
    shape = a.shape
    if axis is None:
        return _make(np.asarray(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    ax = axis % a.ndim

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),)

    return _make(a.data.sum(axis=ax), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis), 1.0 / n)


# -- linear algebra -------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product.

    ``a`` is (..., n, k). ``b`` is either (..., k, m) with identical leading
    dimensions or a plain (k, m) matrix shared across the leading dimensions.
    """
    ad, bd = a.data, b.data
    if ad.ndim < 1 or bd.ndim < 2 or ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions of {a.shape} and {b.shape} do not agree")
    if bd.ndim > 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul: batch dimensions of {a.shape} and {b.shape} differ")
    out = ad @ bd

    if bd.ndim == 2:
        def bw(g):
            ga = g @ bd.T
            k = ad.shape[-1]
            gb = ad.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            return ga, gb
    else:
        def bw(g):
            return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _make(out, (a, b), bw, "matmul")


def apply_linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight + bias`` over the last dimension of ``x``."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"apply_linear: input shape {x.shape} does not match weight shape {weight.shape}")
    out = matmul(x, weight)
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"apply_linear: bias shape {bias.shape} does not match weight shape {weight.shape}")
        out = add(out, bias)
    return out


# -- normalisation and probabilities --------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Softmax over the last axis, computed with max subtraction."""
    xd = x.data
    z = xd - xd.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (p * (g - (g * p).sum(axis=-1, keepdims=True)),)

    return _make(p, (x,), bw, "softmax")


def logsumexp(x: Tensor) -> Tensor:
    """Log-sum-exp over the last axis (keeps a trailing singleton axis)."""
    xd = x.data
    m = xd.max(axis=-1, keepdims=True)
    s = np.exp(xd - m).sum(axis=-1, keepdims=True)
    out = m + np.log(s)

    def bw(g):
        return (g * np.exp(xd - out),)

    return _make(out, (x,), bw, "logsumexp")


def log_softmax(x: Tensor) -> Tensor:
    xd = x.data
    m = xd.max(axis=-1, keepdims=True)
    lse = m + np.log(np.exp(xd - m).sum(axis=-1, keepdims=True))
    out = xd - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _make(out, (x,), bw, "log_softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    gd = gamma.data
    out = xhat * gd + beta.data
    n = xd.shape[-1]

    def bw(g):
        gx_hat = g * gd
        gx = inv * (gx_hat - gx_hat.mean(axis=-1, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=-1, keepdims=True))
        ggamma = (g * xhat).reshape(-1, n).sum(axis=0)
        gbeta = g.reshape(-1, n).sum(axis=0)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), bw, "layer_norm")


def embedding(weight: Tensor, ids) -> Tensor:
    """Row lookup ``weight[ids]`` with scatter-add backward."""
    ids = np.asarray(ids, dtype=np.int64)
    V = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = int(ids[(ids < 0) | (ids >= V)].flat[0])
        raise IndexError(f"token id {bad} out of range for vocabulary of size {V}")
    wshape, wdtype = weight.shape, weight.dtype

    def bw(g):
        out = np.zeros(wshape, dtype=wdtype)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, wshape[1]))
        return (out,)

    return _make(weight.data[ids], (weight,), bw, "embedding")


# -- losses ---------------------------------------------------------------------

def cross_entropy_loss(logits: Tensor, targets, ignore_mask=None) -> Tensor:
    """Mean negative log-likelihood over non-ignored rows of ``logits`` (n, V).

    ``ignore_mask[i]`` True drops row ``i``. With no rows left the loss is 0.
    """
    ld = logits.data
    if ld.ndim != 2:
        raise ShapeError(f"cross_entropy_loss expects (n, V) logits, got {logits.shape}")
    n, V = ld.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != n:
        raise ShapeError(f"cross_entropy_loss: {n} rows but {targets.shape[0]} targets")
    keep = np.ones(n, dtype=bool) if ignore_mask is None else ~np.asarray(ignore_mask, dtype=bool).reshape(-1)
    kt = targets[keep]
    if kt.size and (kt.min() < 0 or kt.max() >= V):
        raise IndexError(f"target id out of range [0, {V})")
    count = int(keep.sum())
    if count == 0:
        return _make(np.zeros((), dtype=ld.dtype), (logits,), lambda g: (np.zeros_like(ld),), "cross_entropy")
    rows = np.nonzero(keep)[0]
    sub_ = ld[rows]
    m = sub_.max(axis=-1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(sub_ - m).sum(axis=-1))
    nll = lse - sub_[np.arange(count), kt]
    loss = np.asarray(nll.sum() / count, dtype=ld.dtype)

    def bw(g):
        grad = np.zeros_like(ld)
        p = np.exp(sub_ - lse[:, None])
        p[np.arange(count), kt] -= 1.0
        grad[rows] = p * (g / count)
        return (grad,)

    return _make(loss, (logits,), bw, "cross_entropy")


def binary_cross_entropy_with_logits(logits: Tensor, labels, mask=None) -> Tensor:
    """Mean stabilised BCE over positions of ``logits`` where ``mask`` is true."""
    zd = logits.data
    y = np.asarray(labels, dtype=zd.dtype)
    if y.shape != zd.shape:
        raise ShapeError(f"binary_cross_entropy_with_logits: logits {zd.shape} vs labels {y.shape}")
    w = np.ones(zd.shape, dtype=zd.dtype) if mask is None else np.asarray(mask, dtype=zd.dtype)
    count = float(w.sum())
    if count == 0:
        return _make(np.zeros((), dtype=zd.dtype), (logits,), lambda g: (np.zeros_like(zd),), "bce")
    # max(z,0) - z*y + log(1 + exp(-|z|))
    per = np.maximum(zd, 0) - zd * y + np.log1p(np.exp(-np.abs(zd)))
    loss = np.asarray((per * w).sum() / count, dtype=zd.dtype)
    sig = 0.5 * (1.0 + np.tanh(0.5 * zd))

    def bw(g):
        return ((sig - y) * w * (g / count),)

    return _make(loss, (logits,), bw, "bce")


# -- backward -------------------------------------------------------------------

def _topo(loss: Tensor) -> list:
    seen = set()
    nodes = []
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if id(t) in seen:
            continue
        seen.add(id(t))
        nodes.append(t)
        stack_.extend(p for p in t._parents if p.requires_grad)
    nodes.sort(key=lambda t: t._id, reverse=True)
    return nodes


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ``requires_grad`` leaf reachable from ``loss``.

    Leaf gradients accumulate across calls; reset them with ``zero_grad``.
    Calling this twice on the same loss raises :class:`GradientStateError`.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    if loss._done:
        raise GradientStateError("backward already called on this loss")
    loss._done = True
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in _topo(loss):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if not parent.requires_grad or pg is None:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def check_gradients(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> float:
    """Largest relative disagreement between autodiff and central differences.

    ``f`` maps ``x`` to a scalar tensor and is re-evaluated for every element.
    """
    x.requires_grad = True
    x.grad = None
    out = f(x)
    backward(out)
    g_ad = np.zeros_like(x.data) if x.grad is None else x.grad.copy()
    x.grad = None
    flat = x.data.reshape(-1)
    g_fd = np.zeros(flat.shape, dtype=np.float64)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f(x).data)
            flat[i] = orig - eps
            fm = float(f(x).data)
            flat[i] = orig
            g_fd[i] = (fp - fm) / (2 * eps)
    g_ad = g_ad.reshape(-1).astype(np.float64)
    denom = np.maximum(np.maximum(np.abs(g_ad), np.abs(g_fd)), 1e-8)
    return float(np.max(np.abs(g_ad - g_fd) / denom)) if flat.size else 0.0


def parameters_of(tensors: Iterable[Tensor]) -> list:
    return [t for t in tensors if t.requires_grad]
