"""Reverse-mode autodiff on float32 numpy arrays.

Every op records a backward closure on its output tensor; backward() walks the
recorded graph once in reverse topological order, accumulates gradients into
requiring tensors, then frees the closures and marks the graph consumed. A
second backward over the same graph is an error, as is calling backward on a
non-scalar.

All op outputs are checked for NaN/Inf and raise NonFiniteError instead of
propagating silently. Everything is float32; inputs of other dtypes are cast
on construction.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import erf

from . import backend


class GraphError(RuntimeError):
    """Misuse of the recorded graph (consumed graph, non-scalar loss, ...)."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


_grad_enabled = True


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float32)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._consumed = False

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
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        if self._consumed:
            raise GraphError("backward on a consumed graph")
        if self.data.size != 1:
            raise GraphError(f"backward requires a scalar, got shape {self.data.shape}")
        if not self.requires_grad:
            raise GraphError("backward on a tensor that does not require grad")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            fn = node._backward
            if fn is not None:
                fn(node.grad)
                # intermediate node: free its grad and closure to cap memory
                node.grad = None if node is not self else node.grad
                node._backward = None
                node._parents = ()
            node._consumed = True

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, _wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __sub__(self, other):
        return add(self, neg(_wrap(other)))

    def __rsub__(self, other):
        return add(_wrap(other), neg(self))

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, np.float32))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{op} produced non-finite values")


def _result(data: np.ndarray, op: str, parents: tuple, bwd) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = bwd
    return out


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    keep = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True)
    return g.reshape(shape)


# -- elementwise ---------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def bwd(g):
        _acc(a, _unbroadcast(g, a.data.shape))
        _acc(b, _unbroadcast(g, b.data.shape))

    return _result(data, "add", (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def bwd(g):
        _acc(a, _unbroadcast(g * b.data, a.data.shape))
        _acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _result(data, "mul", (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _acc(a, -g)

    return _result(-a.data, "neg", (a,), bwd)


def div(a: Tensor, b: Tensor) -> Tensor:
    data = a.data / b.data

    def bwd(g):
        _acc(a, _unbroadcast(g / b.data, a.data.shape))
        _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _result(data, "div", (a, b), bwd)


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    data = a.data ** np.float32(p)

    def bwd(g):
        _acc(a, g * np.float32(p) * a.data ** np.float32(p - 1.0))

    return _result(data, "power", (a,), bwd)


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(a.data)

    def bwd(g):
        _acc(a, g / a.data)

    return _result(data, "log", (a,), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    data = np.clip(a.data, np.float32(lo), np.float32(hi))
    mask = ((a.data >= lo) & (a.data <= hi)).astype(np.float32)

    def bwd(g):
        _acc(a, g * mask)

    return _result(data, "clamp", (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(np.float32)

    def bwd(g):
        _acc(a, g * mask)

    return _result(a.data * mask, "relu", (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    e = np.exp(-np.abs(a.data))
    data = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(np.float32)

    def bwd(g):
        _acc(a, g * data * (1.0 - data))

    return _result(data, "sigmoid", (a,), bwd)


_INV_SQRT2 = np.float32(1.0 / math.sqrt(2.0))
_INV_SQRT2PI = np.float32(1.0 / math.sqrt(2.0 * math.pi))


def gelu(a: Tensor) -> Tensor:
    cdf = (0.5 * (1.0 + erf(a.data * _INV_SQRT2))).astype(np.float32)
    data = a.data * cdf

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(np.float32(-0.5) * a.data * a.data)
        _acc(a, g * (cdf + a.data * pdf))

    return _result(data, "gelu", (a,), bwd)


# -- shape ops -----------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        _acc(a, g.reshape(a.data.shape))

    return _result(a.data.reshape(shape), "reshape", (a,), bwd)


def permute(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _acc(a, np.ascontiguousarray(g.transpose(inv)))

    return _result(np.ascontiguousarray(a.data.transpose(axes)), "permute", (a,), bwd)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]

    def bwd(g):
        off = 0
        idx = [slice(None)] * g.ndim
        for t, s in zip(tensors, sizes):
            idx[axis] = slice(off, off + s)
            _acc(t, np.ascontiguousarray(g[tuple(idx)]))
            off += s

    return _result(data, "concat", tuple(tensors), bwd)


# -- reductions ----------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _acc(a, np.broadcast_to(g, a.data.shape).astype(np.float32))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg, a.data.shape).astype(np.float32))

    return _result(data, "sum", (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims, dtype=np.float32)
    inv = np.float32(1.0 / n)

    def bwd(g):
        if axis is None:
            _acc(a, np.broadcast_to(g * inv, a.data.shape).astype(np.float32))
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _acc(a, np.broadcast_to(gg * inv, a.data.shape).astype(np.float32))

    return _result(data, "mean", (a,), bwd)


# -- linear algebra ------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects tensors with at least 2 dims")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ValueError(f"matmul shape mismatch {a.data.shape} @ {b.data.shape}")
    data = np.matmul(a.data, b.data)

    def bwd(g):
        ga = np.matmul(g, b.data.swapaxes(-1, -2))
        gb = np.matmul(a.data.swapaxes(-1, -2), g)
        _acc(a, _unbroadcast(ga, a.data.shape))
        _acc(b, _unbroadcast(gb, b.data.shape))

    return _result(data, "matmul", (a, b), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * data).sum(axis=axis, keepdims=True)
        _acc(a, (g - dot) * data)

    return _result(data, "softmax", (a,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    mu = x.data.mean(axis=-1, keepdims=True, dtype=np.float32)
    diff = x.data - mu
    var = (diff * diff).mean(axis=-1, keepdims=True, dtype=np.float32)
    inv = 1.0 / np.sqrt(var + np.float32(eps))
    xhat = diff * inv
    data = xhat * gain.data + bias.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        _acc(gain, (g * xhat).sum(axis=lead))
        _acc(bias, g.sum(axis=lead))
        gh = g * gain.data
        term = gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True)
        _acc(x, term * inv)

    return _result(data, "layer_norm", (x, gain, bias), bwd)


def batch_norm3d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = 0.1,
    eps: float = 1e-5,
    training: bool = True,
) -> Tensor:
    """Batch normalization over the spatial axes of a (C, Z, Y, X) tensor.

    Running buffers are plain numpy arrays updated in place during training
    (torch semantics: unbiased variance goes into the running buffer, biased
    variance normalizes the batch).
    """
    axes = (1, 2, 3)
    gshape = (-1, 1, 1, 1)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True, dtype=np.float32)
        diff = x.data - mu
        var = (diff * diff).mean(axis=axes, keepdims=True, dtype=np.float32)
        n = int(np.prod([x.data.shape[i] for i in axes]))
        unbiased = var.reshape(-1) * (n / max(n - 1, 1))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        inv = 1.0 / np.sqrt(var + np.float32(eps))
        xhat = diff * inv
        data = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

        def bwd(g):
            _acc(gamma, (g * xhat).sum(axis=axes))
            _acc(beta, g.sum(axis=axes))
            gm = g.mean(axis=axes, keepdims=True)
            gxm = (g * xhat).mean(axis=axes, keepdims=True)
            _acc(x, gamma.data.reshape(gshape) * inv * (g - gm - xhat * gxm))

        return _result(data, "batch_norm3d", (x, gamma, beta), bwd)

    inv = (1.0 / np.sqrt(running_var + eps)).astype(np.float32).reshape(gshape)
    xhat = (x.data - running_mean.astype(np.float32).reshape(gshape)) * inv
    data = xhat * gamma.data.reshape(gshape) + beta.data.reshape(gshape)

    def bwd_eval(g):
        _acc(gamma, (g * xhat).sum(axis=axes))
        _acc(beta, g.sum(axis=axes))
        _acc(x, g * gamma.data.reshape(gshape) * inv)

    return _result(data, "batch_norm3d", (x, gamma, beta), bwd_eval)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool = True) -> Tensor:
    if not training or rate <= 0.0:
        return x
    keep = np.float32(1.0 - rate)
    mask = (rng.random(x.data.shape) >= rate).astype(np.float32) / keep

    def bwd(g):
        _acc(x, g * mask)

    return _result(x.data * mask, "dropout", (x,), bwd)


# -- convolution ---------------------------------------------------------


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(i) for i in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 ints, got {v!r}")
    return t


def conv3d(x: Tensor, w: Tensor, b: Tensor | None,
           stride=(1, 1, 1), padding=(0, 0, 0)) -> Tensor:
    stride = _triple(stride)
    padding = _triple(padding)
    if x.ndim != 4 or w.ndim != 5:
        raise ValueError(f"conv3d expects x (C,Z,Y,X) and w (Co,Ci,kd,kh,kw), "
                         f"got {x.data.shape} and {w.data.shape}")
    if x.data.shape[0] != w.data.shape[1]:
        raise ValueError(f"conv3d channel mismatch: input has {x.data.shape[0]}, "
                         f"weight expects {w.data.shape[1]}")
    if any(s < 1 for s in stride) or any(p < 0 for p in padding):
        raise ValueError("conv3d stride must be >= 1 and padding >= 0")
    ksp = w.data.shape[2:]
    padded_sp = tuple(x.data.shape[1 + i] + 2 * padding[i] for i in range(3))
    if any(ksp[i] > padded_sp[i] for i in range(3)):
        raise ValueError(f"conv3d kernel {ksp} larger than padded input {padded_sp}")

    if any(padding):
        xp = np.pad(x.data, ((0, 0),) + tuple((p, p) for p in padding))
    else:
        xp = x.data
    data = backend.gather3d(xp, w.data, stride)
    if b is not None:
        if b.data.shape != (w.data.shape[0],):
            raise ValueError(f"conv3d bias shape {b.data.shape} != ({w.data.shape[0]},)")
        data = data + b.data.reshape(-1, 1, 1, 1)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if b is not None:
            _acc(b, g.sum(axis=(1, 2, 3)))
        if w.requires_grad:
            _acc(w, backend.wgrad3d(xp, g, ksp, stride))
        if x.requires_grad:
            gx = backend.scatter3d(g, w.data, stride, padded_sp)
            if any(padding):
                pz, py, px = padding
                gx = np.ascontiguousarray(
                    gx[:, pz:padded_sp[0] - pz, py:padded_sp[1] - py, px:padded_sp[2] - px])
            _acc(x, gx)

    parents = (x, w) if b is None else (x, w, b)
    return _result(data, "conv3d", parents, bwd)


def conv_transpose3d(x: Tensor, w: Tensor, b: Tensor | None, stride=(1, 1, 1)) -> Tensor:
    """Adjoint of conv3d: <conv3d(u, w), v> == <u, conv_transpose3d(v, w)>.

    x has the conv OUTPUT channel count (w.shape[0]); the result has the conv
    INPUT channel count (w.shape[1]) at upsampled extent (Z-1)*stride + k.
    """
    stride = _triple(stride)
    if x.ndim != 4 or w.ndim != 5:
        raise ValueError(f"conv_transpose3d expects x (A,Z,Y,X) and w (A,B,kd,kh,kw), "
                         f"got {x.data.shape} and {w.data.shape}")
    if x.data.shape[0] != w.data.shape[0]:
        raise ValueError(f"conv_transpose3d channel mismatch: input has {x.data.shape[0]}, "
                         f"weight expects {w.data.shape[0]}")
    if any(s < 1 for s in stride):
        raise ValueError("conv_transpose3d stride must be >= 1")
    ksp = w.data.shape[2:]
    out_sp = tuple((x.data.shape[1 + i] - 1) * stride[i] + ksp[i] for i in range(3))
    data = backend.scatter3d(x.data, w.data, stride, out_sp)
    if b is not None:
        if b.data.shape != (w.data.shape[1],):
            raise ValueError(f"conv_transpose3d bias shape {b.data.shape} != ({w.data.shape[1]},)")
        data = data + b.data.reshape(-1, 1, 1, 1)

    def bwd(g):
        g = np.ascontiguousarray(g)
        if b is not None:
            _acc(b, g.sum(axis=(1, 2, 3)))
        if w.requires_grad:
            _acc(w, backend.wgrad3d(g, x.data, ksp, stride))
        if x.requires_grad:
            _acc(x, backend.gather3d(g, w.data, stride))

    parents = (x, w) if b is None else (x, w, b)
    return _result(data, "conv_transpose3d", parents, bwd)


# -- 3x3x3 pooling (soft morphology) --------------------------------------


def minpool3(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"minpool3 expects (C,Z,Y,X), got {x.data.shape}")
    data, arg = backend.minpool3(np.ascontiguousarray(x.data))

    def bwd(g):
        _acc(x, backend.pool3_backward(np.ascontiguousarray(g), arg, x.data.shape))

    return _result(data, "minpool3", (x,), bwd)


def maxpool3(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"maxpool3 expects (C,Z,Y,X), got {x.data.shape}")
    data, arg = backend.maxpool3(np.ascontiguousarray(x.data))

    def bwd(g):
        _acc(x, backend.pool3_backward(np.ascontiguousarray(g), arg, x.data.shape))

    return _result(data, "maxpool3", (x,), bwd)


def narrow(x: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    if not 0 <= start and start + length <= x.data.shape[axis]:
        raise ValueError(f"narrow [{start}:{start + length}) out of range on axis {axis} "
                         f"of shape {x.data.shape}")
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        gx = np.zeros_like(x.data)
        gx[idx] = g
        _acc(x, gx)

    return _result(np.ascontiguousarray(x.data[idx]), "narrow", (x,), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x @ w + b with x (..., In), w (In, Out), b (Out,)."""
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out
