"""Parameter-holding building blocks on top of the tensor ops.

Modules auto-register Tensor attributes as parameters and Module attributes
as submodules; named_parameters() flattens to dot-separated names which are
also the checkpoint tensor names. Buffers (batch-norm running stats) are
plain numpy arrays registered explicitly.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_mods", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._mods[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, arr: np.ndarray) -> None:
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out = {}
        for n, p in self._params.items():
            out[prefix + n] = p
        for n, m in self._mods.items():
            out.update(m.named_parameters(prefix + n + "."))
        return out

    def named_buffers(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for n, b in self._buffers.items():
            out[prefix + n] = b
        for n, m in self._mods.items():
            out.update(m.named_buffers(prefix + n + "."))
        return out

    def named_state(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Parameters + buffers as numpy arrays (checkpoint payload)."""
        out = {n: p.data for n, p in self.named_parameters(prefix).items()}
        out.update(self.named_buffers(prefix))
        return out

    def train(self, flag: bool = True) -> "Module":
        object.__setattr__(self, "training", flag)
        for m in self._mods.values():
            m.train(flag)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _xavier(rng: np.random.Generator, shape: tuple, fan_in: int, fan_out: int) -> np.ndarray:
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape).astype(np.float32)


class Linear(Module):
    def __init__(self, dim_in: int, dim_out: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.weight = Tensor(_xavier(rng, (dim_in, dim_out), dim_in, dim_out), requires_grad=True)
        self.bias = Tensor(np.zeros(dim_out, np.float32), requires_grad=True) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv3d(Module):
    def __init__(self, cin: int, cout: int, kernel, rng: np.random.Generator,
                 stride=(1, 1, 1), padding=(0, 0, 0)):
        super().__init__()
        k = kernel if isinstance(kernel, tuple) else (kernel,) * 3
        kvol = int(np.prod(k))
        self.stride = stride
        self.padding = padding
        self.weight = Tensor(_xavier(rng, (cout, cin) + k, cin * kvol, cout * kvol),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv3d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose3d(Module):
    def __init__(self, cin: int, cout: int, kernel, rng: np.random.Generator, stride):
        super().__init__()
        k = kernel if isinstance(kernel, tuple) else (kernel,) * 3
        kvol = int(np.prod(k))
        self.stride = stride
        self.weight = Tensor(_xavier(rng, (cin, cout) + k, cin * kvol, cout * kvol),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(cout, np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose3d(x, self.weight, self.bias, self.stride)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Tensor(np.ones(dim, np.float32), requires_grad=True)
        self.bias = Tensor(np.zeros(dim, np.float32), requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class BatchNorm3d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Tensor(np.ones(channels, np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, np.float32), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels, np.float32))
        self.register_buffer("running_var", np.ones(channels, np.float32))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm3d(x, self.gamma, self.beta, self.running_mean,
                              self.running_var, self.momentum, self.eps, self.training)


class Dropout(Module):
    def __init__(self, rate: float, rng: np.random.Generator):
        super().__init__()
        self.rate = rate
        self.rng = rng

    def forward(self, x: Tensor) -> Tensor:
        return T.dropout(x, self.rate, self.rng, self.training)


class MultiHeadAttention(Module):
    """Scaled dot-product attention: softmax(Q K^T / sqrt(d_k)) V per head.

    Heads are processed one at a time to keep the N x M score matrix of a
    single head as the memory high-water mark.
    """

    def __init__(self, dim: int, heads: int, rng: np.random.Generator,
                 dropout: float = 0.0, drop_rng: np.random.Generator | None = None):
        super().__init__()
        if dim % heads != 0:
            raise ValueError(f"attention dim {dim} not divisible by heads {heads}")
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(dim, dim, rng)
        self.k = Linear(dim, dim, rng)
        self.v = Linear(dim, dim, rng)
        self.out = Linear(dim, dim, rng)
        self.drop = Dropout(dropout, drop_rng) if dropout > 0 else None

    def forward(self, q_in: Tensor, k_in: Tensor, v_in: Tensor) -> Tensor:
        qp = self.q(q_in)
        kp = self.k(k_in)
        vp = self.v(v_in)
        scale = 1.0 / math.sqrt(self.head_dim)
        pieces = []
        for h in range(self.heads):
            lo = h * self.head_dim
            qh = T.narrow(qp, 1, lo, self.head_dim)
            kh = T.narrow(kp, 1, lo, self.head_dim)
            vh = T.narrow(vp, 1, lo, self.head_dim)
            scores = T.matmul(qh, T.permute(kh, (1, 0))) * scale
            attn = T.softmax(scores, axis=-1)
            pieces.append(T.matmul(attn, vh))
        merged = T.concat(pieces, axis=1)
        out = self.out(merged)
        if self.drop is not None:
            out = self.drop(out)
        return out


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator,
                 dropout: float = 0.0, drop_rng: np.random.Generator | None = None):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng)
        self.drop = Dropout(dropout, drop_rng) if dropout > 0 else None

    def forward(self, x: Tensor) -> Tensor:
        h = T.gelu(self.fc1(x))
        h = self.fc2(h)
        if self.drop is not None:
            h = self.drop(h)
        return h


class TransformerBlock(Module):
    """Pre-norm block: x + MHSA(LN(x)), then x + MLP(LN(x))."""

    def __init__(self, dim: int, heads: int, mlp_ratio: int, rng: np.random.Generator,
                 dropout: float = 0.0, drop_rng: np.random.Generator | None = None):
        super().__init__()
        self.ln1 = LayerNorm(dim)
        self.attn = MultiHeadAttention(dim, heads, rng, dropout, drop_rng)
        self.ln2 = LayerNorm(dim)
        self.mlp = Mlp(dim, dim * mlp_ratio, rng, dropout, drop_rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.ln1(x)
        x = x + self.attn(h, h, h)
        h = self.ln2(x)
        return x + self.mlp(h)
