"""Parameter containers and the shared trainable layers.

Initialization scheme (applies everywhere unless a layer documents
otherwise): weights are uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)] drawn
in float64 from the supplied generator and cast to the build dtype, biases
and norm offsets start at zero, norm gains at one. Parameters are created
in attribute-definition order, so a given seed always yields bit-identical
models.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Base class; walks attributes to enumerate parameters in order."""

    def named_parameters(self, prefix: str = ""):
        for name, val in vars(self).items():
            if isinstance(val, Tensor):
                if val.requires_grad:
                    yield prefix + name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(f"{prefix}{name}.")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")
                    elif isinstance(item, Tensor) and item.requires_grad:
                        yield f"{prefix}{name}.{i}", item

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.size for p in self.parameters())


def _uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = 1.0 / np.sqrt(float(fan_in))
    w = rng.uniform(-bound, bound, size=shape)
    return Tensor(w.astype(dtype), requires_grad=True)


class Linear(Module):
    """Affine map x @ w + b with w of shape [d_in, d_out]."""

    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, dtype, bias: bool = True):
        self.w = _uniform(rng, (d_in, d_out), d_in, dtype)
        self.b = Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.w)
        return T.add(y, self.b) if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, dtype, eps: float = 1e-5):
        self.gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.bias, self.eps)


class Conv1d(Module):
    """Length-preserving 1-D convolution, kernel [k, C_in, C_out]."""

    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator, dtype, bias: bool = True):
        self.kernel = _uniform(rng, (k, c_in, c_out), k * c_in, dtype)
        self.b = Tensor(np.zeros(c_out, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        return T.conv1d(x, self.kernel, self.b, causal=causal)


class DepthwiseConv1d(Module):
    """Per-channel 1-D convolution, kernel [k, C]."""

    def __init__(self, channels: int, k: int, rng: np.random.Generator, dtype, bias: bool = True):
        self.kernel = _uniform(rng, (k, channels), k, dtype)
        self.b = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor, causal: bool = False) -> Tensor:
        return T.depthwise_conv1d(x, self.kernel, self.b, causal=causal)


class BlockDiagonal(Module):
    """Head-wise block-diagonal linear map.

    The feature axis is split into n_blocks contiguous chunks of block_size;
    chunk i is mapped by its own [block_size, block_size] matrix. No bias.
    """

    def __init__(self, d: int, block_size: int, rng: np.random.Generator, dtype):
        if d % block_size:
            raise ValueError(f"feature dim {d} not divisible by block size {block_size}")
        self.block_size = block_size
        self.n_blocks = d // block_size
        self.w = _uniform(rng, (self.n_blocks, block_size, block_size), block_size, dtype)

    def __call__(self, x: Tensor) -> Tensor:
        L, d = x.shape
        xb = T.reshape(x, L, self.n_blocks, self.block_size)
        xb = T.transpose(xb, (1, 0, 2))  # [nb, L, bs]
        yb = T.matmul(xb, self.w)
        yb = T.transpose(yb, (1, 0, 2))
        return T.reshape(yb, L, d)
