"""Multi-head self-attention and the two attention-based blocks.

The transformer block is the original post-norm layout (MHSA -> add & norm
-> FFN -> add & norm). The conformer block is the macaron sandwich: two
half-step feed-forward modules around self-attention and a
GLU/depthwise-convolution module, all pre-normed, with layer norm standing
in for batch norm inside the convolution module so inference is
batch-independent.
"""

from __future__ import annotations

import numpy as np

from . import pe as PE
from . import tensor as T
from .errors import ConfigError
from .module import Conv1d, DepthwiseConv1d, LayerNorm, Linear, Module
from .tensor import Tensor

_MASK_CACHE: dict[tuple[int, str], np.ndarray] = {}


def causal_mask(length: int, dtype=np.float32) -> Tensor:
    """[L, L] additive mask: 0 on and below the diagonal, -inf above."""
    key = (length, np.dtype(dtype).name)
    if key not in _MASK_CACHE:
        m = np.zeros((length, length), dtype=dtype)
        m[np.triu_indices(length, k=1)] = -np.inf
        _MASK_CACHE[key] = m
    return Tensor(_MASK_CACHE[key])


class MultiHeadSelfAttention(Module):
    """Scaled dot-product attention over frames, H heads of size d_model/H."""

    def __init__(self, d_model: int, heads: int, rng, dtype):
        if d_model % heads:
            raise ConfigError(f"d_model {d_model} not divisible by {heads} heads")
        self.heads = heads
        self.d_head = d_model // heads
        self.wq = Linear(d_model, d_model, rng, dtype)
        self.wk = Linear(d_model, d_model, rng, dtype)
        self.wv = Linear(d_model, d_model, rng, dtype)
        self.wo = Linear(d_model, d_model, rng, dtype)

    def _split(self, x: Tensor, L: int) -> Tensor:
        x = T.reshape(x, L, self.heads, self.d_head)
        return T.transpose(x, (1, 0, 2))  # [H, L, d_head]

    def __call__(self, x: Tensor, causal: bool, rope: bool = False) -> Tensor:
        L, d = x.shape
        q = self._split(self.wq(x), L)
        k = self._split(self.wk(x), L)
        v = self._split(self.wv(x), L)
        if rope:
            cos_t, sin_t = PE.rotary_tables(L, self.d_head, x.dtype)
            cos, sin = Tensor(cos_t), Tensor(sin_t)
            q = PE.apply_rotary(q, cos, sin)
            k = PE.apply_rotary(k, cos, sin)
        scores = T.mul(T.matmul(q, T.swapaxes(k, -1, -2)), 1.0 / np.sqrt(self.d_head))
        if causal:
            scores = T.add(scores, causal_mask(L, x.dtype))
        attn = T.softmax(scores, axis=-1)
        ctx = T.matmul(attn, v)  # [H, L, d_head]
        ctx = T.reshape(T.transpose(ctx, (1, 0, 2)), L, d)
        return self.wo(ctx)


class TransformerBlock(Module):
    def __init__(self, d_model: int, d_ff: int, heads: int, rng, dtype):
        self.attn = MultiHeadSelfAttention(d_model, heads, rng, dtype)
        self.norm1 = LayerNorm(d_model, dtype)
        self.ffn_in = Linear(d_model, d_ff, rng, dtype)
        self.ffn_out = Linear(d_ff, d_model, rng, dtype)
        self.norm2 = LayerNorm(d_model, dtype)

    def __call__(self, x: Tensor, causal: bool, rope: bool = False) -> Tensor:
        x = self.norm1(T.add(x, self.attn(x, causal, rope)))
        h = self.ffn_out(T.relu(self.ffn_in(x)))
        return self.norm2(T.add(x, h))


class ConformerBlock(Module):
    def __init__(self, d_model: int, d_ff: int, heads: int, rng, dtype, conv_kernel: int = 31):
        self.ffn1_norm = LayerNorm(d_model, dtype)
        self.ffn1_in = Linear(d_model, d_ff, rng, dtype)
        self.ffn1_out = Linear(d_ff, d_model, rng, dtype)
        self.attn_norm = LayerNorm(d_model, dtype)
        self.attn = MultiHeadSelfAttention(d_model, heads, rng, dtype)
        self.conv_norm = LayerNorm(d_model, dtype)
        self.conv_in = Conv1d(d_model, 2 * d_model, 1, rng, dtype)  # GLU halves it back
        self.conv_dw = DepthwiseConv1d(d_model, conv_kernel, rng, dtype)
        self.conv_mid_norm = LayerNorm(d_model, dtype)
        self.conv_out = Conv1d(d_model, d_model, 1, rng, dtype)
        self.ffn2_norm = LayerNorm(d_model, dtype)
        self.ffn2_in = Linear(d_model, d_ff, rng, dtype)
        self.ffn2_out = Linear(d_ff, d_model, rng, dtype)
        self.final_norm = LayerNorm(d_model, dtype)
        self.d_model = d_model

    def _ffn(self, x: Tensor, norm: LayerNorm, lin_in: Linear, lin_out: Linear) -> Tensor:
        return lin_out(T.silu(lin_in(norm(x))))

    def _conv_module(self, x: Tensor, causal: bool) -> Tensor:
        d = self.d_model
        h = self.conv_in(self.conv_norm(x))  # [L, 2d]
        a = h[:, :d]
        b = h[:, d:]
        h = T.mul(a, T.sigmoid(b))  # GLU
        h = self.conv_dw(h, causal=causal)
        h = T.silu(self.conv_mid_norm(h))
        return self.conv_out(h)

    def __call__(self, x: Tensor, causal: bool, rope: bool = False) -> Tensor:
        x = T.add(x, T.mul(self._ffn(x, self.ffn1_norm, self.ffn1_in, self.ffn1_out), 0.5))
        x = T.add(x, self.attn(self.attn_norm(x), causal, rope))
        x = T.add(x, self._conv_module(x, causal))
        x = T.add(x, T.mul(self._ffn(x, self.ffn2_norm, self.ffn2_in, self.ffn2_out), 0.5))
        return self.final_norm(x)
