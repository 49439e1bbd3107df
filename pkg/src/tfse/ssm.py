"""Selective state-space blocks with sequential and parallel scans.

The recurrence per channel and state dim is

    h_t = exp(delta_t * A) h_{t-1} + (delta_t * u_t) B_t
    y_t = C_t . h_t + D * u_t

with input-dependent delta, B, C (the selection mechanism) and A = -exp(A_log)
strictly negative, so exp(delta*A) lies in (0, 1) and the state stays bounded
for bounded inputs. Both scan engines build the same autodiff graph
primitives, so gradients flow through either; the parallel engine is a
Hillis-Steele log-doubling scan over the affine maps h -> a*h + b, whose
composition law is (a2, b2) o (a1, b1) = (a2*a1, a2*b1 + b2).
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import NumericError
from .module import DepthwiseConv1d, LayerNorm, Linear, Module
from .tensor import Tensor


def _check_finite(name: str, *tensors: Tensor) -> None:
    for t in tensors:
        if not np.all(np.isfinite(t.data)):
            raise NumericError(f"{name}: non-finite values in scan inputs")


def _affine_scan(a: Tensor, b: Tensor) -> Tensor:
    """Inclusive scan of h_t = a_t * h_{t-1} + b_t with h_0 = 0.

    a and b are [L, ...]; returns h of the same shape. Log-doubling:
    level s composes each position with the one s steps earlier, so after
    ceil(log2 L) levels every position holds its full prefix. b must be
    updated before a at each level (it needs the pre-update a).
    """
    L = a.shape[0]
    dtype = a.dtype
    s = 1
    while s < L:
        pad_a = Tensor(np.ones((s,) + a.shape[1:], dtype=dtype))
        pad_b = Tensor(np.zeros((s,) + b.shape[1:], dtype=dtype))
        a_prev = T.concat([pad_a, a[: L - s]], axis=0)
        b_prev = T.concat([pad_b, b[: L - s]], axis=0)
        b = T.add(T.mul(a, b_prev), b)
        a = T.mul(a, a_prev)
        s *= 2
    return b


def _discretize(u: Tensor, delta: Tensor, A: Tensor, B: Tensor):
    """Shared front half of both scan engines.

    Returns (dA, dBu) of shape [L, d_inner, d_state]:
        dA  = exp(delta ⊗ A)
        dBu = (delta * u) ⊗ B
    """
    L, d_inner = u.shape
    d_state = A.shape[1]
    dA = T.exp(T.mul(T.reshape(delta, L, d_inner, 1), T.reshape(A, 1, d_inner, d_state)))
    dBu = T.mul(T.reshape(T.mul(delta, u), L, d_inner, 1), T.reshape(B, L, 1, d_state))
    return dA, dBu


def _emit(h: Tensor, u: Tensor, C: Tensor, D: Tensor) -> Tensor:
    L, d_inner = u.shape
    d_state = C.shape[1]
    y = T.sum_(T.mul(h, T.reshape(C, L, 1, d_state)), axis=2)
    return T.add(y, T.mul(u, D))


def selective_scan_seq(u, delta, A, B, C, D) -> Tensor:
    """Step-by-step reference engine. Shapes: u, delta [L, d_inner];
    A [d_inner, d_state]; B, C [L, d_state]; D [d_inner]."""
    _check_finite("selective_scan_seq", u, delta, A, B, C, D)
    L, d_inner = u.shape
    d_state = A.shape[1]
    dA, dBu = _discretize(u, delta, A, B)
    h_t = Tensor(np.zeros((d_inner, d_state), dtype=u.dtype))
    rows = []
    for t in range(L):
        h_t = T.add(T.mul(dA[t], h_t), dBu[t])
        rows.append(T.reshape(h_t, 1, d_inner, d_state))
    h = T.concat(rows, axis=0)
    return _emit(h, u, C, D)


def selective_scan_par(u, delta, A, B, C, D) -> Tensor:
    """Parallel-scan engine; same contract and result as the sequential one
    up to floating-point association order."""
    _check_finite("selective_scan_par", u, delta, A, B, C, D)
    dA, dBu = _discretize(u, delta, A, B)
    h = _affine_scan(dA, dBu)
    return _emit(h, u, C, D)


_SCANS = {"seq": selective_scan_seq, "par": selective_scan_par}


class MambaCore(Module):
    """Pre-normed selective-SSM mixer (no outer residual).

    Pipeline: norm -> in-proj (2x split) -> causal depthwise conv + SiLU ->
    (delta, B, C) projections -> selective scan -> SiLU(z) gate -> out-proj.

    Special initializations: A_log starts at log(1..d_state) per channel
    (a spread of stable decay rates), D at ones, and the delta projection
    bias is set so softplus(bias) is log-uniform on [1e-3, 1e-1].
    """

    def __init__(self, d_model: int, rng, dtype, d_state: int = 16, expand: int = 2, d_conv: int = 4):
        d_inner = expand * d_model
        dt_rank = math.ceil(d_model / 16)
        self.d_inner = d_inner
        self.d_state = d_state
        self.dt_rank = dt_rank
        self.norm = LayerNorm(d_model, dtype)
        self.in_proj = Linear(d_model, 2 * d_inner, rng, dtype, bias=False)
        self.conv = DepthwiseConv1d(d_inner, d_conv, rng, dtype)
        self.x_proj = Linear(d_inner, dt_rank + 2 * d_state, rng, dtype, bias=False)
        self.dt_proj = Linear(dt_rank, d_inner, rng, dtype)
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=d_inner))
        self.dt_proj.b.data[:] = (dt + np.log(-np.expm1(-dt))).astype(dtype)
        a_init = np.tile(np.arange(1, d_state + 1, dtype=np.float64), (d_inner, 1))
        self.A_log = Tensor(np.log(a_init).astype(dtype), requires_grad=True)
        self.D = Tensor(np.ones(d_inner, dtype=dtype), requires_grad=True)
        self.out_proj = Linear(d_inner, d_model, rng, dtype, bias=False)

    def __call__(self, x: Tensor, scan: str = "par") -> Tensor:
        di, ds, dr = self.d_inner, self.d_state, self.dt_rank
        h = self.in_proj(self.norm(x))  # [L, 2*d_inner]
        u = T.silu(self.conv(h[:, :di], causal=True))
        z = h[:, di:]
        dbc = self.x_proj(u)  # [L, dt_rank + 2*d_state]
        delta = T.softplus(self.dt_proj(dbc[:, :dr]))
        B = dbc[:, dr:dr + ds]
        C = dbc[:, dr + ds:]
        A = T.neg(T.exp(self.A_log))
        y = _SCANS[scan](u, delta, A, B, C, self.D)
        y = T.mul(y, T.silu(z))
        return self.out_proj(y)


class MambaBlock(Module):
    """Causal residual block: x + core(x)."""

    def __init__(self, d_model: int, rng, dtype, d_state: int = 16, expand: int = 2, d_conv: int = 4):
        self.core = MambaCore(d_model, rng, dtype, d_state, expand, d_conv)

    def __call__(self, x: Tensor, scan: str = "par") -> Tensor:
        return T.add(x, self.core(x, scan))


class BiMambaBlock(Module):
    """External bidirectional block with one shared residual.

    The two directional cores carry their own pre-norms and parameters;
    the backward core runs on the time-reversed input and its output is
    reversed back: y = x + fwd(x) + reverse(bwd(reverse(x))).
    """

    def __init__(self, d_model: int, rng, dtype, d_state: int = 16, expand: int = 2, d_conv: int = 4):
        self.fwd = MambaCore(d_model, rng, dtype, d_state, expand, d_conv)
        self.bwd = MambaCore(d_model, rng, dtype, d_state, expand, d_conv)

    def __call__(self, x: Tensor, scan: str = "par") -> Tensor:
        back = self.bwd(x[::-1], scan)[::-1]
        return T.add(x, T.add(self.fwd(x, scan), back))
