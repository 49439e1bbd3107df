"""Matrix-memory recurrent tests: the stabilized exponential-gating cell is
checked against a direct unstabilized recurrence, fuzzed at extreme gate
values, and the bidirectional compositions are verified definitionally."""

import numpy as np
import pytest

from tfse import tensor as T
from tfse.xlstm import (
    CBiXLSTMBlock,
    MLSTMBlock,
    MLSTMCore,
    MLSTMState,
    PBiXLSTMBlock,
    mlstm_cell_step,
)
from tfse.tensor import Tensor, grad_check_params, no_grad

F64 = np.float64


def run_cell_chain(rng, H, dh, L, gate_lo, gate_hi, dtype=F64):
    state = MLSTMState.zeros(H, dh, dtype)
    outs = []
    steps = []
    for _ in range(L):
        q = rng.normal(size=(H, dh, 1)).astype(dtype)
        k = rng.normal(size=(H, dh, 1)).astype(dtype)
        v = rng.normal(size=(H, dh, 1)).astype(dtype)
        ig = rng.uniform(gate_lo, gate_hi, size=(H, 1, 1)).astype(dtype)
        fg = rng.uniform(gate_lo, gate_hi, size=(H, 1, 1)).astype(dtype)
        state, h = mlstm_cell_step(
            state, Tensor(q), Tensor(k), Tensor(v), Tensor(ig), Tensor(fg)
        )
        outs.append(h.data.copy())
        steps.append((q, k, v, ig, fg))
    return outs, steps


def naive_chain(steps):
    """Unstabilized reference: raw exponential gates, denominator floor 1."""
    H, dh, _ = steps[0][0].shape
    C = np.zeros((H, dh, dh))
    n = np.zeros((H, dh, 1))
    outs = []
    for q, k, v, ig, fg in steps:
        C = np.exp(fg) * C + np.exp(ig) * (v @ np.swapaxes(k, -1, -2))
        n = np.exp(fg) * n + np.exp(ig) * k
        denom = np.maximum(np.abs(np.swapaxes(n, -1, -2) @ q), 1.0)
        outs.append((C @ q) / denom)
    return outs


class TestCellStep:
    def test_matches_unstabilized_reference(self, rng):
        with no_grad():
            outs, steps = run_cell_chain(rng, H=2, dh=4, L=24, gate_lo=-5, gate_hi=5)
        refs = naive_chain(steps)
        for got, want in zip(outs, refs):
            np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_single_step_closed_form(self):
        # from zero state: C1 = e^(i-m) v k^T, n1 = e^(i-m) k, m1 = max(f, i)
        q = np.array([[[1.0], [0.0]]])
        k = np.array([[[0.5], [2.0]]])
        v = np.array([[[3.0], [-1.0]]])
        ig = np.array([[[0.7]]])
        fg = np.array([[[-0.2]]])
        with no_grad():
            _, h = mlstm_cell_step(
                MLSTMState.zeros(1, 2, F64),
                Tensor(q), Tensor(k), Tensor(v), Tensor(ig), Tensor(fg),
            )
        m1 = max(fg[0, 0, 0], ig[0, 0, 0])
        ip = np.exp(ig[0, 0, 0] - m1)
        num = ip * (v[0] @ k[0].T) @ q[0]
        den = max(abs(ip * (k[0].T @ q[0]).item()), np.exp(-m1))
        np.testing.assert_allclose(h.data[0], num / den, rtol=1e-12)

    def test_extreme_gates_stay_finite_float32(self, rng):
        with no_grad():
            outs, _ = run_cell_chain(
                rng, H=2, dh=4, L=50, gate_lo=-100, gate_hi=100, dtype=np.float32
            )
        for h in outs:
            assert np.all(np.isfinite(h))

    def test_extreme_gates_stay_finite_float64(self, rng):
        with no_grad():
            outs, _ = run_cell_chain(rng, H=2, dh=4, L=200, gate_lo=-1000, gate_hi=1000)
        for h in outs:
            assert np.all(np.isfinite(h))

    def test_strong_forget_gate_preserves_memory_direction(self):
        # write once, then run pure-forget steps; the stored outer product
        # keeps pointing the readout at the written value
        k0 = np.array([[[1.0], [0.0]]])
        v0 = np.array([[[0.0], [4.0]]])
        state = MLSTMState.zeros(1, 2, F64)
        with no_grad():
            state, _ = mlstm_cell_step(
                state, Tensor(k0), Tensor(k0), Tensor(v0),
                Tensor(np.full((1, 1, 1), 5.0)), Tensor(np.full((1, 1, 1), -5.0)),
            )
            for _ in range(5):
                state, h = mlstm_cell_step(
                    state, Tensor(k0), Tensor(k0), Tensor(np.zeros((1, 2, 1))),
                    Tensor(np.full((1, 1, 1), -20.0)), Tensor(np.full((1, 1, 1), 10.0)),
                )
        direction = h.data[0, :, 0] / np.linalg.norm(h.data[0, :, 0])
        np.testing.assert_allclose(direction, [0.0, 1.0], atol=1e-9)


class TestMLSTMCore:
    @pytest.fixture
    def core(self):
        return MLSTMCore(16, np.random.default_rng(3), F64, heads=4, proj_factor=2.0)

    def test_output_shape(self, core, rng):
        x = Tensor(rng.normal(size=(12, 16)).astype(F64))
        assert core(x).shape == (12, 16)

    def test_causal_prefix_is_bit_exact(self, core, rng):
        x = rng.normal(size=(12, 16)).astype(F64)
        x2 = x.copy()
        x2[8:] += rng.normal(size=(4, 16))
        with no_grad():
            y1 = core(Tensor(x)).data
            y2 = core(Tensor(x2)).data
        np.testing.assert_array_equal(y1[:8], y2[:8])

    def test_rejects_indivisible_head_split(self):
        with pytest.raises(ValueError):
            MLSTMCore(10, np.random.default_rng(0), F64, heads=4, proj_factor=1.1)

    def test_gradients(self, rng):
        core = MLSTMCore(8, np.random.default_rng(4), F64, heads=2, proj_factor=2.0)
        x = Tensor(rng.normal(size=(5, 8)).astype(F64))

        def loss_fn():
            y = core(x)
            return T.sum_(T.mul(y, y))

        errs = grad_check_params(loss_fn, core.named_parameters(), h=1e-5)
        assert max(errs.values()) < 1e-3, errs


class TestBidirectionalBlocks:
    def test_cascaded_composition_definition(self, rng):
        blk = CBiXLSTMBlock(16, np.random.default_rng(5), F64)
        x = Tensor(rng.normal(size=(10, 16)).astype(F64))
        with no_grad():
            got = blk(x).data
            mid = blk.fwd(x)
            want = blk.bwd(Tensor(mid.data[::-1].copy())).data[::-1]
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_parallel_composition_definition(self, rng):
        blk = PBiXLSTMBlock(16, np.random.default_rng(6), F64)
        x = Tensor(rng.normal(size=(10, 16)).astype(F64))
        with no_grad():
            got = blk(x).data
            fwd = blk.fwd(x).data
            bwd = blk.bwd(Tensor(x.data[::-1].copy())).data[::-1]
        np.testing.assert_allclose(got, x.data + fwd + bwd, atol=1e-12)

    @pytest.mark.parametrize("block_cls", [CBiXLSTMBlock, PBiXLSTMBlock])
    def test_bidirectional_blocks_read_the_future(self, rng, block_cls):
        blk = block_cls(16, np.random.default_rng(7), F64)
        x = rng.normal(size=(10, 16)).astype(F64)
        x2 = x.copy()
        x2[9] += rng.normal(size=16)
        with no_grad():
            d = np.abs(blk(Tensor(x)).data[:4] - blk(Tensor(x2)).data[:4]).max()
        assert d > 0.0

    def test_causal_block_does_not(self, rng):
        blk = MLSTMBlock(16, np.random.default_rng(8), F64)
        x = rng.normal(size=(10, 16)).astype(F64)
        x2 = x.copy()
        x2[9] += rng.normal(size=16)
        with no_grad():
            y1 = blk(Tensor(x)).data
            y2 = blk(Tensor(x2)).data
        np.testing.assert_array_equal(y1[:9], y2[:9])
