"""Full-model tests: frozen parameter budgets for every preset, mask range,
causality semantics at the model level, checkpoint round trips, and the
waveform pipeline."""

import numpy as np
import pytest

from tfse import dsp
from tfse.config import RunConfig, read_config, resolve_config_arg
from tfse.errors import ConfigError, DimensionError
from tfse.model import (
    build_model,
    count_params,
    enhance,
    load_model,
    param_count_str,
    save_model,
)
from tfse.tensor import Tensor, no_grad

# regression targets measured once at the shipped widths (d_model 256,
# d_ff 1024, d_state 16, proj_factor 2); any architecture drift shows here
PARAM_BUDGETS = {
    "transformer-4": 3_291_651,
    "conformer-4": 6_224_387,
    "mamba-5": 2_323_971,
    "mamba-7": 3_200_515,
    "mamba-13": 5_830_147,
    "xlstm-5": 2_170_411,
    "xlstm-7": 2_985_531,
    "xlstm-14": 5_838_451,
    "bimamba-3": 2_762_243,
    "bimamba-4": 3_638_787,
    "bimamba-7": 6_268_419,
    "c-bixlstm-3": 2_577_971,
    "c-bixlstm-4": 3_393_091,
    "c-bixlstm-7": 5_838_451,
    "p-bixlstm-3": 2_577_971,
    "p-bixlstm-4": 3_393_091,
    "p-bixlstm-7": 5_838_451,
}

TINY = dict(d_model=32, d_ff=64, heads=4, d_state=4, conv_kernel=7)


def tiny_model(backbone, causal, blocks=2, pe="none", seed=0, **overrides):
    cfg = RunConfig(
        backbone=backbone, blocks=blocks, causal=causal, pe=pe, **{**TINY, **overrides}
    ).model_config()
    return build_model(cfg, seed=seed)


@pytest.fixture
def frames(rng):
    return rng.uniform(0.0, 1.5, size=(24, 257)).astype(np.float32)


class TestParameterBudgets:
    @pytest.mark.parametrize("name,want", sorted(PARAM_BUDGETS.items()))
    def test_preset_matches_frozen_count(self, name, want):
        rc = read_config(resolve_config_arg(name))
        model = build_model(rc.model_config(), seed=0)
        assert count_params(model) == want

    def test_count_is_seed_independent(self):
        rc = read_config(resolve_config_arg("mamba-5"))
        a = build_model(rc.model_config(), seed=0)
        b = build_model(rc.model_config(), seed=999)
        assert count_params(a) == count_params(b)

    def test_param_count_string_format(self):
        assert param_count_str(3_291_651) == "3.29M (3,291,651)"


class TestMaskOutput:
    @pytest.mark.parametrize(
        "backbone,causal",
        [
            ("transformer", True),
            ("conformer", True),
            ("mamba", True),
            ("xlstm", True),
            ("bimamba", False),
            ("c-bixlstm", False),
            ("p-bixlstm", False),
        ],
    )
    def test_mask_strictly_inside_unit_interval(self, backbone, causal, frames):
        model = tiny_model(backbone, causal, blocks=1)
        with no_grad():
            y = model(Tensor(frames)).data
        assert y.shape == frames.shape
        assert np.all(y > 0.0) and np.all(y < 1.0)

    def test_wrong_input_shape_rejected(self, rng):
        model = tiny_model("mamba", True, blocks=1)
        with pytest.raises(DimensionError):
            model(Tensor(rng.uniform(0, 1, (10, 100)).astype(np.float32)))

    def test_sinusoidal_pe_changes_output(self, frames):
        plain = tiny_model("transformer", False, pe="none")
        sinpe = tiny_model("transformer", False, pe="sin")
        with no_grad():
            a = plain(Tensor(frames)).data
            b = sinpe(Tensor(frames)).data
        assert np.max(np.abs(a - b)) > 1e-6


class TestCausalitySemantics:
    @pytest.mark.parametrize("backbone", ["transformer", "conformer", "mamba", "xlstm"])
    def test_causal_models_ignore_future_frames(self, backbone, frames, rng):
        model = tiny_model(backbone, causal=True)
        poked = frames.copy()
        poked[15, 13] += 1.0  # one frame, one bin
        with no_grad():
            y1 = model(Tensor(frames)).data
            y2 = model(Tensor(poked)).data
        np.testing.assert_array_equal(y1[:15], y2[:15])
        assert np.max(np.abs(y1[15:] - y2[15:])) > 0.0

    @pytest.mark.parametrize(
        "backbone,causal",
        [
            ("transformer", False),
            ("conformer", False),
            ("bimamba", False),
            ("c-bixlstm", False),
            ("p-bixlstm", False),
        ],
    )
    def test_noncausal_models_react_to_future_frames(self, backbone, causal, frames, rng):
        model = tiny_model(backbone, causal)
        poked = frames.copy()
        poked[20] = rng.uniform(0.0, 1.5, size=257)  # rewrite one late frame
        with no_grad():
            y1 = model(Tensor(frames)).data
            y2 = model(Tensor(poked)).data
        assert np.max(np.abs(y1[:15] - y2[:15])) > 0.0


class TestDeterminism:
    def test_same_seed_same_bits(self, frames):
        a = tiny_model("conformer", True, seed=11)
        b = tiny_model("conformer", True, seed=11)
        for (n, pa), (_, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert np.array_equal(pa.data, pb.data), n
        with no_grad():
            np.testing.assert_array_equal(a(Tensor(frames)).data, b(Tensor(frames)).data)

    def test_different_seed_different_bits(self):
        a = tiny_model("transformer", True, seed=0)
        b = tiny_model("transformer", True, seed=1)
        assert not np.array_equal(
            dict(a.named_parameters())["input_proj.kernel"].data,
            dict(b.named_parameters())["input_proj.kernel"].data,
        )


class TestCheckpointRoundTrip:
    def make_run_config(self):
        return RunConfig(backbone="mamba", blocks=1, causal=True, **TINY)

    def test_save_load_bit_exact(self, tmp_path, frames):
        rc = self.make_run_config()
        model = build_model(rc.model_config(), seed=5)
        save_model(str(tmp_path), model, rc)
        back, rc2 = load_model(str(tmp_path))
        assert rc2 == rc
        for (n, pa), (_, pb) in zip(model.named_parameters(), back.named_parameters()):
            assert np.array_equal(pa.data, pb.data), n
        with no_grad():
            np.testing.assert_array_equal(
                model(Tensor(frames)).data, back(Tensor(frames)).data
            )

    def test_missing_tensor_rejected(self, tmp_path):
        from tfse.archive import load_tensors, save_tensors
        from tfse.model import MODEL_ARCHIVE

        rc = self.make_run_config()
        save_model(str(tmp_path), build_model(rc.model_config(), seed=5), rc)
        path = str(tmp_path / MODEL_ARCHIVE)
        tensors = load_tensors(path)
        tensors.pop(sorted(tensors)[0])
        save_tensors(path, tensors)
        with pytest.raises(ConfigError, match="mismatch"):
            load_model(str(tmp_path))

    def test_wrong_shape_rejected(self, tmp_path):
        from tfse.archive import load_tensors, save_tensors
        from tfse.model import MODEL_ARCHIVE

        rc = self.make_run_config()
        save_model(str(tmp_path), build_model(rc.model_config(), seed=5), rc)
        path = str(tmp_path / MODEL_ARCHIVE)
        tensors = load_tensors(path)
        first = sorted(tensors)[0]
        tensors[first] = np.zeros((2, 2), dtype=np.float32)
        save_tensors(path, tensors)
        with pytest.raises(DimensionError, match="shape"):
            load_model(str(tmp_path))


class TestWaveformPipeline:
    def test_enhance_preserves_length_and_rate(self, rng):
        model = tiny_model("mamba", True, blocks=1)
        w = dsp.Waveform(rng.uniform(-0.5, 0.5, 5000))
        out = enhance(model, w)
        assert len(out) == 5000
        assert out.sample_rate == dsp.SAMPLE_RATE

    def test_all_pass_mask_returns_input(self, rng):
        # force the output projection to emit a saturated sigmoid: the mask
        # becomes 1 everywhere and the pipeline reduces to analysis/synthesis
        model = tiny_model("mamba", True, blocks=1)
        with no_grad():
            params = dict(model.named_parameters())
            params["output_proj.kernel"].data[:] = 0.0
            params["output_proj.b"].data[:] = 40.0
        w = dsp.Waveform(rng.uniform(-0.5, 0.5, 6000))
        out = enhance(model, w)
        lo, hi = dsp.HOP, 6000 - dsp.HOP
        np.testing.assert_allclose(out.samples[lo:hi], w.samples[lo:hi], atol=1e-7)
