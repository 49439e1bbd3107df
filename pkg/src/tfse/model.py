"""Mask-estimation models: shared projection layers around a backbone stack.

Every model maps a magnitude spectrogram [L, 257] to a mask in (0, 1) of the
same shape: frame-wise layer norm -> ReLU -> 1-D conv into d_model, an
optional additive sinusoidal table, N backbone blocks, then a 1-D conv back
to 257 bins under a sigmoid. Rotary embeddings, when configured, act inside
every attention head instead of on the embedding.
"""

from __future__ import annotations

import os

import numpy as np

from . import dsp
from . import pe as PE
from . import tensor as T
from .archive import load_tensors, save_tensors
from .attention import ConformerBlock, TransformerBlock
from .config import ATTENTION_BACKBONES, N_BINS, ModelConfig, RunConfig, read_config, write_config
from .errors import ConfigError, DimensionError
from .module import Conv1d, LayerNorm, Module
from .ssm import BiMambaBlock, MambaBlock
from .tensor import Tensor
from .xlstm import CBiXLSTMBlock, MLSTMBlock, PBiXLSTMBlock


def _make_block(cfg: ModelConfig, rng, dtype):
    heads = cfg.resolved_heads()
    if cfg.backbone == "transformer":
        return TransformerBlock(cfg.d_model, cfg.d_ff, heads, rng, dtype)
    if cfg.backbone == "conformer":
        return ConformerBlock(cfg.d_model, cfg.d_ff, heads, rng, dtype, cfg.conv_kernel)
    if cfg.backbone == "mamba":
        return MambaBlock(cfg.d_model, rng, dtype, cfg.d_state, cfg.expand, cfg.d_conv)
    if cfg.backbone == "bimamba":
        return BiMambaBlock(cfg.d_model, rng, dtype, cfg.d_state, cfg.expand, cfg.d_conv)
    if cfg.backbone == "xlstm":
        return MLSTMBlock(cfg.d_model, rng, dtype, heads, cfg.proj_factor)
    if cfg.backbone == "c-bixlstm":
        return CBiXLSTMBlock(cfg.d_model, rng, dtype, heads, cfg.proj_factor)
    if cfg.backbone == "p-bixlstm":
        return PBiXLSTMBlock(cfg.d_model, rng, dtype, heads, cfg.proj_factor)
    raise ConfigError(f"backbone: unknown value {cfg.backbone!r}")


class EnhancementModel(Module):
    """Backbone stack between the shared input/output projections."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.input_norm = LayerNorm(N_BINS, dtype)
        self.input_proj = Conv1d(N_BINS, cfg.d_model, 1, rng, dtype)
        self.blocks = [_make_block(cfg, rng, dtype) for _ in range(cfg.blocks)]
        self.output_proj = Conv1d(cfg.d_model, N_BINS, 1, rng, dtype)

    @property
    def dtype(self):
        return self.input_norm.gain.dtype

    def __call__(self, mag) -> Tensor:
        """Magnitude frames [L, 257] -> mask logits squashed to (0, 1)."""
        x = mag if isinstance(mag, Tensor) else Tensor(np.asarray(mag, dtype=self.dtype))
        if x.ndim != 2 or x.shape[1] != N_BINS:
            raise DimensionError(f"model input must be [frames, {N_BINS}], got {x.shape}")
        h = self.input_proj(T.relu(self.input_norm(x)))
        if self.cfg.pe == "sin":
            h = PE.add_sinusoidal(h)
        attention = self.cfg.backbone in ATTENTION_BACKBONES
        rope = self.cfg.pe == "rope"
        for blk in self.blocks:
            h = blk(h, self.cfg.causal, rope) if attention else blk(h)
        return T.sigmoid(self.output_proj(h))


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> EnhancementModel:
    """Deterministic construction: one seed, one parameter layout, always
    the same bits."""
    rng = np.random.default_rng(seed)
    return EnhancementModel(cfg.validate(), rng, dtype)


def count_params(model: EnhancementModel) -> int:
    return model.num_params()


def param_count_str(n: int) -> str:
    return f"{n / 1e6:.2f}M ({n:,})"


def enhance(model: EnhancementModel, noisy: dsp.Waveform) -> dsp.Waveform:
    """Run the full pipeline: analyze, mask, resynthesize at input length."""
    spec = dsp.stft(noisy)
    with T.no_grad():
        mask = model(spec.magnitude.astype(model.dtype))
    masked = dsp.apply_mask(spec, dsp.Mask(mask.data.astype(np.float64)))
    return dsp.istft(masked, len(noisy))


MODEL_ARCHIVE = "model.tensors"
CONFIG_FILE = "config.cfg"


def save_model(ckpt_dir: str, model: EnhancementModel, run_cfg: RunConfig) -> None:
    """Write the weights archive plus the full config echo into a directory."""
    os.makedirs(ckpt_dir, exist_ok=True)
    save_tensors(os.path.join(ckpt_dir, MODEL_ARCHIVE), dict(model.named_parameters()))
    write_config(os.path.join(ckpt_dir, CONFIG_FILE), run_cfg, header=f"model {run_cfg.model_config().name}")


def load_model(ckpt_dir: str, dtype=np.float32) -> tuple[EnhancementModel, RunConfig]:
    """Rebuild a model from a checkpoint directory and load its weights."""
    run_cfg = read_config(os.path.join(ckpt_dir, CONFIG_FILE))
    model = build_model(run_cfg.model_config(), seed=run_cfg.seed, dtype=dtype)
    stored = load_tensors(os.path.join(ckpt_dir, MODEL_ARCHIVE))
    names = dict(model.named_parameters())
    if set(stored) != set(names):
        missing = set(names) - set(stored)
        extra = set(stored) - set(names)
        raise ConfigError(f"checkpoint/model parameter mismatch (missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
    for name, param in names.items():
        arr = stored[name]
        if arr.shape != param.data.shape:
            raise DimensionError(f"{name}: checkpoint shape {arr.shape} != model shape {param.data.shape}")
        param.data = arr.astype(dtype)
    return model, run_cfg
