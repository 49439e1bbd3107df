"""Flat key=value run configuration.

One file drives model construction, training, and benchmarking. Lines are
`key = value`; blank lines and `#` comments are ignored; unknown or
duplicate keys are rejected by name. Writing a config emits every key, so
an echoed file reproduces the run exactly.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields
from importlib import resources

from .errors import ConfigError

BACKBONES = ("transformer", "conformer", "mamba", "bimamba", "xlstm", "c-bixlstm", "p-bixlstm")
ATTENTION_BACKBONES = ("transformer", "conformer")
CAUSAL_ONLY = ("mamba", "xlstm")
NONCAUSAL_ONLY = ("bimamba", "c-bixlstm", "p-bixlstm")
PE_KINDS = ("none", "sin", "rope")
LOSS_KINDS = ("mask-mse", "masked-magnitude-mse")

N_BINS = 257  # one-sided bins of the 512-point analysis


@dataclass(frozen=True)
class ModelConfig:
    backbone: str = "transformer"
    blocks: int = 4
    causal: bool = True
    pe: str = "none"
    d_model: int = 256
    d_ff: int = 1024
    heads: int = 0  # 0 = backbone default (8 attention, 4 xlstm)
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    proj_factor: float = 2.0
    conv_kernel: int = 31

    @property
    def name(self) -> str:
        return f"{self.backbone}-{self.blocks}"

    def resolved_heads(self) -> int:
        if self.heads:
            return self.heads
        return 8 if self.backbone in ATTENTION_BACKBONES else 4

    def validate(self) -> "ModelConfig":
        if self.backbone not in BACKBONES:
            raise ConfigError(f"backbone: unknown value {self.backbone!r}; choose from {', '.join(BACKBONES)}")
        if self.blocks < 1:
            raise ConfigError(f"blocks: must be >= 1, got {self.blocks}")
        if self.pe not in PE_KINDS:
            raise ConfigError(f"pe: unknown value {self.pe!r}; choose from {', '.join(PE_KINDS)}")
        if self.pe != "none" and self.backbone not in ATTENTION_BACKBONES:
            raise ConfigError(f"pe: positional encoding {self.pe!r} requires an attention backbone, not {self.backbone!r}")
        if self.backbone in CAUSAL_ONLY and not self.causal:
            raise ConfigError(f"causal: backbone {self.backbone!r} is causal-only; set causal = true")
        if self.backbone in NONCAUSAL_ONLY and self.causal:
            raise ConfigError(f"causal: backbone {self.backbone!r} is bidirectional; set causal = false")
        for key in ("d_model", "d_ff", "d_state", "expand", "d_conv", "conv_kernel"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key}: must be >= 1, got {getattr(self, key)}")
        heads = self.resolved_heads()
        if heads < 1:
            raise ConfigError(f"heads: must be >= 1, got {heads}")
        if self.backbone in ATTENTION_BACKBONES:
            if self.d_model % heads:
                raise ConfigError(f"heads: d_model {self.d_model} not divisible by {heads}")
            if self.pe == "rope" and (self.d_model // heads) % 2:
                raise ConfigError(f"pe: rope needs an even head dim, got {self.d_model // heads}")
        if self.pe == "sin" and self.d_model % 2:
            raise ConfigError(f"pe: sin needs an even d_model, got {self.d_model}")
        if self.backbone in ("xlstm", "c-bixlstm", "p-bixlstm"):
            d_inner = int(round(self.proj_factor * self.d_model))
            if d_inner % heads:
                raise ConfigError(f"heads: inner dim {d_inner} not divisible by {heads}")
            if d_inner % 4:
                raise ConfigError(f"proj_factor: inner dim {d_inner} not divisible by the q/k/v block size 4")
        return self


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    batch_size: int = 10
    epochs: int = 150
    max_steps: int = 0  # 0 = no cap
    snr_lo: int = -10
    snr_hi: int = 20
    step_w: int = 40000
    loss: str = "mask-mse"
    corpus: str = ""
    checkpoint_every: int = 1

    def validate(self) -> "TrainConfig":
        if self.batch_size < 1:
            raise ConfigError(f"batch_size: must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs: must be >= 1, got {self.epochs}")
        if self.snr_hi < self.snr_lo:
            raise ConfigError(f"snr_hi: {self.snr_hi} is below snr_lo {self.snr_lo}")
        if self.step_w < 1:
            raise ConfigError(f"step_w: must be >= 1, got {self.step_w}")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss: unknown value {self.loss!r}; choose from {', '.join(LOSS_KINDS)}")
        if self.checkpoint_every < 1:
            raise ConfigError(f"checkpoint_every: must be >= 1, got {self.checkpoint_every}")
        return self


@dataclass(frozen=True)
class RunConfig:
    """Union of all config keys; sections are views onto it."""

    backbone: str = "transformer"
    blocks: int = 4
    causal: bool = True
    pe: str = "none"
    d_model: int = 256
    d_ff: int = 1024
    heads: int = 0
    d_state: int = 16
    expand: int = 2
    d_conv: int = 4
    proj_factor: float = 2.0
    conv_kernel: int = 31
    seed: int = 0
    batch_size: int = 10
    epochs: int = 150
    max_steps: int = 0
    snr_lo: int = -10
    snr_hi: int = 20
    step_w: int = 40000
    loss: str = "mask-mse"
    corpus: str = ""
    checkpoint_every: int = 1
    bench_runs: int = 20
    bench_warmup: int = 3
    bench_batch: int = 4
    bench_lengths: str = "10,20,40"

    def model_config(self) -> ModelConfig:
        names = {f.name for f in fields(ModelConfig)}
        return ModelConfig(**{k: getattr(self, k) for k in names}).validate()

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: getattr(self, k) for k in names}).validate()

    def lengths(self) -> list[float]:
        try:
            vals = [float(p) for p in self.bench_lengths.split(",") if p.strip()]
        except ValueError:
            raise ConfigError(f"bench_lengths: cannot parse {self.bench_lengths!r}") from None
        if not vals or any(v <= 0 for v in vals):
            raise ConfigError(f"bench_lengths: need positive seconds, got {self.bench_lengths!r}")
        return vals


def _parse_value(key: str, raw: str, target_type):
    raw = raw.strip()
    try:
        if target_type is bool:
            low = raw.lower()
            if low not in ("true", "false"):
                raise ValueError
            return low == "true"
        if target_type is int:
            return int(raw)
        if target_type is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {target_type.__name__}") from None


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    types = {f.name: f.type for f in fields(RunConfig)}
    # dataclass field types arrive as strings under future annotations
    defaults = RunConfig()
    seen: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
        key, raw = body.split("=", 1)
        key = key.strip()
        if key not in types:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen[key] = _parse_value(key, raw, type(getattr(defaults, key)))
    return RunConfig(**seen)


def read_config(path: str) -> RunConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return parse_config_text(text, source=path)


def write_config(path: str, rc: RunConfig, header: str | None = None) -> None:
    lines = []
    if header:
        lines.append(f"# {header}")
    for f in fields(RunConfig):
        v = getattr(rc, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        lines.append(f"{f.name} = {v}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def shipped_config_names() -> list[str]:
    root = resources.files("tfse") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def resolve_config_arg(arg: str) -> str:
    """Accept a filesystem path or the name of a shipped config."""
    if os.path.exists(arg):
        return arg
    name = arg[:-4] if arg.endswith(".cfg") else arg
    candidate = resources.files("tfse") / "configs" / f"{name}.cfg"
    if candidate.is_file():
        return str(candidate)
    raise ConfigError(
        f"config {arg!r} is neither a file nor a shipped config "
        f"(shipped: {', '.join(shipped_config_names())})"
    )
