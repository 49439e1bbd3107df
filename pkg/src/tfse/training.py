"""Deterministic training: corpus sampling, warm-up scheduler, Adam.

One integer seed fixes everything: parameter initialization, the shuffle
order, noise pairing, SNR draws, and noise offsets all come from generators
seeded with it, so two runs with the same config produce bit-identical loss
logs, and two different backbones trained with the same seed consume
identical batch sequences. Checkpoints capture model weights, optimizer
moments, and the data generator state, so resuming at an epoch boundary
continues the exact run.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from . import tensor as T
from .archive import load_tensors, save_tensors
from .config import RunConfig
from .errors import ConfigError, DataError, TrainingAborted
from .model import EnhancementModel, build_model, load_model, save_model
from .tensor import Tensor, backward

OPTIM_ARCHIVE = "optim.tensors"
STATE_FILE = "state.json"
LOSS_CSV = "loss.csv"


# ---- corpus -------------------------------------------------------------


@dataclass
class Corpus:
    speech: list[dsp.Waveform]
    noise: list[dsp.Waveform]


def load_corpus(manifest_path: str) -> Corpus:
    """Read a manifest of `s <relpath>` / `n <relpath>` lines (paths are
    relative to the manifest's directory)."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    speech: list[dsp.Waveform] = []
    noise: list[dsp.Waveform] = []
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as e:
        raise DataError(f"cannot read corpus manifest {manifest_path}: {e}") from None
    for lineno, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split(None, 1)
        if len(parts) != 2 or parts[0] not in ("s", "n"):
            raise DataError(f"{manifest_path}:{lineno}: expected 's <path>' or 'n <path>'")
        wave = dsp.read_wav(os.path.join(base, parts[1]))
        (speech if parts[0] == "s" else noise).append(wave)
    if not speech or not noise:
        raise DataError(f"{manifest_path}: corpus needs at least one speech and one noise recording")
    return Corpus(speech, noise)


def make_example(speech: dsp.Waveform, noise: dsp.Waveform, snr_db: float, rng: np.random.Generator):
    """Mix, analyze, and build the clamped phase-sensitive target.

    Returns (noisy magnitude, target mask), both float32 [frames, 257].
    """
    mixture, _ = dsp.mix_at_snr(speech, noise, snr_db, rng)
    clean_spec = dsp.stft(speech)
    noisy_spec = dsp.stft(mixture)
    target = dsp.phase_sensitive_mask(clean_spec, noisy_spec, clamp=True)
    return (
        noisy_spec.magnitude.astype(np.float32),
        target.values.astype(np.float32),
    )


def epoch_batches(corpus: Corpus, batch_size: int, snr_lo: int, snr_hi: int, rng: np.random.Generator):
    """One shuffled pass over the speech list, in batches (last may be short).

    Each clip draws a noise recording, an integer SNR in [snr_lo, snr_hi],
    and (inside the mixer) a noise offset, all from `rng` in a fixed order.
    """
    perm = rng.permutation(len(corpus.speech))
    for lo in range(0, len(perm), batch_size):
        batch = []
        for idx in perm[lo:lo + batch_size]:
            noise = corpus.noise[int(rng.integers(0, len(corpus.noise)))]
            snr = int(rng.integers(snr_lo, snr_hi + 1))
            batch.append(make_example(corpus.speech[int(idx)], noise, snr, rng))
        yield batch


# ---- losses --------------------------------------------------------------


def mask_mse(pred: Tensor, target: Tensor) -> Tensor:
    d = T.sub(pred, target)
    return T.mean(T.mul(d, d))


def masked_magnitude_mse(pred: Tensor, target: Tensor, mag: Tensor) -> Tensor:
    d = T.mul(T.sub(pred, target), mag)
    return T.mean(T.mul(d, d))


def clip_loss(pred: Tensor, target_nd: np.ndarray, mag_nd: np.ndarray, kind: str) -> Tensor:
    if kind == "mask-mse":
        return mask_mse(pred, Tensor(target_nd))
    if kind == "masked-magnitude-mse":
        return masked_magnitude_mse(pred, Tensor(target_nd), Tensor(mag_nd))
    raise ConfigError(f"loss: unknown value {kind!r}")


# ---- optimizer -----------------------------------------------------------


def lr_at(step_n: int, step_w: int, d_model: int) -> float:
    """Warm-up schedule: min(n^-0.5, n * w^-1.5) / sqrt(d_model).

    Rises linearly to the peak w^-0.5 * d_model^-0.5 at step w, then decays
    as n^-0.5. step_n counts from 1.
    """
    if step_n < 1:
        raise ConfigError(f"step_n counts from 1, got {step_n}")
    n, w = float(step_n), float(step_w)
    return min(n**-0.5, n * w**-1.5) * float(d_model) ** -0.5


def clip_gradients(params, lo: float = -1.0, hi: float = 1.0) -> None:
    """Clamp every gradient value into [lo, hi], in place."""
    for p in params:
        if p.grad is not None:
            np.clip(p.grad, lo, hi, out=p.grad)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    named_params,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.98,
    eps: float = 1e-9,
) -> None:
    """One bias-corrected Adam update over (name, param) pairs."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in named_params:
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
        v = state.v.get(name)
        if v is None:
            v = state.v[name] = np.zeros_like(p.data)
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---- checkpoints ----------------------------------------------------------


def save_checkpoint(
    ckpt_dir: str,
    model: EnhancementModel,
    run_cfg: RunConfig,
    opt: AdamState,
    rng: np.random.Generator,
    epochs_done: int,
    global_step: int,
) -> None:
    os.makedirs(ckpt_dir, exist_ok=True)
    save_model(ckpt_dir, model, run_cfg)
    moments = {}
    for name, arr in opt.m.items():
        moments[f"m.{name}"] = arr
    for name, arr in opt.v.items():
        moments[f"v.{name}"] = arr
    save_tensors(os.path.join(ckpt_dir, OPTIM_ARCHIVE), moments)
    state = {
        "epochs_done": epochs_done,
        "global_step": global_step,
        "adam_t": opt.t,
        "rng": rng.bit_generator.state,
    }
    with open(os.path.join(ckpt_dir, STATE_FILE), "w", encoding="utf-8") as fh:
        json.dump(state, fh, default=int, indent=1)


def load_checkpoint(ckpt_dir: str, dtype=np.float32):
    """Returns (model, run_cfg, AdamState, rng, epochs_done, global_step)."""
    model, run_cfg = load_model(ckpt_dir, dtype)
    opt = AdamState()
    opt_path = os.path.join(ckpt_dir, OPTIM_ARCHIVE)
    if os.path.exists(opt_path):
        for key, arr in load_tensors(opt_path).items():
            kind, name = key.split(".", 1)
            (opt.m if kind == "m" else opt.v)[name] = arr.astype(dtype)
    with open(os.path.join(ckpt_dir, STATE_FILE), "r", encoding="utf-8") as fh:
        state = json.load(fh)
    opt.t = int(state["adam_t"])
    bitgen = np.random.PCG64()
    bitgen.state = state["rng"]
    rng = np.random.Generator(bitgen)
    return model, run_cfg, opt, rng, int(state["epochs_done"]), int(state["global_step"])


def latest_checkpoint(out_dir: str) -> str:
    dirs = sorted(
        d for d in os.listdir(out_dir)
        if d.startswith("ckpt-") and os.path.isdir(os.path.join(out_dir, d))
    )
    if not dirs:
        raise DataError(f"no checkpoints under {out_dir}")
    return os.path.join(out_dir, dirs[-1])


# ---- the loop --------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint_dir: str
    csv_path: str
    epochs_done: int
    global_step: int
    final_loss: float


def train(
    run_cfg: RunConfig,
    out_dir: str,
    resume_from: str | None = None,
    dtype=np.float32,
    progress=None,
) -> TrainResult:
    """Run (or continue) a training job into out_dir.

    Writes loss.csv (step,epoch,lr,loss with full-precision floats) and a
    checkpoint directory per checkpoint_every epochs. Raises TrainingAborted
    with diagnostics the moment the loss stops being finite.
    """
    model_cfg = run_cfg.model_config()
    train_cfg = run_cfg.train_config()
    if not train_cfg.corpus:
        raise ConfigError("corpus: required for training")
    corpus = load_corpus(train_cfg.corpus)
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, LOSS_CSV)

    if resume_from is not None:
        model, saved_cfg, opt, rng, epochs_done, global_step = load_checkpoint(resume_from, dtype)
        if saved_cfg.model_config() != model_cfg:
            raise ConfigError("resume: checkpoint was trained with a different model config")
        csv_mode = "a" if os.path.exists(csv_path) else "w"
    else:
        model = build_model(model_cfg, seed=train_cfg.seed, dtype=dtype)
        opt = AdamState()
        rng = np.random.default_rng(train_cfg.seed)
        epochs_done, global_step = 0, 0
        csv_mode = "w"

    last_loss = float("nan")
    last_grad_max = 0.0
    named = list(model.named_parameters())
    stop = False
    ckpt_dir = resume_from or ""

    with open(csv_path, csv_mode, encoding="utf-8") as csv:
        if csv_mode == "w":
            csv.write("step,epoch,lr,loss\n")
        for epoch in range(epochs_done, train_cfg.epochs):
            for batch in epoch_batches(
                corpus, train_cfg.batch_size, train_cfg.snr_lo, train_cfg.snr_hi, rng
            ):
                global_step += 1
                lr = lr_at(global_step, train_cfg.step_w, model_cfg.d_model)
                model.zero_grad()
                total = None
                for mag, target in batch:
                    pred = model(Tensor(mag))
                    l = clip_loss(pred, target, mag, train_cfg.loss)
                    total = l if total is None else T.add(total, l)
                loss = T.mul(total, 1.0 / len(batch))
                last_loss = loss.item()
                if not np.isfinite(last_loss):
                    raise TrainingAborted(
                        f"non-finite loss at step {global_step} (epoch {epoch}): "
                        f"loss={last_loss!r}, lr={lr:.6e}, "
                        f"max|param|={max(float(np.abs(p.data).max()) for _, p in named):.6e}, "
                        f"max|grad| at previous step={last_grad_max:.6e}"
                    )
                backward(loss)
                last_grad_max = max(
                    (float(np.abs(p.grad).max()) for _, p in named if p.grad is not None),
                    default=0.0,
                )
                clip_gradients((p for _, p in named))
                adam_step(named, opt, lr)
                csv.write(f"{global_step},{epoch},{lr!r},{last_loss!r}\n")
                if progress is not None:
                    progress(global_step, epoch, lr, last_loss)
                if train_cfg.max_steps and global_step >= train_cfg.max_steps:
                    stop = True
                    break
            epochs_done = epoch + 1
            if stop or epochs_done % train_cfg.checkpoint_every == 0 or epochs_done == train_cfg.epochs:
                ckpt_dir = os.path.join(out_dir, f"ckpt-{epochs_done:04d}")
                save_checkpoint(ckpt_dir, model, run_cfg, opt, rng, epochs_done, global_step)
            if stop:
                break

    if not ckpt_dir:
        ckpt_dir = os.path.join(out_dir, f"ckpt-{epochs_done:04d}")
        save_checkpoint(ckpt_dir, model, run_cfg, opt, rng, epochs_done, global_step)
    return TrainResult(ckpt_dir, csv_path, epochs_done, global_step, last_loss)
