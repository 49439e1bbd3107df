"""Intelligibility scoring and throughput benchmarks.

ESTOI follows the published extended short-time objective intelligibility
procedure: resample to 10 kHz, drop frames more than 40 dB below the
loudest clean frame, analyze with 256-sample Hann frames (hop 128, 512-point
FFT), collect 15 one-third-octave band envelopes from 150 Hz, and average
row/column-normalized correlations over sliding 30-frame segments.

The 16 -> 10 kHz resampler is a polyphase windowed-sinc design, fixed here:
upsample by 5, lowpass with a Kaiser-windowed sinc (beta 8.555, half-length
10*max(up, down) taps at the upsampled rate, cutoff 1/(2*max(up, down))),
downsample by 8.

Throughput: measure_rtf times mask inference (optionally the full STFT ->
mask -> ISTFT path) against audio duration; measure_train_step times whole
optimizer steps on pre-generated synthetic batches.
"""

from __future__ import annotations

import subprocess
import time
from dataclasses import dataclass, field

import numpy as np

from . import dsp
from .config import RunConfig
from .errors import DataError, LengthError, SampleRateError
from .model import EnhancementModel, build_model, count_params, enhance, load_model
from .tensor import Tensor, no_grad

ESTOI_SR = 10000
_FRAME = 256
_HOP = 128
_NFFT = 512
_N_BANDS = 15
_CF_MIN = 150.0
_SEG = 30
_DYN_RANGE_DB = 40.0
_TINY = 1e-30


# ---- resampling ------------------------------------------------------------


def _conv_full(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n = len(a) + len(b) - 1
    if len(a) * len(b) < (1 << 22):
        return np.convolve(a, b)
    size = 1 << (n - 1).bit_length()
    return np.fft.irfft(np.fft.rfft(a, size) * np.fft.rfft(b, size), size)[:n]


def resample_poly(x: np.ndarray, up: int, down: int) -> np.ndarray:
    """Rational-rate resampling by zero-stuffing, windowed-sinc lowpass,
    and decimation. Output length is ceil(len(x) * up / down)."""
    m = max(up, down)
    half = 10 * m
    n = np.arange(-half, half + 1)
    fc = 1.0 / (2.0 * m)
    taps = 2.0 * fc * np.sinc(2.0 * fc * n) * np.kaiser(2 * half + 1, 8.555) * up
    stuffed = np.zeros(len(x) * up)
    stuffed[::up] = x
    filtered = _conv_full(stuffed, taps)[half:half + len(x) * up]
    return filtered[::down]


# ---- ESTOI ------------------------------------------------------------------


def _hann_256() -> np.ndarray:
    # 256-point symmetric Hann without the zero endpoints
    return np.hanning(_FRAME + 2)[1:-1]


def _frame_signal(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    if len(x) < _FRAME:
        raise LengthError(f"signal of {len(x)} samples is shorter than one {_FRAME}-sample frame")
    n_frames = 1 + (len(x) - _FRAME) // _HOP
    idx = np.arange(_FRAME)[None, :] + _HOP * np.arange(n_frames)[:, None]
    return x[idx] * win[None, :]


def _remove_silent_frames(x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Drop frames whose clean energy is more than 40 dB below the loudest,
    then overlap-add the survivors (windowed again) back to signals."""
    win = _hann_256()
    xf = _frame_signal(x, win)
    yf = _frame_signal(y, win)
    energy = 20.0 * np.log10(np.linalg.norm(xf, axis=1) + 1e-300)
    keep = energy > energy.max() - _DYN_RANGE_DB
    xf, yf = xf[keep], yf[keep]
    if not len(xf):
        raise LengthError("no frames above the silence threshold")
    out_len = (len(xf) - 1) * _HOP + _FRAME
    xs = np.zeros(out_len)
    ys = np.zeros(out_len)
    for i in range(len(xf)):
        sl = slice(i * _HOP, i * _HOP + _FRAME)
        xs[sl] += xf[i] * win
        ys[sl] += yf[i] * win
    return xs, ys


def _band_matrix() -> np.ndarray:
    f = np.linspace(0.0, ESTOI_SR / 2.0, _NFFT // 2 + 1)
    cf = _CF_MIN * 2.0 ** (np.arange(_N_BANDS) / 3.0)
    lo_edge = cf * 2.0 ** (-1.0 / 6.0)
    hi_edge = cf * 2.0 ** (1.0 / 6.0)
    obm = np.zeros((_N_BANDS, len(f)))
    for j in range(_N_BANDS):
        lo = int(np.argmin(np.abs(f - lo_edge[j])))
        hi = int(np.argmin(np.abs(f - hi_edge[j])))
        obm[j, lo:hi] = 1.0
    return obm


_OBM = _band_matrix()


def _band_envelopes(x: np.ndarray) -> np.ndarray:
    frames = _frame_signal(x, _hann_256())
    spec = np.fft.rfft(frames, n=_NFFT, axis=1)
    return np.sqrt(_OBM @ (np.abs(spec).T ** 2))  # [bands, frames]


def _row_col_normalize(seg: np.ndarray) -> np.ndarray:
    seg = seg - seg.mean(axis=1, keepdims=True)
    seg = seg / np.maximum(np.linalg.norm(seg, axis=1, keepdims=True), _TINY)
    seg = seg - seg.mean(axis=0, keepdims=True)
    return seg / np.maximum(np.linalg.norm(seg, axis=0, keepdims=True), _TINY)


def estoi(clean: dsp.Waveform, processed: dsp.Waveform) -> float:
    """Extended STOI of a processed signal against its clean reference.

    Both inputs must be equal-length 16 kHz waveforms. The score is
    invariant to positive rescaling of either signal and reaches 1.0 for
    identical inputs.
    """
    if clean.sample_rate != dsp.SAMPLE_RATE or processed.sample_rate != dsp.SAMPLE_RATE:
        raise SampleRateError(f"estoi expects {dsp.SAMPLE_RATE} Hz inputs")
    if len(clean) != len(processed):
        raise LengthError(f"length mismatch: {len(clean)} vs {len(processed)}")
    x = resample_poly(clean.samples, 5, 8)
    y = resample_poly(processed.samples, 5, 8)
    x, y = _remove_silent_frames(x, y)
    ex = _band_envelopes(x)
    ey = _band_envelopes(y)
    n_frames = ex.shape[1]
    if n_frames < _SEG:
        raise LengthError(f"only {n_frames} analysis frames after silence removal; need {_SEG}")
    total = 0.0
    count = 0
    for m in range(_SEG, n_frames + 1):
        sx = _row_col_normalize(ex[:, m - _SEG:m])
        sy = _row_col_normalize(ey[:, m - _SEG:m])
        total += float(np.sum(sx * sy)) / _SEG
        count += 1
    return total / count


# ---- throughput -------------------------------------------------------------


@dataclass
class RTFResult:
    length_s: float
    rtf: float
    cv: float  # std / mean across runs
    runs: int
    batch: int


def measure_rtf(
    model: EnhancementModel,
    length_s: float,
    batch: int = 4,
    runs: int = 20,
    warmup: int = 3,
    include_stft: bool = False,
    seed: int = 0,
) -> RTFResult:
    """Real-time factor: processing seconds per second of audio.

    Times `batch` independent clips of length_s per run with
    time.perf_counter. By default only mask inference is timed (the
    spectral transforms are excluded); include_stft times the full
    waveform-to-waveform path.
    """
    rng = np.random.default_rng(seed)
    n = int(round(length_s * dsp.SAMPLE_RATE))
    waves = [dsp.Waveform(rng.uniform(-0.5, 0.5, n)) for _ in range(batch)]
    if include_stft:
        def work():
            for w in waves:
                enhance(model, w)
    else:
        mags = [dsp.stft(w).magnitude.astype(model.dtype) for w in waves]

        def work():
            with no_grad():
                for mag in mags:
                    model(Tensor(mag))

    for _ in range(warmup):
        work()
    times = []
    for _ in range(runs):
        t0 = time.perf_counter()
        work()
        times.append(time.perf_counter() - t0)
    times_arr = np.asarray(times)
    mean = float(times_arr.mean())
    cv = float(times_arr.std() / mean) if mean > 0 else 0.0
    return RTFResult(length_s, mean / (batch * length_s), cv, runs, batch)


def measure_train_step(
    run_cfg: RunConfig,
    steps: int = 50,
    warmup: int = 5,
    frames: int = 63,
    seed: int = 0,
    dtype=np.float32,
) -> float:
    """Mean seconds per optimizer step (forward + backward + clip + Adam).

    Batches are synthesized up front so data preparation is excluded from
    the timing.
    """
    from . import training  # local import; training pulls in no heavy deps

    model_cfg = run_cfg.model_config()
    train_cfg = run_cfg.train_config()
    model = build_model(model_cfg, seed=train_cfg.seed, dtype=dtype)
    named = list(model.named_parameters())
    opt = training.AdamState()
    rng = np.random.default_rng(seed)
    from .config import N_BINS

    batches = []
    for _ in range(min(steps + warmup, 8)):  # cycle a few distinct batches
        batch = [
            (
                np.abs(rng.normal(size=(frames, N_BINS))).astype(dtype),
                rng.uniform(0, 1, size=(frames, N_BINS)).astype(dtype),
            )
            for _ in range(train_cfg.batch_size)
        ]
        batches.append(batch)

    from . import tensor as T
    from .tensor import backward

    def step(k: int) -> None:
        batch = batches[k % len(batches)]
        model.zero_grad()
        total = None
        for mag, target in batch:
            pred = model(Tensor(mag))
            l = training.clip_loss(pred, target, mag, train_cfg.loss)
            total = l if total is None else T.add(total, l)
        loss = T.mul(total, 1.0 / len(batch))
        backward(loss)
        training.clip_gradients((p for _, p in named))
        training.adam_step(named, opt, training.lr_at(opt.t + 1, train_cfg.step_w, model_cfg.d_model))

    for k in range(warmup):
        step(k)
    t0 = time.perf_counter()
    for k in range(steps):
        step(k)
    return (time.perf_counter() - t0) / steps


@dataclass
class BenchReport:
    model_name: str
    params: int
    causal: bool
    batch: int
    runs: int
    rtf: list[RTFResult] = field(default_factory=list)
    sec_per_step: float | None = None

    def csv_rows(self) -> list[str]:
        rows = ["model,params,causal,length_s,batch,runs,rtf,rtf_cv,sec_per_step"]
        sps = "" if self.sec_per_step is None else repr(self.sec_per_step)
        for r in self.rtf:
            rows.append(
                f"{self.model_name},{self.params},{str(self.causal).lower()},"
                f"{r.length_s:g},{r.batch},{r.runs},{r.rtf!r},{r.cv!r},{sps}"
            )
        return rows


def bench_model(
    model: EnhancementModel,
    model_name: str,
    lengths_s,
    batch: int = 4,
    runs: int = 20,
    warmup: int = 3,
    include_stft: bool = False,
    sec_per_step: float | None = None,
    seed: int = 0,
) -> BenchReport:
    report = BenchReport(
        model_name=model_name,
        params=count_params(model),
        causal=model.cfg.causal,
        batch=batch,
        runs=runs,
        sec_per_step=sec_per_step,
    )
    for L in lengths_s:
        report.rtf.append(measure_rtf(model, L, batch, runs, warmup, include_stft, seed))
    return report


# ---- evaluation harness ------------------------------------------------------


def external_score(scorer_cmd: list[str], ref_wav: str, est_wav: str) -> float:
    """Run a plug-in scorer binary on (reference, estimate) WAV paths; it
    must print a single number on stdout."""
    proc = subprocess.run(
        [*scorer_cmd, ref_wav, est_wav], capture_output=True, text=True, check=False
    )
    if proc.returncode != 0:
        raise DataError(f"scorer {scorer_cmd[0]!r} failed: {proc.stderr.strip()[:200]}")
    try:
        return float(proc.stdout.strip().split()[-1])
    except (ValueError, IndexError):
        raise DataError(f"scorer {scorer_cmd[0]!r} printed no number: {proc.stdout[:200]!r}") from None


def read_eval_manifest(path: str) -> list[tuple[str, str, float]]:
    """Lines: `<clean_rel> <noise_rel> <snr_db>`, paths relative to the
    manifest directory."""
    import os

    base = os.path.dirname(os.path.abspath(path))
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 3:
                raise DataError(f"{path}:{lineno}: expected '<clean> <noise> <snr_db>'")
            rows.append((os.path.join(base, parts[0]), os.path.join(base, parts[1]), float(parts[2])))
    if not rows:
        raise DataError(f"{path}: empty evaluation manifest")
    return rows


@dataclass
class ScoreTable:
    snrs: list[float]
    rows: dict[str, dict[float, float]]  # metric -> snr -> mean value

    def csv(self) -> str:
        header = "metric," + ",".join(f"{s:g}" for s in self.snrs)
        lines = [header]
        for metric, per_snr in self.rows.items():
            lines.append(metric + "," + ",".join(repr(per_snr[s]) for s in self.snrs))
        return "\n".join(lines) + "\n"


def score_model(
    ckpt_dir: str,
    manifest_path: str,
    seed: int = 0,
    scorer_cmd: list[str] | None = None,
) -> ScoreTable:
    """Mix each manifest row at its SNR, enhance, and aggregate per-SNR
    means of ESTOI (noisy and enhanced) and SNR improvement. Mixtures are
    reproducible: row i uses a generator seeded with (seed, i)."""
    import os
    import tempfile

    model, _ = load_model(ckpt_dir)
    entries = read_eval_manifest(manifest_path)
    acc: dict[str, dict[float, list[float]]] = {}

    def push(metric: str, snr: float, value: float) -> None:
        acc.setdefault(metric, {}).setdefault(snr, []).append(value)

    for i, (clean_path, noise_path, snr) in enumerate(entries):
        clean = dsp.read_wav(clean_path)
        noise = dsp.read_wav(noise_path)
        rng = np.random.default_rng([seed, i])
        mixture, _ = dsp.mix_at_snr(clean, noise, snr, rng)
        enhanced = enhance(model, mixture)
        push("estoi_noisy", snr, estoi(clean, mixture))
        push("estoi_enhanced", snr, estoi(clean, enhanced))
        push("snr_improvement_db", snr, dsp.snr_db(clean, enhanced) - snr)
        if scorer_cmd:
            with tempfile.TemporaryDirectory() as tmp:
                ref = os.path.join(tmp, "ref.wav")
                est = os.path.join(tmp, "est.wav")
                dsp.write_wav(ref, clean, "float32")
                dsp.write_wav(est, enhanced, "float32")
                push("external", snr, external_score(scorer_cmd, ref, est))

    snrs = sorted({snr for _, _, snr in entries})
    rows = {
        metric: {s: float(np.mean(vals[s])) for s in snrs if s in vals}
        for metric, vals in acc.items()
    }
    return ScoreTable(snrs, rows)
