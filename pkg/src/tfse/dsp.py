"""Waveform I/O and the time-frequency frontend.

All analysis runs at 16 kHz with 512-sample frames, hop 256, and a periodic
square-root Hann window used for both analysis and synthesis, so the
overlap-add identity holds exactly away from the first and last half frame.
Spectrograms are one-sided (257 bins) complex128 arrays of shape
[frames, bins]; waveform samples are float64 in [-1, 1].
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    FormatError,
    SampleRateError,
)

SAMPLE_RATE = 16000
FRAME_LEN = 512
HOP = 256
N_BINS = FRAME_LEN // 2 + 1

MAG_FLOOR = 1e-8  # |X| floor inside mask ratios


@dataclass
class Waveform:
    """Mono audio: float64 samples plus a sample rate."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise DimensionError(f"waveform must be 1-d, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise SampleRateError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise DegenerateInputError("waveform contains non-finite samples")

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass
class Spectrogram:
    """One-sided STFT, complex128, shape [frames, N_BINS]."""

    values: np.ndarray
    num_samples: int  # original waveform length, for exact-length synthesis

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.values.ndim != 2 or self.values.shape[1] != N_BINS:
            raise DimensionError(f"spectrogram must be [frames, {N_BINS}], got {self.values.shape}")

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.values)


@dataclass
class Mask:
    """Real-valued time-frequency mask, shape [frames, N_BINS]."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != N_BINS:
            raise DimensionError(f"mask must be [frames, {N_BINS}], got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DegenerateInputError("mask contains non-finite values")


# ---- WAV files ---------------------------------------------------------------

_WAVE_FORMAT_PCM = 1
_WAVE_FORMAT_IEEE_FLOAT = 3


def read_wav(path: str) -> Waveform:
    """Read a mono 16 kHz WAV file (16-bit PCM or 32-bit IEEE float).

    Raises:
        FormatError: not a readable WAV encoding, or more than one channel.
        SampleRateError: file is not at 16 kHz (no implicit resampling).
    """
    with open(path, "rb") as fh:
        riff = fh.read(12)
        if len(riff) != 12 or riff[:4] != b"RIFF" or riff[8:12] != b"WAVE":
            raise FormatError(f"{path}: not a RIFF/WAVE file")
        fmt = None
        data = None
        while True:
            head = fh.read(8)
            if len(head) < 8:
                break
            cid, size = head[:4], struct.unpack("<I", head[4:])[0]
            body = fh.read(size)
            if size % 2:
                fh.read(1)  # chunks are word-aligned
            if cid == b"fmt ":
                fmt = body
            elif cid == b"data":
                data = body
        if fmt is None or data is None:
            raise FormatError(f"{path}: missing fmt or data chunk")
    tag, channels, rate, _, _, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == 0xFFFE and len(fmt) >= 40:  # WAVE_FORMAT_EXTENSIBLE
        tag = struct.unpack("<H", fmt[24:26])[0]
    if channels != 1:
        raise FormatError(f"{path}: expected mono, got {channels} channels")
    if rate != SAMPLE_RATE:
        raise SampleRateError(f"{path}: sample rate {rate} != {SAMPLE_RATE}; resample offline")
    if tag == _WAVE_FORMAT_PCM and bits == 16:
        x = np.frombuffer(data, dtype="<i2").astype(np.float64) / 32768.0
    elif tag == _WAVE_FORMAT_IEEE_FLOAT and bits == 32:
        x = np.frombuffer(data, dtype="<f4").astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported encoding (format tag {tag}, {bits}-bit)")
    return Waveform(x, rate)


def write_wav(path: str, w: Waveform, encoding: str = "pcm16") -> None:
    """Write a mono WAV file.

    encoding 'pcm16' scales by 32768 and clips to int16 (round-trip error
    <= 2**-15); 'float32' stores IEEE floats untouched beyond the f64->f32
    cast.
    """
    if encoding == "pcm16":
        q = np.clip(np.rint(w.samples * 32768.0), -32768, 32767).astype("<i2")
        with wave.open(path, "wb") as out:
            out.setnchannels(1)
            out.setsampwidth(2)
            out.setframerate(w.sample_rate)
            out.writeframes(q.tobytes())
    elif encoding == "float32":
        payload = w.samples.astype("<f4").tobytes()
        n = len(payload)
        hdr = b"RIFF" + struct.pack("<I", 4 + 26 + 12 + n) + b"WAVE"
        fmt = b"fmt " + struct.pack(
            "<IHHIIHH", 18, _WAVE_FORMAT_IEEE_FLOAT, 1, w.sample_rate, w.sample_rate * 4, 4, 32
        ) + struct.pack("<H", 0)
        fact = b"fact" + struct.pack("<II", 4, len(w))
        data = b"data" + struct.pack("<I", n) + payload
        with open(path, "wb") as fh:
            fh.write(hdr + fmt + fact + data)
    else:
        raise FormatError(f"unknown wav encoding {encoding!r}")


# ---- STFT --------------------------------------------------------------------


def _window() -> np.ndarray:
    # periodic Hann, square-rooted; sqrt-Hann^2 overlap-adds to 1 at hop N/2
    n = np.arange(FRAME_LEN)
    hann = 0.5 - 0.5 * np.cos(2.0 * np.pi * n / FRAME_LEN)
    return np.sqrt(hann)


_WIN = _window()


def num_frames(n_samples: int) -> int:
    """Frames the analysis grid assigns to an n-sample input (>= 1)."""
    if n_samples <= 0:
        raise DegenerateInputError("cannot analyze an empty waveform")
    return max(1, int(np.ceil(n_samples / HOP)))


def stft(w: Waveform) -> Spectrogram:
    """Analyze a 16 kHz waveform into [frames, 257] complex bins.

    The tail is zero-padded to the frame grid, so every sample including a
    final partial frame is covered.
    """
    if w.sample_rate != SAMPLE_RATE:
        raise SampleRateError(f"stft requires {SAMPLE_RATE} Hz input, got {w.sample_rate}")
    n = len(w)
    L = num_frames(n)
    padded = np.zeros((L - 1) * HOP + FRAME_LEN, dtype=np.float64)
    padded[:n] = w.samples
    idx = np.arange(FRAME_LEN)[None, :] + HOP * np.arange(L)[:, None]
    frames = padded[idx] * _WIN[None, :]
    return Spectrogram(np.fft.rfft(frames, axis=1), num_samples=n)


def istft(spec: Spectrogram, num_samples: int | None = None) -> Waveform:
    """Windowed overlap-add synthesis, cropped to num_samples."""
    vals = spec.values
    L = vals.shape[0]
    frames = np.fft.irfft(vals, n=FRAME_LEN, axis=1) * _WIN[None, :]
    out = np.zeros((L - 1) * HOP + FRAME_LEN, dtype=np.float64)
    for m in range(L):
        out[m * HOP:m * HOP + FRAME_LEN] += frames[m]
    n = spec.num_samples if num_samples is None else num_samples
    return Waveform(out[:n], SAMPLE_RATE)


# ---- masks -------------------------------------------------------------------


def phase_sensitive_mask(clean: Spectrogram, noisy: Spectrogram, clamp: bool = True) -> Mask:
    """Phase-sensitive mask |S|/|X| * cos(angle(S) - angle(X)).

    |X| is floored at 1e-8 to keep silent bins finite. With clamp=True the
    result is clipped to [0, 1], the range a sigmoid-output model can emit;
    clamp=False returns the raw ratio.
    """
    s, x = clean.values, noisy.values
    if s.shape != x.shape:
        raise DimensionError(f"spectrogram shapes differ: {s.shape} vs {x.shape}")
    mag_x = np.maximum(np.abs(x), MAG_FLOOR)
    m = (np.abs(s) / mag_x) * np.cos(np.angle(s) - np.angle(x))
    if clamp:
        m = np.clip(m, 0.0, 1.0)
    return Mask(m)


def apply_mask(spec: Spectrogram, mask: Mask) -> Spectrogram:
    """Pointwise product; the input's phase is kept (the mask is real)."""
    if spec.values.shape != mask.values.shape:
        raise DimensionError(f"mask shape {mask.values.shape} != spectrogram shape {spec.values.shape}")
    return Spectrogram(spec.values * mask.values, num_samples=spec.num_samples)


# ---- mixing ------------------------------------------------------------------


def mix_at_snr(
    speech: Waveform,
    noise: Waveform,
    snr_db: float,
    rng: np.random.Generator,
) -> tuple[Waveform, Waveform]:
    """Mix noise into speech at an exact clip-level SNR.

    The noise is tiled if shorter than the speech, a random offset segment of
    equal length is cut, and it is scaled so that
    10*log10(P_speech / P_noise) == snr_db with full-clip mean-square powers.

    Returns:
        (mixture, scaled_noise) so callers can reuse the exact noise term.
    """
    if speech.sample_rate != noise.sample_rate:
        raise SampleRateError(
            f"speech at {speech.sample_rate} Hz but noise at {noise.sample_rate} Hz"
        )
    n = len(speech)
    if n == 0:
        raise DegenerateInputError("cannot mix an empty speech clip")
    d = noise.samples
    if len(d) == 0:
        raise DegenerateInputError("cannot mix an empty noise clip")
    if len(d) < n:
        d = np.tile(d, int(np.ceil(n / len(d))))
    offset = int(rng.integers(0, len(d) - n + 1))
    seg = d[offset:offset + n]
    p_s = float(np.mean(speech.samples**2))
    p_d = float(np.mean(seg**2))
    if p_s == 0.0:
        raise DegenerateInputError("speech clip is all zeros; SNR undefined")
    if p_d == 0.0:
        raise DegenerateInputError("noise segment is all zeros; SNR undefined")
    scale = np.sqrt(p_s / (p_d * 10.0 ** (snr_db / 10.0)))
    scaled = seg * scale
    return Waveform(speech.samples + scaled, speech.sample_rate), Waveform(scaled, speech.sample_rate)


def snr_db(reference: Waveform, estimate: Waveform) -> float:
    """SNR of estimate against reference: 10*log10(P_ref / P_err)."""
    if len(reference) != len(estimate):
        raise DimensionError(f"length mismatch: {len(reference)} vs {len(estimate)}")
    err = estimate.samples - reference.samples
    p_ref = float(np.mean(reference.samples**2))
    p_err = float(np.mean(err**2))
    if p_ref == 0.0:
        raise DegenerateInputError("reference is all zeros; SNR undefined")
    if p_err == 0.0:
        return float("inf")
    return 10.0 * np.log10(p_ref / p_err)
