"""Core signal containers and DSP helpers: shifting, STFT/ISTFT, resampling, energy, WAV I/O."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.io import wavfile
from scipy.signal import get_window, resample_poly

DTYPE = np.float32


class ShiftError(ValueError):
    """Raised when a shift offset exceeds the signal length."""


@dataclass(frozen=True)
class Waveform:
    """M-channel signal, shape (channels, samples), stored as read-only float32."""

    data: np.ndarray
    sample_rate: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 1:
            data = data[None, :]
        if data.ndim != 2 or data.shape[0] < 1:
            raise ValueError(f"waveform data must be (channels, samples), got shape {data.shape}")
        if not self.sample_rate > 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if data.dtype != DTYPE or data.flags.writeable:
            data = np.array(data, dtype=DTYPE)
            data.flags.writeable = False
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    @property
    def duration(self) -> float:
        return self.samples / self.sample_rate

    def channel(self, index: int) -> Waveform:
        return Waveform(self.data[index : index + 1], self.sample_rate)

    def with_data(self, data: np.ndarray) -> Waveform:
        return Waveform(data, self.sample_rate)

    def segment(self, start: int, stop: int) -> Waveform:
        return Waveform(self.data[:, start:stop], self.sample_rate)

    @classmethod
    def zeros(cls, channels: int, samples: int, sample_rate: float) -> Waveform:
        return cls(np.zeros((channels, samples), dtype=DTYPE), sample_rate)


@dataclass(frozen=True)
class Spectrogram:
    """Complex STFT coefficients, shape (channels, bins, frames).

    ``length`` is the original signal length so ``istft`` can strip padding.
    """

    values: np.ndarray
    fft_size: int
    hop_size: int
    sample_rate: float
    window: str = "hann"
    length: int = 0

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def bins(self) -> int:
        return self.values.shape[1]

    @property
    def frames(self) -> int:
        return self.values.shape[2]

    @property
    def frequencies(self) -> np.ndarray:
        return np.fft.rfftfreq(self.fft_size, 1.0 / self.sample_rate)

    def with_values(self, values: np.ndarray) -> Spectrogram:
        return Spectrogram(values, self.fft_size, self.hop_size, self.sample_rate, self.window, self.length)


def shift_channel(signal: np.ndarray, offset: int) -> np.ndarray:
    """Shift a 1-D signal by an integer number of samples with one-sided zero padding.

    Positive offsets delay (zeros prepended, tail dropped); negative offsets advance.
    """
    signal = np.asarray(signal)
    n = signal.shape[-1]
    offset = int(offset)
    if abs(offset) > n:
        raise ShiftError(f"shift offset {offset} exceeds signal length {n}")
    out = np.zeros_like(signal)
    if offset >= 0:
        out[..., offset:] = signal[..., : n - offset]
    else:
        out[..., : n + offset] = signal[..., -offset:]
    return out


def energy(w: Waveform | np.ndarray) -> float:
    data = w.data if isinstance(w, Waveform) else np.asarray(w)
    d = data.astype(np.float64, copy=False)
    return float(np.sum(d * d))


def _analysis_window(window: str, fft_size: int) -> np.ndarray:
    if window in ("boxcar", "rect", "rectangular"):
        return np.ones(fft_size)
    return get_window(window, fft_size, fftbins=True)


def stft(
    w: Waveform,
    fft_size: int = 1024,
    hop_size: int = 256,
    window: str = "hann",
    pad_short: bool = False,
) -> Spectrogram:
    """Per-channel STFT.

    Padding convention: ``fft_size // 2`` zeros on both ends, plus trailing zeros to
    complete the last hop, giving ``ceil(T / hop) + 1`` frames.
    """
    if fft_size <= 0 or fft_size & (fft_size - 1):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if not 0 < hop_size <= fft_size:
        raise ValueError(f"hop_size must be in (0, fft_size], got {hop_size}")
    T = w.samples
    if T < fft_size and not pad_short:
        raise ValueError(f"signal length {T} shorter than fft_size {fft_size}; pass pad_short=True")
    half = fft_size // 2
    n_frames = -(-T // hop_size) + 1
    total = (n_frames - 1) * hop_size + fft_size
    x = np.zeros((w.channels, total))
    x[:, half : half + T] = w.data
    win = _analysis_window(window, fft_size)
    idx = np.arange(fft_size)[None, :] + hop_size * np.arange(n_frames)[:, None]
    frames = x[:, idx] * win  # (M, frames, fft)
    values = np.fft.rfft(frames, axis=-1).transpose(0, 2, 1)
    return Spectrogram(values, fft_size, hop_size, w.sample_rate, window, T)


def istft(s: Spectrogram) -> Waveform:
    """Weighted overlap-add inverse of :func:`stft`."""
    if s.bins != s.fft_size // 2 + 1:
        raise ValueError(f"bins {s.bins} inconsistent with fft_size {s.fft_size}")
    if not 0 < s.hop_size <= s.fft_size:
        raise ValueError(f"hop_size {s.hop_size} inconsistent with fft_size {s.fft_size}")
    n_frames = s.frames
    if s.length and -(-s.length // s.hop_size) + 1 != n_frames:
        raise ValueError(f"{n_frames} frames inconsistent with length {s.length} and hop {s.hop_size}")
    win = _analysis_window(s.window, s.fft_size)
    frames = np.fft.irfft(s.values.transpose(0, 2, 1), n=s.fft_size, axis=-1) * win
    total = (n_frames - 1) * s.hop_size + s.fft_size
    out = np.zeros((s.channels, total))
    norm = np.zeros(total)
    for k in range(n_frames):
        start = k * s.hop_size
        out[:, start : start + s.fft_size] += frames[:, k]
        norm[start : start + s.fft_size] += win * win
    nz = norm > 1e-10
    out[:, nz] /= norm[nz]
    half = s.fft_size // 2
    length = s.length or total - 2 * half
    return Waveform(out[:, half : half + length], s.sample_rate)


def resample(w: Waveform, target_rate: float) -> Waveform:
    """Band-limited polyphase resampling; output length is round(T * target / source)."""
    if not target_rate > 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == w.sample_rate:
        return w
    ratio = Fraction(target_rate / w.sample_rate).limit_denominator(10000)
    y = resample_poly(w.data.astype(np.float64), ratio.numerator, ratio.denominator, axis=-1)
    n = int(round(w.samples * target_rate / w.sample_rate))
    if y.shape[1] < n:
        y = np.pad(y, ((0, 0), (0, n - y.shape[1])))
    return Waveform(y[:, :n], target_rate)


def read_wav(path: str | Path) -> Waveform:
    """Read PCM16 / PCM32 / float WAV; channel order is preserved as microphone order."""
    rate, data = wavfile.read(str(path))
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    elif data.dtype == np.uint8:
        data = (data.astype(np.float64) - 128.0) / 128.0
    data = np.atleast_2d(data.T) if data.ndim == 2 else data[None, :]
    return Waveform(data, float(rate))


def write_wav(path: str | Path, w: Waveform, fmt: str = "float32") -> None:
    """Write ``w`` as float32 (default) or PCM16 WAV."""
    data = w.data.T
    if fmt == "pcm16":
        data = np.clip(np.round(data * 32768.0), -32768, 32767).astype(np.int16)
    elif fmt != "float32":
        raise ValueError(f"unsupported WAV format {fmt!r}")
    if w.sample_rate != int(w.sample_rate):
        raise ValueError("WAV sample rate must be an integer")
    wavfile.write(str(path), int(w.sample_rate), np.ascontiguousarray(data))
