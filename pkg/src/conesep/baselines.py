"""Learning-free reference methods: SRP-PHAT, MUSIC, delay-and-sum, oracle IBM/IRM."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dsp import Waveform, istft, stft
from .geometry import MicArray, angular_distance, pre_shift, wrap_angle


@dataclass(frozen=True)
class DoaGrid:
    """Uniform azimuth grid with per-mic far-field delays in (fractional) samples."""

    azimuths: np.ndarray
    delays: np.ndarray  # (G, M), relative to the array center

    @classmethod
    def uniform(cls, array: MicArray, resolution: float, sample_rate: float) -> DoaGrid:
        n = int(round(360.0 / resolution))
        az = wrap_angle(-180.0 + resolution * (np.arange(n) + 1))
        rad = np.deg2rad(az)
        u = np.stack([np.cos(rad), np.sin(rad)], axis=1)
        delays = -(u @ array.positions.T) / array.speed_of_sound * sample_rate
        return cls(np.asarray(az), delays)

    @property
    def resolution(self) -> float:
        return 360.0 / len(self.azimuths)


def find_peaks_circular(response: np.ndarray, azimuths: np.ndarray, n: int) -> list[float]:
    """The ``n`` largest circular local maxima (ties on plateaus keep the first sample)."""
    r = np.asarray(response)
    left, right = np.roll(r, 1), np.roll(r, -1)
    peaks = np.flatnonzero((r > left) & (r >= right))
    if peaks.size == 0:
        peaks = np.array([int(np.argmax(r))])
    order = peaks[np.argsort(-r[peaks], kind="stable")]
    return [float(azimuths[i]) for i in order[:n]]


def srp_phat_response(x: Waveform, array: MicArray, grid: DoaGrid, fft_size: int = 1024,
                      hop_size: int = 512, band: tuple[float, float] | None = None) -> np.ndarray:
    """Steered response power over the grid from frame-averaged PHAT cross-spectra of all pairs."""
    if x.channels != array.size:
        raise ValueError(f"waveform has {x.channels} channels, array has {array.size} mics")
    spec = stft(x, fft_size, hop_size, pad_short=True)
    freqs = spec.frequencies
    sel = freqs > 0
    if band is not None:
        sel &= (freqs >= band[0]) & (freqs <= band[1])
    X = spec.values[:, sel, :]
    f = freqs[sel]
    P = np.zeros(len(grid.azimuths))
    M = x.channels
    for i in range(M):
        for j in range(i + 1, M):
            c = X[i] * np.conj(X[j])
            c = (c / (np.abs(c) + 1e-20)).mean(axis=1)  # (F,)
            tau = grid.delays[:, i] - grid.delays[:, j]  # (G,)
            P += np.real(np.exp(2j * np.pi * np.outer(tau, f) / x.sample_rate) @ c)
    return P


def srp_phat(x: Waveform, array: MicArray, grid: DoaGrid, n_sources: int = 1, **kwargs) -> list[float]:
    if n_sources < 1:
        raise ValueError("n_sources must be at least 1")
    return find_peaks_circular(srp_phat_response(x, array, grid, **kwargs), grid.azimuths, n_sources)


def music_spectrum(x: Waveform, array: MicArray, grid: DoaGrid, n_sources: int,
                   band: tuple[float, float] = (300.0, 3400.0), fft_size: int = 1024,
                   hop_size: int = 256) -> np.ndarray:
    """Band-averaged narrowband MUSIC pseudo-spectrum (each bin normalized to unit peak)."""
    M = x.channels
    if M != array.size:
        raise ValueError(f"waveform has {M} channels, array has {array.size} mics")
    if n_sources >= M:
        raise ValueError(f"MUSIC needs n_sources < {M} microphones, got {n_sources}")
    spec = stft(x, fft_size, hop_size, pad_short=True)
    freqs = spec.frequencies
    sel = np.flatnonzero((freqs >= band[0]) & (freqs <= band[1]))
    P = np.zeros(len(grid.azimuths))
    for b in sel:
        Xf = spec.values[:, b, :]
        R = Xf @ Xf.conj().T / Xf.shape[1]
        _, vecs = np.linalg.eigh(R)
        En = vecs[:, : M - n_sources]
        A = np.exp(-2j * np.pi * freqs[b] * grid.delays / x.sample_rate)  # (G, M)
        denom = np.sum(np.abs(A.conj() @ En) ** 2, axis=1)
        p = 1.0 / np.maximum(denom, 1e-12)
        P += p / p.max()
    return P / max(len(sel), 1)


def music(x: Waveform, array: MicArray, grid: DoaGrid, n_sources: int = 1,
          band: tuple[float, float] = (300.0, 3400.0), **kwargs) -> list[float]:
    P = music_spectrum(x, array, grid, n_sources, band, **kwargs)
    return find_peaks_circular(P, grid.azimuths, n_sources)


def delay_and_sum(x: Waveform, theta: float, array: MicArray) -> Waveform:
    """Channel mean of the input pre-shifted toward ``theta``."""
    shifted = pre_shift(x, theta, array)
    return Waveform(shifted.data.mean(axis=0, dtype=np.float64)[None, :], x.sample_rate)


def _check_stems(mixture: Waveform, stems):
    for s in stems:
        if s.data.shape != mixture.data.shape:
            raise ValueError(f"stem shape {s.data.shape} differs from mixture {mixture.data.shape}")


def ideal_binary_masks(mixture: Waveform, stems, fft_size: int = 1024, hop_size: int = 256) -> np.ndarray:
    """One-hot masks (S, bins, frames) by largest canonical-channel magnitude."""
    _check_stems(mixture, stems)
    mags = np.stack([np.abs(stft(s, fft_size, hop_size, pad_short=True).values[0]) for s in stems])
    winner = np.argmax(mags, axis=0)
    return (np.arange(len(stems))[:, None, None] == winner[None]).astype(float)


def ideal_ratio_masks(mixture: Waveform, stems, fft_size: int = 1024, hop_size: int = 256,
                      eps: float = 1e-10) -> np.ndarray:
    """Magnitude ratio masks |S_i| / (sum_j |S_j| + eps) on the canonical channel."""
    _check_stems(mixture, stems)
    mags = np.stack([np.abs(stft(s, fft_size, hop_size, pad_short=True).values[0]) for s in stems])
    return mags / (mags.sum(axis=0, keepdims=True) + eps)


def _apply_masks(mixture: Waveform, masks: np.ndarray, fft_size: int, hop_size: int) -> list[Waveform]:
    spec = stft(mixture, fft_size, hop_size, pad_short=True)
    return [istft(spec.with_values(spec.values * m[None])) for m in masks]


def oracle_ibm(mixture: Waveform, stems, fft_size: int = 1024, hop_size: int = 256) -> list[Waveform]:
    return _apply_masks(mixture, ideal_binary_masks(mixture, stems, fft_size, hop_size), fft_size, hop_size)


def oracle_irm(mixture: Waveform, stems, fft_size: int = 1024, hop_size: int = 256) -> list[Waveform]:
    return _apply_masks(mixture, ideal_ratio_masks(mixture, stems, fft_size, hop_size), fft_size, hop_size)


def closest_to_truth(estimates, truths) -> list[float]:
    """Keep, for each truth, the nearest unused estimate (the lenient baseline protocol)."""
    pool = list(estimates)
    kept = []
    for t in truths:
        if not pool:
            break
        i = int(np.argmin([angular_distance(e, t) for e in pool]))
        kept.append(pool.pop(i))
    return kept
