"""Procedural dry stems: speech-like voices and backgrounds, plus an on-disk stem catalog.

The voices are source-filter approximations (band-limited glottal harmonics, switched vowel
formants, syllabic envelope, fricative bursts). They are broadband, mutually uncorrelated and
sparse in time-frequency, which is what the localization and masking code needs from speech.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import butter, lfilter, sosfilt

from .dsp import Waveform, read_wav, resample, write_wav

# (F1, F2, F3) in Hz
VOWELS = [(730, 1090, 2440), (270, 2290, 3010), (530, 1840, 2480), (300, 870, 2240), (570, 840, 2410),
          (440, 1020, 2240), (660, 1720, 2410)]


def _resonator(freq: float, bw: float, sr: float):
    r = np.exp(-np.pi * bw / sr)
    a = [1.0, -2.0 * r * np.cos(2 * np.pi * freq / sr), r * r]
    return [1.0 - r], a


def _syllable_envelope(n: int, sr: float, rng: np.random.Generator):
    env = np.zeros(n)
    labels = np.zeros(n, dtype=int)
    t = int(rng.uniform(0.0, 0.15) * sr)
    while t < n:
        if rng.random() < 0.2:
            t += int(rng.uniform(0.15, 0.45) * sr)
            continue
        length = int(rng.uniform(0.12, 0.35) * sr)
        stop = min(n, t + length)
        k = np.arange(stop - t)
        env[t:stop] = np.sin(np.pi * (k + 0.5) / length) ** 0.7 * rng.uniform(0.5, 1.0)
        labels[t:stop] = rng.integers(len(VOWELS))
        t = stop + int(rng.uniform(0.0, 0.06) * sr)
    return env, labels


def synth_voice(seconds: float, sample_rate: float, rng: np.random.Generator) -> Waveform:
    """A single-channel speech-like signal normalized to RMS 0.1."""
    sr = float(sample_rate)
    n = int(round(seconds * sr))
    t = np.arange(n) / sr
    f0_base = rng.uniform(90.0, 240.0)
    drift = sum(rng.uniform(0.03, 0.08) * np.sin(2 * np.pi * rng.uniform(0.2, 1.5) * t + rng.uniform(0, 6.3))
                for _ in range(3))
    f0 = f0_base * (1.0 + drift + 0.01 * np.sin(2 * np.pi * 5.5 * t))
    phase = 2 * np.pi * np.cumsum(f0) / sr
    top = min(8000.0, 0.45 * sr)
    source = np.zeros(n)
    for k in range(1, int(top / (0.8 * f0_base)) + 1):
        alive = k * f0 < top
        if not alive.any():
            break
        source += alive * np.sin(k * phase) / k ** 0.9
    env, labels = _syllable_envelope(n, sr, rng)
    voiced = np.zeros(n)
    for v, formants in enumerate(VOWELS):
        sel = labels == v
        if not sel.any():
            continue
        y = source
        for f, bw in zip(formants, (80.0, 100.0, 140.0)):
            if f < 0.45 * sr:
                b, a = _resonator(f * rng.uniform(0.92, 1.08), bw, sr)
                y = lfilter(b, a, y)
        voiced[sel] = y[sel] / (np.std(y) + 1e-12)
    noise = rng.standard_normal(n)
    sos = butter(4, [min(2500.0, 0.3 * sr), min(9000.0, 0.45 * sr)], btype="band", fs=sr, output="sos")
    fric = sosfilt(sos, noise)
    fric_env = np.zeros(n)
    for _ in range(int(seconds * 2)):
        c = rng.integers(n)
        w = int(rng.uniform(0.03, 0.09) * sr)
        lo, hi = max(0, c - w), min(n, c + w)
        fric_env[lo:hi] = np.maximum(fric_env[lo:hi], np.hanning(hi - lo) * rng.uniform(0.2, 0.5))
    y = env * voiced + fric_env * fric / (np.std(fric) + 1e-12)
    y *= 0.1 / (np.sqrt(np.mean(y * y)) + 1e-12)
    return Waveform(y, sr)


def synth_background(seconds: float, sample_rate: float, rng: np.random.Generator, kind: str = "noise") -> Waveform:
    """Restaurant-like noise (pink noise + babble) or simple music, RMS 0.1."""
    sr = float(sample_rate)
    n = int(round(seconds * sr))
    if kind == "music":
        t = np.arange(n) / sr
        y = np.zeros(n)
        beat = 60.0 / rng.uniform(80, 140)
        root = rng.uniform(110, 220)
        for step in range(int(seconds / beat) + 1):
            lo, hi = int(step * beat * sr), min(n, int((step + 1) * beat * sr))
            if lo >= n:
                break
            chord = root * 2 ** (np.array([0, 4, 7, 12]) / 12.0) * 2 ** (rng.integers(-5, 6) / 12.0)
            decay = np.exp(-3.0 * (t[lo:hi] - t[lo]) / beat)
            for f in chord:
                for h in range(1, 6):
                    if h * f < 0.45 * sr:
                        y[lo:hi] += decay * np.sin(2 * np.pi * h * f * t[lo:hi]) / h
    else:
        spec = np.fft.rfft(rng.standard_normal(n))
        freqs = np.fft.rfftfreq(n, 1 / sr)
        spec[1:] /= np.sqrt(freqs[1:])
        spec[0] = 0
        y = np.fft.irfft(spec, n)
        y /= np.std(y) + 1e-12
        for _ in range(4):
            b = synth_voice(seconds, sr, rng).data[0].astype(np.float64)
            y += 0.5 * b / (np.std(b) + 1e-12)
    y *= 0.1 / (np.sqrt(np.mean(y * y)) + 1e-12)
    return Waveform(y, sr)


@dataclass
class StemCatalog:
    """Dry single-channel stems split into foreground voices and backgrounds."""

    voices: list[Waveform]
    backgrounds: list[Waveform] = field(default_factory=list)
    voice_names: list[str] = field(default_factory=list)
    background_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if not self.voice_names:
            self.voice_names = [f"voice_{i:03d}" for i in range(len(self.voices))]
        if not self.background_names:
            self.background_names = [f"bg_{i:03d}" for i in range(len(self.backgrounds))]


def synthetic_catalog(
    n_voices: int = 16,
    n_backgrounds: int = 4,
    sample_rate: float = 44100.0,
    seconds: float = 4.0,
    seed: int = 0,
) -> StemCatalog:
    rng = np.random.default_rng(seed)
    voices = [synth_voice(seconds, sample_rate, rng) for _ in range(n_voices)]
    kinds = ["noise", "music"]
    bgs = [synth_background(seconds, sample_rate, rng, kinds[i % 2]) for i in range(n_backgrounds)]
    return StemCatalog(voices, bgs)


def write_catalog(catalog: StemCatalog, out_dir: str | Path, test_fraction: float = 0.25) -> Path:
    """Write stems as WAVs plus ``split.json`` with disjoint train/test lists."""
    out = Path(out_dir)
    (out / "voices").mkdir(parents=True, exist_ok=True)
    (out / "backgrounds").mkdir(parents=True, exist_ok=True)
    entries = []
    for name, w in zip(catalog.voice_names, catalog.voices):
        write_wav(out / "voices" / f"{name}.wav", w)
        entries.append(f"voices/{name}.wav")
    bg_entries = []
    for name, w in zip(catalog.background_names, catalog.backgrounds):
        write_wav(out / "backgrounds" / f"{name}.wav", w)
        bg_entries.append(f"backgrounds/{name}.wav")
    n_test_v = max(1, int(round(len(entries) * test_fraction))) if len(entries) > 1 else 0
    n_test_b = max(1, int(round(len(bg_entries) * test_fraction))) if len(bg_entries) > 1 else 0
    split = {
        "train": entries[n_test_v:] + bg_entries[n_test_b:],
        "test": entries[:n_test_v] + bg_entries[:n_test_b],
    }
    (out / "split.json").write_text(json.dumps(split, indent=2, sort_keys=True))
    return out


def load_catalog(directory: str | Path, split: str | None = None, sample_rate: float | None = None) -> StemCatalog:
    """Load a catalog directory. Files under ``backgrounds/`` are background stems.

    With ``split`` set, only files listed under that key of ``split.json`` are used.
    """
    root = Path(directory)
    files = sorted(str(p.relative_to(root)) for p in root.rglob("*.wav"))
    if split is not None:
        listed = set(json.loads((root / "split.json").read_text())[split])
        files = [f for f in files if f in listed]
    voices, bgs, vn, bn = [], [], [], []
    for f in files:
        w = read_wav(root / f)
        if w.channels > 1:
            w = w.channel(0)
        if sample_rate is not None and w.sample_rate != sample_rate:
            w = resample(w, sample_rate)
        if f.startswith("backgrounds"):
            bgs.append(w)
            bn.append(Path(f).stem)
        else:
            voices.append(w)
            vn.append(Path(f).stem)
    if not voices:
        raise ValueError(f"catalog {root} has no voice stems")
    return StemCatalog(voices, bgs, vn, bn)
