"""Region separators: given input pre-shifted toward ``center``, keep what lies within ``center +- width/2``."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Protocol, Sequence, runtime_checkable

import numpy as np

from .dsp import Waveform, energy, istft, stft
from .geometry import MicArray, angular_distance, pre_shift, residual_lags, wrap_angle
from .room import BACKGROUND, RenderedScene, mix

DEFAULT_LADDER = (90.0, 45.0, 23.0, 12.0, 2.0)


@dataclass(frozen=True)
class AngularRegion:
    center: float
    width: float

    def __post_init__(self):
        if not 0 < self.width <= 360:
            raise ValueError(f"region width must be in (0, 360], got {self.width}")
        object.__setattr__(self, "center", wrap_angle(self.center))

    def contains(self, azimuth: float) -> bool:
        """Half-open, wraparound-aware membership ``center - w/2 <= phi < center + w/2``."""
        if self.width >= 360:
            return True
        offset = np.mod(azimuth - (self.center - self.width / 2.0), 360.0)
        return bool(offset < self.width)

    @property
    def start(self) -> float:
        return self.center - self.width / 2.0


@dataclass(frozen=True)
class WindowLadder:
    widths: tuple[float, ...] = DEFAULT_LADDER

    def __post_init__(self):
        w = tuple(float(x) for x in self.widths)
        if not w:
            raise ValueError("window ladder is empty")
        if any(b >= a for a, b in zip(w, w[1:])):
            raise ValueError(f"window ladder must be strictly decreasing, got {w}")
        if any(x <= 0 or x > 360 for x in w):
            raise ValueError(f"window widths must be in (0, 360], got {w}")
        object.__setattr__(self, "widths", w)

    def __len__(self):
        return len(self.widths)

    def __iter__(self):
        return iter(self.widths)

    def __getitem__(self, i):
        return self.widths[i]

    def truncate(self, width: float) -> WindowLadder:
        if width not in self.widths:
            raise ValueError(f"width {width} not in ladder {self.widths}")
        return WindowLadder(self.widths[: self.widths.index(width) + 1])

    @classmethod
    def parse(cls, text: str) -> WindowLadder:
        return cls(tuple(float(t) for t in str(text).split(",") if t.strip()))


@runtime_checkable
class RegionSeparator(Protocol):
    """``separate`` receives input already pre-shifted toward ``center``.

    Output has the input's shape and silent input maps to silent output. The steering center is
    passed alongside the width because non-learned separators need it to map phase to angle.
    """

    supported_widths: tuple[float, ...] | None
    required_channels: int | None

    def separate(self, pre_shifted: Waveform, center: float, width: float) -> Waveform: ...


def region_target(scene: RenderedScene, theta_t: float, w: float, array: MicArray) -> Waveform:
    """Pre-shifted (toward ``theta_t``) sum of foreground stems inside the half-open region."""
    region = AngularRegion(theta_t, w)
    chosen = [
        pre_shift(stem, theta_t, array)
        for stem, m in zip(scene.stems, scene.meta)
        if m["kind"] != BACKGROUND and region.contains(m["azimuth"])
    ]
    if not chosen:
        return Waveform.zeros(scene.mixture.channels, scene.mixture.samples, scene.mixture.sample_rate)
    return Waveform(mix(chosen), scene.mixture.sample_rate)


class OracleSeparator:
    """Ground-truth separator bound to one rendered scene."""

    supported_widths = None

    def __init__(self, scene: RenderedScene, array: MicArray):
        self.scene = scene
        self.array = array
        self.required_channels = array.size

    def separate(self, pre_shifted: Waveform, center: float, width: float) -> Waveform:
        mix_ = self.scene.mixture
        if pre_shifted.channels != mix_.channels or pre_shifted.samples != mix_.samples:
            raise ValueError(
                f"input shape {pre_shifted.data.shape} does not match the bound scene {mix_.data.shape}"
            )
        return region_target(self.scene, center, width, self.array)

    def crop(self, start: int, stop: int) -> OracleSeparator:
        return OracleSeparator(self.scene.segment(start, stop), self.array)


@dataclass(frozen=True)
class MaskConfig:
    rolloff_deg: float = 10.0
    floor: float = 0.01
    fft_size: int = 1024
    hop_size: int = 256
    angle_step: float = 1.0


def raised_cosine_mask(deviation: np.ndarray, half_width: float, rolloff: float, floor: float) -> np.ndarray:
    """1 inside ``half_width``, ``floor`` beyond ``half_width + rolloff``, raised cosine between."""
    t = np.clip((deviation - half_width) / rolloff, 0.0, 1.0)
    return floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * t))


class DSBMaskSeparator:
    """Delay-and-sum alignment followed by a soft time-frequency spatial mask.

    For every STFT bin below the array's spatial-aliasing frequency the bin's direction is the
    grid azimuth whose predicted inter-channel phases (relative to mic 0, accounting for the
    integer pre-shift) best match the observed PHAT-normalized cross-spectra. Deviation from the
    steering center maps to a raised-cosine mask. Aliased bins reuse the frame's energy-weighted
    mean mask from the non-aliased band.
    """

    supported_widths = None

    def __init__(self, array: MicArray, config: MaskConfig | None = None):
        if array.size < 3:
            raise ValueError("dsb_mask needs at least 3 microphones for unambiguous steering")
        self.array = array
        self.config = config or MaskConfig()
        self.required_channels = array.size
        self.grid = np.arange(-180.0, 180.0, self.config.angle_step) + self.config.angle_step

    def alias_frequency(self) -> float:
        return self.array.speed_of_sound / (2.0 * self.array.max_spacing)

    def bin_directions(self, spec, center: float) -> tuple[np.ndarray, np.ndarray]:
        """Per-bin azimuth estimates for the non-aliased band; returns (low-band mask, azimuths)."""
        freqs = spec.frequencies
        low = (freqs > 0) & (freqs <= self.alias_frequency())
        X = spec.values[:, low, :]  # (M, F, N)
        cross = X[1:] * np.conj(X[0:1])
        cross = cross / (np.abs(cross) + 1e-20)
        lags = residual_lags(center, self.grid, self.array, spec.sample_rate)[:, 1:]  # (G, M-1)
        phase = 2j * np.pi * freqs[low][None, :, None] / spec.sample_rate * lags[:, None, :]
        steer = np.exp(phase)  # (G, F, M-1); observed cross ~ exp(-j 2pi f lag / sr)
        score = np.einsum("gfm,mfn->gfn", steer, cross).real
        return low, self.grid[np.argmax(score, axis=0)]

    def separate(self, pre_shifted: Waveform, center: float, width: float) -> Waveform:
        if pre_shifted.channels != self.array.size:
            raise ValueError(f"dsb_mask expects {self.array.size} channels, got {pre_shifted.channels}")
        if energy(pre_shifted) == 0.0:
            return pre_shifted.with_data(np.zeros_like(pre_shifted.data))
        cfg = self.config
        spec = stft(pre_shifted, cfg.fft_size, cfg.hop_size, pad_short=True)
        low, doa = self.bin_directions(spec, center)
        dev = angular_distance(doa, center)
        low_mask = raised_cosine_mask(dev, width / 2.0, cfg.rolloff_deg, cfg.floor)
        power = np.abs(spec.values[0, low, :]) ** 2
        pooled = (low_mask * power).sum(axis=0) / (power.sum(axis=0) + 1e-20)
        pooled = np.maximum(pooled, cfg.floor)
        mask = np.broadcast_to(pooled, (spec.bins, spec.frames)).copy()
        mask[low] = low_mask
        mask[0] = pooled
        out = istft(spec.with_values(spec.values * mask[None]))
        return out


def angular_response(
    separator_for: Callable[[RenderedScene], RegionSeparator],
    test_angles: Sequence[float],
    w: float,
    probe: Callable[[float], RenderedScene],
    array: MicArray,
    steer: float = 0.0,
) -> list[tuple[float, float]]:
    """Output/input energy ratio of a separator steered at ``steer`` for a probe swept over angles.

    ``probe(angle)`` renders a single-source scene; ``separator_for(scene)`` builds the separator.
    """
    curve = []
    for a in test_angles:
        scene = probe(a)
        sep = separator_for(scene)
        x = pre_shift(scene.mixture, steer, array)
        y = sep.separate(x, steer, w)
        e_in = energy(x)
        curve.append((float(a), energy(y) / e_in if e_in > 0 else 0.0))
    return curve
