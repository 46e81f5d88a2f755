"""Planar microphone arrays, far-field TDOA and the steering pre-shift."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import Waveform, shift_channel

SPEED_OF_SOUND = 343.0
FAR_FIELD_RANGE = 100.0


def wrap_angle(deg):
    """Wrap degrees into (-180, 180]."""
    a = np.mod(np.asarray(deg, dtype=float) + 180.0, 360.0) - 180.0
    a = np.where(a == -180.0, 180.0, a)
    return float(a) if np.ndim(a) == 0 else a


def angular_distance(a, b):
    """Circular distance in degrees, in [0, 180]."""
    d = np.abs(np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), 360.0))
    d = np.minimum(d, 360.0 - d)
    return float(d) if np.ndim(d) == 0 else d


@dataclass(frozen=True)
class MicArray:
    """Planar array, positions in meters relative to the array center. Mic 0 is canonical."""

    positions: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND
    name: str = "custom"

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float).reshape(-1, 2)
        if pos.shape[0] < 2:
            raise ValueError("a microphone array needs at least 2 microphones")
        dist = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=-1)
        if np.any(dist[np.triu_indices(len(pos), 1)] < 1e-12):
            raise ValueError("microphone positions must be distinct")
        if not self.speed_of_sound > 0:
            raise ValueError("speed_of_sound must be positive")
        pos.flags.writeable = False
        object.__setattr__(self, "positions", pos)

    canonical_index = 0

    @property
    def size(self) -> int:
        return self.positions.shape[0]

    @property
    def radius(self) -> float:
        return float(np.max(np.linalg.norm(self.positions, axis=1)))

    @property
    def max_spacing(self) -> float:
        p = self.positions
        return float(np.max(np.linalg.norm(p[:, None] - p[None, :], axis=-1)))

    @property
    def is_circular(self) -> bool:
        r = np.linalg.norm(self.positions, axis=1)
        return bool(np.ptp(r) < 1e-9)

    @classmethod
    def circular(cls, n_mics: int, radius: float, first_azimuth: float = 0.0, **kwargs) -> MicArray:
        ang = np.deg2rad(first_azimuth + 360.0 * np.arange(n_mics) / n_mics)
        return cls(radius * np.stack([np.cos(ang), np.sin(ang)], axis=1), **kwargs)

    def to_json(self) -> dict:
        return {"positions": self.positions.tolist(), "speed_of_sound": self.speed_of_sound}


def paper6() -> MicArray:
    """6-mic uniform circle of radius 7.25 cm, mic 0 on the +x axis."""
    return MicArray.circular(6, 0.0725, name="paper6")


def respeaker4() -> MicArray:
    """4-mic uniform circle of radius 32.2 mm."""
    return MicArray.circular(4, 0.0322, name="respeaker4")


PRESETS = {"paper6": paper6, "respeaker4": respeaker4}


def load_array(descriptor: str | Path) -> MicArray:
    """Resolve a preset name, ``file:<path>`` or a bare JSON path into a MicArray."""
    text = str(descriptor)
    if text in PRESETS:
        return PRESETS[text]()
    if text.startswith("file:"):
        text = text[5:]
    path = Path(text)
    if not path.exists():
        raise ValueError(f"unknown array preset or missing file: {descriptor}")
    spec = json.loads(path.read_text())
    if isinstance(spec, list):
        spec = {"positions": spec}
    return MicArray(
        np.asarray(spec["positions"], dtype=float),
        speed_of_sound=float(spec.get("speed_of_sound", SPEED_OF_SOUND)),
        name=spec.get("name", path.stem),
    )


@dataclass(frozen=True)
class FarFieldPoint:
    azimuth: float
    range: float = FAR_FIELD_RANGE

    def position(self) -> np.ndarray:
        a = np.deg2rad(self.azimuth)
        return self.range * np.array([np.cos(a), np.sin(a)])


def _delays(p: FarFieldPoint, array: MicArray, sample_rate: float) -> np.ndarray:
    """Exact (fractional) propagation delays in samples from ``p`` to every mic."""
    d = np.linalg.norm(array.positions - p.position()[None, :], axis=1)
    return d / array.speed_of_sound * sample_rate


def tdoa_samples(p: FarFieldPoint, mic_index: int, array: MicArray, sample_rate: float) -> int:
    """Propagation delay from ``p`` to one mic, floored to whole samples."""
    if not 0 <= mic_index < array.size:
        raise IndexError(f"mic index {mic_index} out of range for {array.size} mics")
    return int(np.floor(_delays(p, array, sample_rate)[mic_index]))


def shift_vector(theta: float, array: MicArray, sample_rate: float) -> np.ndarray:
    """Per-channel integer offsets aligning a far-field source at ``theta`` with mic 0."""
    t = np.floor(_delays(FarFieldPoint(theta), array, sample_rate)).astype(np.int64)
    return t[0] - t


def residual_lags(
    theta: float, azimuths: np.ndarray, array: MicArray, sample_rate: float
) -> np.ndarray:
    """Fractional lag (samples) of channel i behind channel 0 after pre-shifting toward ``theta``,
    for far-field sources at each of ``azimuths``. Shape (len(azimuths), M)."""
    k = shift_vector(theta, array, sample_rate)
    az = np.deg2rad(np.atleast_1d(np.asarray(azimuths, dtype=float)))
    u = np.stack([np.cos(az), np.sin(az)], axis=1)
    # plane-wave arrival relative to array center
    rel = -(u @ array.positions.T) / array.speed_of_sound * sample_rate
    return rel - rel[:, :1] + k[None, :]


def pre_shift(x: Waveform, theta: float, array: MicArray) -> Waveform:
    """Shift every channel so a far-field source at ``theta`` is time-aligned with channel 0."""
    if x.channels != array.size:
        raise ValueError(f"waveform has {x.channels} channels, array has {array.size} mics")
    k = shift_vector(theta, array, x.sample_rate)
    out = np.empty_like(x.data)
    for i in range(x.channels):
        out[i] = shift_channel(x.data[i], k[i])
    return x.with_data(out)


def unshift(x: Waveform, theta: float, array: MicArray) -> Waveform:
    """Undo :func:`pre_shift` (samples lost to zero padding stay zero)."""
    if x.channels != array.size:
        raise ValueError(f"waveform has {x.channels} channels, array has {array.size} mics")
    k = shift_vector(theta, array, x.sample_rate)
    out = np.empty_like(x.data)
    for i in range(x.channels):
        out[i] = shift_channel(x.data[i], -k[i])
    return x.with_data(out)


def shift_uniqueness_check(
    array: MicArray, resolution: float, sample_rate: float = 44100.0
) -> list[tuple[float, float]]:
    """Pairs of grid azimuths (resolution-spaced over (-180, 180]) with identical shift vectors."""
    n = int(round(360.0 / resolution))
    grid = [wrap_angle(-180.0 + resolution * (i + 1)) for i in range(n)]
    seen: dict[tuple, list[float]] = {}
    for a in grid:
        seen.setdefault(tuple(shift_vector(a, array, sample_rate)), []).append(a)
    pairs = []
    for angles in seen.values():
        for i in range(len(angles)):
            for j in range(i + 1, len(angles)):
                pairs.append((angles[i], angles[j]))
    return sorted(pairs)
