"""Binary search over angular regions, energy gating, non-maximum suppression and chunked tracking."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dsp import Waveform, energy
from .geometry import MicArray, angular_distance, pre_shift, unshift, wrap_angle
from .separation import AngularRegion, RegionSeparator, WindowLadder

INITIAL_CENTERS = (-135.0, -45.0, 45.0, 135.0)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    ladder: WindowLadder = field(default_factory=WindowLadder)
    initial_centers: tuple[float, ...] = INITIAL_CENTERS
    gate_rel: float = 1e-3
    gate_abs_per_sample: float = 1e-6
    nms_theta_eps: float = 5.0
    nms_signal_eps: float = 0.1
    max_sources: int | None = None
    workers: int = 1

    def __post_init__(self):
        if not isinstance(self.ladder, WindowLadder):
            object.__setattr__(self, "ladder", WindowLadder(tuple(self.ladder)))
        object.__setattr__(self, "initial_centers", tuple(float(c) for c in self.initial_centers))
        if not self.initial_centers:
            raise ConfigError("no initial centers")
        w0 = self.ladder[0]
        if not math.isclose(len(self.initial_centers) * w0, 360.0):
            raise ConfigError(f"{len(self.initial_centers)} centers x {w0} deg do not tile 360 deg")
        starts = sorted(np.mod(np.array(self.initial_centers) - w0 / 2.0, 360.0))
        gaps = np.diff(starts + [starts[0] + 360.0])
        if not np.allclose(gaps, w0):
            raise ConfigError(f"initial centers {self.initial_centers} do not tile the circle")
        if min(self.gate_rel, self.gate_abs_per_sample, self.nms_theta_eps, self.nms_signal_eps) < 0:
            raise ConfigError("thresholds must be nonnegative")

    def truncated(self, width: float) -> SearchConfig:
        try:
            ladder = self.ladder.truncate(width)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return replace(self, ladder=ladder)


@dataclass(frozen=True)
class CandidateSource:
    waveform: Waveform
    region: AngularRegion
    energy: float
    level: int

    @property
    def azimuth(self) -> float:
        return self.region.center


@dataclass
class LevelTrace:
    width: float
    centers: list[float] = field(default_factory=list)
    energies: list[float] = field(default_factory=list)
    kept: list[bool] = field(default_factory=list)

    @property
    def passes(self) -> int:
        return len(self.centers)


@dataclass
class SearchTrace:
    levels: list[LevelTrace] = field(default_factory=list)

    @property
    def total_passes(self) -> int:
        return sum(lv.passes for lv in self.levels)

    def to_json(self) -> dict:
        return {
            "total_passes": self.total_passes,
            "levels": [
                {"width": lv.width, "centers": lv.centers, "energies": lv.energies, "kept": lv.kept}
                for lv in self.levels
            ],
        }


def energy_gate(output: Waveform, input: Waveform, width: float, config: SearchConfig) -> bool:
    """Keep a region iff its output energy clears both the absolute and the relative floor.

    ``width`` is accepted for interface symmetry; the floors do not depend on it.
    """
    e_in = energy(input)
    if e_in == 0.0:
        return False
    floor = max(config.gate_abs_per_sample * input.samples, config.gate_rel * e_in)
    return energy(output) >= floor


def child_centers(center: float, width: float, child_width: float) -> list[float]:
    """Children of width ``child_width`` laid from the parent's start, spaced one child width apart.

    ``ceil(width / child_width)`` children; the last may overhang the parent's end when the
    widths do not divide.
    """
    n = int(math.ceil(width / child_width - 1e-9))
    start = center - width / 2.0 + child_width / 2.0
    return [wrap_angle(start + k * child_width) for k in range(n)]


def _dedupe(centers: list[float]) -> list[float]:
    out: list[float] = []
    for c in centers:
        if all(angular_distance(c, o) > 1e-6 for o in out):
            out.append(c)
    return out


def _norm(w: Waveform) -> float:
    return math.sqrt(energy(w))


def nms(candidates: Sequence[CandidateSource], config: SearchConfig) -> list[CandidateSource]:
    """Greedy suppression in descending energy order of angularly close, signal-similar duplicates."""
    order = sorted(candidates, key=lambda c: -c.energy)
    kept: list[CandidateSource] = []
    for cand in order:
        dup = False
        for k in kept:
            if angular_distance(cand.azimuth, k.azimuth) >= config.nms_theta_eps:
                continue
            diff = math.sqrt(energy(k.waveform.data.astype(np.float64) - cand.waveform.data))
            if diff < config.nms_signal_eps * max(_norm(k.waveform), _norm(cand.waveform)):
                dup = True
                break
        if not dup:
            kept.append(cand)
    return kept


def _evaluate(x, array, separator, centers, width, workers):
    def one(c):
        return separator.separate(pre_shift(x, c, array), c, width)

    if workers > 1 and len(centers) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(one, centers))
    return [one(c) for c in centers]


def separate_and_localize(
    x: Waveform, array: MicArray, separator: RegionSeparator, config: SearchConfig | None = None
) -> tuple[list[CandidateSource], SearchTrace]:
    """Coarse-to-fine search: separate each surviving region, gate by energy, subdivide, then NMS."""
    config = config or SearchConfig()
    if x.channels != array.size:
        raise ValueError(f"input has {x.channels} channels, array has {array.size} mics")
    ladder = config.ladder
    trace = SearchTrace()
    centers = list(config.initial_centers)
    leaves: list[CandidateSource] = []
    for level, width in enumerate(ladder):
        outputs = _evaluate(x, array, separator, centers, width, config.workers)
        lv = LevelTrace(width)
        survivors = []
        for c, out in zip(centers, outputs):
            keep = energy_gate(out, x, width, config)
            lv.centers.append(float(c))
            lv.energies.append(energy(out))
            lv.kept.append(keep)
            if keep:
                survivors.append((c, out))
        trace.levels.append(lv)
        if level == len(ladder) - 1:
            for c, out in survivors:
                restored = unshift(out, c, array)
                leaves.append(CandidateSource(restored, AngularRegion(c, width), energy(restored), level))
            break
        nxt = []
        for c, _ in survivors:
            nxt.extend(child_centers(c, width, ladder[level + 1]))
        centers = _dedupe(nxt)
        if not centers:
            break
    found = nms(leaves, config)
    if config.max_sources is not None:
        found = found[: config.max_sources]
    return found, trace


def linear_sweep(
    x: Waveform,
    array: MicArray,
    separator: RegionSeparator,
    resolution: float = 2.0,
    final_width: float | None = None,
    config: SearchConfig | None = None,
) -> tuple[list[CandidateSource], int]:
    """Evaluate every center of a ``resolution``-spaced tiling; ``360 / resolution`` passes."""
    config = config or SearchConfig()
    width = final_width if final_width is not None else resolution
    n = int(round(360.0 / resolution))
    centers = [wrap_angle(-180.0 + resolution / 2.0 + k * resolution) for k in range(n)]
    outputs = _evaluate(x, array, separator, centers, width, config.workers)
    cands = []
    for c, out in zip(centers, outputs):
        if energy_gate(out, x, width, config):
            restored = unshift(out, c, array)
            cands.append(CandidateSource(restored, AngularRegion(c, width), energy(restored), 0))
    return nms(cands, config), len(centers)


@dataclass
class Track:
    start_chunk: int
    candidates: list[CandidateSource] = field(default_factory=list)

    @property
    def regions(self) -> list[AngularRegion]:
        return [c.region for c in self.candidates]

    @property
    def chunks(self) -> range:
        return range(self.start_chunk, self.start_chunk + len(self.candidates))

    def waveform(self, bounds: Sequence[tuple[int, int]], channels: int, sample_rate: float) -> Waveform:
        """Concatenated per-chunk outputs placed on the full timeline (zeros elsewhere)."""
        total = bounds[-1][1]
        out = np.zeros((channels, total), dtype=np.float32)
        for k, cand in zip(self.chunks, self.candidates):
            a, b = bounds[k]
            out[:, a:b] = cand.waveform.data
        return Waveform(out, sample_rate)


def chunk_bounds(samples: int, chunk: int) -> list[tuple[int, int]]:
    n = max(1, samples // chunk)
    edges = [k * chunk for k in range(n)] + [samples]
    return list(zip(edges[:-1], edges[1:]))


def track_moving(
    x: Waveform,
    array: MicArray,
    separator: RegionSeparator | Sequence[RegionSeparator],
    config: SearchConfig | None = None,
    chunk_seconds: float = 1.5,
    coarse_width: float = 23.0,
) -> tuple[list[Track], list[tuple[int, int]]]:
    """Search each chunk with the ladder stopped at ``coarse_width`` and link adjacent regions.

    ``separator`` is a single separator (cropped per chunk when it has ``crop``) or one separator
    per chunk. A trailing partial chunk is merged into the last full one. Two regions are adjacent
    when their centers are at most ``coarse_width`` apart; a track that misses a chunk ends.
    Suppression uses ``coarse_width`` as its angular radius, since a source sitting in the overlap
    of two coarse regions otherwise shows up twice.
    """
    config = (config or SearchConfig()).truncated(coarse_width)
    config = replace(config, nms_theta_eps=max(config.nms_theta_eps, coarse_width))
    chunk = int(round(chunk_seconds * x.sample_rate))
    if chunk <= 0 or chunk > x.samples:
        raise ValueError(f"chunk of {chunk} samples does not fit a {x.samples}-sample input")
    bounds = chunk_bounds(x.samples, chunk)
    if isinstance(separator, (list, tuple)):
        if len(separator) != len(bounds):
            raise ValueError(f"{len(separator)} separators for {len(bounds)} chunks")
        per_chunk = list(separator)
    elif hasattr(separator, "crop"):
        per_chunk = [separator.crop(a, b) for a, b in bounds]
    else:
        per_chunk = [separator] * len(bounds)

    tracks: list[Track] = []
    active: list[Track] = []
    for k, ((a, b), sep) in enumerate(zip(bounds, per_chunk)):
        found, _ = separate_and_localize(x.segment(a, b), array, sep, config)
        extended: list[Track] = []
        for cand in sorted(found, key=lambda c: -c.energy):
            options = [
                t for t in active
                if t not in extended and angular_distance(t.candidates[-1].azimuth, cand.azimuth) <= coarse_width
            ]
            if options:
                best = min(options, key=lambda t: angular_distance(t.candidates[-1].azimuth, cand.azimuth))
                best.candidates.append(cand)
                extended.append(best)
            else:
                t = Track(k, [cand])
                tracks.append(t)
                extended.append(t)
        active = extended
    return tracks, bounds
