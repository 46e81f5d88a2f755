"""2-D image-source room simulation and synthetic scene rendering."""

from __future__ import annotations

import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .dsp import DTYPE, Waveform, read_wav, resample, write_wav
from .geometry import MicArray, load_array, paper6
from .synth import StemCatalog

log = logging.getLogger(__name__)

FOREGROUND = "foreground"
BACKGROUND = "background"
SI_SDR_RANGE = (-16.0, 0.0)
CROSSFADE_SECONDS = 0.01
WALL_MARGIN = 1.0


@dataclass(frozen=True)
class RoomConfig:
    """Rectangular room in plan view, corner at the origin.

    ``array_position`` places the array center in room coordinates (defaults to the middle).
    """

    width: float
    depth: float
    absorption_fg: float = 0.5
    absorption_bg: float = 0.7
    max_image_order_fg: int = 6
    max_image_order_bg: int = 20
    array_position: tuple[float, float] | None = None

    def __post_init__(self):
        if self.width <= 0 or self.depth <= 0:
            raise ValueError("room dimensions must be positive")
        for a in (self.absorption_fg, self.absorption_bg):
            if not 0 < a <= 1:
                raise ValueError(f"absorption must be in (0, 1], got {a}")
        if self.max_image_order_fg < 0 or self.max_image_order_bg < 0:
            raise ValueError("image orders must be nonnegative")
        if self.array_position is None:
            object.__setattr__(self, "array_position", (self.width / 2, self.depth / 2))

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.array_position, dtype=float)

    def contains(self, point) -> bool:
        x, y = point
        return 0 < x < self.width and 0 < y < self.depth

    @classmethod
    def anechoic(cls, half_extent: float = 50.0) -> RoomConfig:
        return cls(2 * half_extent, 2 * half_extent, 1.0, 1.0, 0, 0)

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "depth": self.depth,
            "absorption_fg": self.absorption_fg,
            "absorption_bg": self.absorption_bg,
            "max_image_order_fg": self.max_image_order_fg,
            "max_image_order_bg": self.max_image_order_bg,
            "array_position": list(self.array_position),
        }


@dataclass(frozen=True)
class SourceSpec:
    stem: Waveform
    azimuth: float
    distance: float
    kind: str = FOREGROUND
    gain: float = 1.0
    offset: int = 0
    name: str = ""

    def position(self) -> np.ndarray:
        a = np.deg2rad(self.azimuth)
        return self.distance * np.array([np.cos(a), np.sin(a)])


@dataclass(frozen=True)
class SceneSpec:
    sources: tuple[SourceSpec, ...]
    room: RoomConfig
    array: MicArray = field(default_factory=paper6)
    sample_rate: float = 44100.0
    duration: float = 3.0
    rng_seed: int | None = None
    loop: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if sum(s.kind == BACKGROUND for s in self.sources) > 1:
            raise ValueError("a scene holds at most one background source")

    @property
    def samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


@dataclass(frozen=True)
class RenderedScene:
    mixture: Waveform
    stems: tuple[Waveform, ...]
    meta: tuple[dict, ...]
    spec: SceneSpec | None = None

    @property
    def foreground(self) -> list[int]:
        return [i for i, m in enumerate(self.meta) if m["kind"] == FOREGROUND]

    @property
    def azimuths(self) -> list[float]:
        return [self.meta[i]["azimuth"] for i in self.foreground]

    def segment(self, start: int, stop: int) -> RenderedScene:
        return RenderedScene(
            self.mixture.segment(start, stop),
            tuple(s.segment(start, stop) for s in self.stems),
            self.meta,
            self.spec,
        )


def mix(stems) -> np.ndarray:
    """Reference mixing rule: float32 sum over the stem axis."""
    return np.sum(np.stack([s.data if isinstance(s, Waveform) else s for s in stems]), axis=0, dtype=DTYPE)


def image_sources(source_pos, room: RoomConfig, max_order: int):
    """Image positions and reflection counts for a 2-D rectangular room."""
    xs, ys = float(source_pos[0]), float(source_pos[1])
    pts, refl = [], []
    n_max = max_order // 2 + 1
    for px in (0, 1):
        for nx in range(-n_max, n_max + 1):
            rx = abs(2 * nx - px)
            if rx > max_order:
                continue
            ix = (1 - 2 * px) * xs + 2 * nx * room.width
            for py in (0, 1):
                for ny in range(-n_max, n_max + 1):
                    ry = abs(2 * ny - py)
                    if rx + ry > max_order:
                        continue
                    pts.append((ix, (1 - 2 * py) * ys + 2 * ny * room.depth))
                    refl.append(rx + ry)
    return np.asarray(pts), np.asarray(refl)


def compute_rir(
    source_pos,
    mic_pos,
    room: RoomConfig,
    absorption: float,
    max_order: int,
    sample_rate: float,
    speed_of_sound: float = 343.0,
    length: int | None = None,
) -> np.ndarray:
    """Image-source impulse response with integer-sample arrivals.

    Every image contributes ``(1 - absorption) ** reflections / distance`` at sample
    ``floor(distance / c * sr)``. ``length`` caps the response length.
    """
    src = np.asarray(source_pos, dtype=float)
    mic = np.asarray(mic_pos, dtype=float)
    if not room.contains(src) or not room.contains(mic):
        raise ValueError("source and microphone must lie strictly inside the room")
    if np.linalg.norm(src - mic) < 1e-9:
        raise ValueError("source coincides with microphone")
    if not 0 < absorption <= 1:
        raise ValueError(f"absorption must be in (0, 1], got {absorption}")
    if max_order < 0:
        raise ValueError("max_order must be nonnegative")
    if absorption == 1.0:
        max_order = 0
    pts, refl = image_sources(src, room, max_order)
    dist = np.linalg.norm(pts - mic[None, :], axis=1)
    idx = np.floor(dist / speed_of_sound * sample_rate).astype(np.int64)
    amp = (1.0 - absorption) ** refl / dist
    n = int(idx.max()) + 1 if length is None else min(int(length), int(idx.max()) + 1)
    keep = idx < n
    h = np.zeros(n)
    np.add.at(h, idx[keep], amp[keep])
    return h


def _loop_stem(x: np.ndarray, needed: int, sr: float) -> np.ndarray:
    fade = max(1, int(round(CROSSFADE_SECONDS * sr)))
    if len(x) <= 2 * fade:
        return np.resize(x, needed)
    ramp = np.linspace(0.0, 1.0, fade)
    out = x.copy()
    while len(out) < needed:
        joint = out[-fade:] * (1.0 - ramp) + x[:fade] * ramp
        out = np.concatenate([out[:-fade], joint, x[fade:]])
    return out[:needed]


def dry_signal(src: SourceSpec, spec: SceneSpec) -> np.ndarray:
    stem = src.stem if src.stem.sample_rate == spec.sample_rate else resample(src.stem, spec.sample_rate)
    x = stem.data[0].astype(np.float64)
    offset = src.offset
    if offset >= len(x):
        if not spec.loop:
            raise ValueError(f"offset {offset} is past the end of stem {src.name or ''}")
        offset %= len(x)
    x = x[offset:]
    T = spec.samples
    if len(x) < T:
        if not spec.loop:
            raise ValueError(f"stem {src.name or ''} shorter than scene duration; enable looping")
        x = _loop_stem(x, T, spec.sample_rate)
    return x[:T]


def source_image(src: SourceSpec, spec: SceneSpec, mics: list[int] | None = None) -> np.ndarray:
    """Unscaled (gain 1) spatial image of one source at the requested mics, float64 (mics, T)."""
    room, array = spec.room, spec.array
    pos = room.center + src.position()
    bg = src.kind == BACKGROUND
    absorption = room.absorption_bg if bg else room.absorption_fg
    order = room.max_image_order_bg if bg else room.max_image_order_fg
    T = spec.samples
    mics = range(array.size) if mics is None else mics
    rirs = [
        compute_rir(pos, room.center + array.positions[m], room, absorption, order, spec.sample_rate,
                    array.speed_of_sound, length=T)
        for m in mics
    ]
    n = max(len(h) for h in rirs)
    rirs = np.stack([np.pad(h, (0, n - len(h))) for h in rirs])
    dry = dry_signal(src, spec)
    return fftconvolve(rirs, dry[None, :], axes=1)[:, :T]


def render_scene(spec: SceneSpec) -> RenderedScene:
    """Convolve every source with its RIRs; the mixture is the exact float32 sum of the stems."""
    room = spec.room
    for m in spec.array.positions:
        if not room.contains(room.center + m):
            raise ValueError("microphone array lies outside the room")
    stems, meta = [], []
    for src in spec.sources:
        if not room.contains(room.center + src.position()):
            raise ValueError(f"source at azimuth {src.azimuth} / {src.distance} m lies outside the room")
        img = src.gain * source_image(src, spec)
        stems.append(Waveform(img, spec.sample_rate))
        meta.append({"azimuth": float(src.azimuth), "distance": float(src.distance), "kind": src.kind,
                     "gain": float(src.gain), "name": src.name})
    if not stems:
        raise ValueError("scene has no sources")
    mixture = Waveform(mix(stems), spec.sample_rate)
    return RenderedScene(mixture, tuple(stems), tuple(meta), spec)


def _si_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    from .metrics import si_sdr

    return si_sdr(est, ref)


def _draw_azimuths(rng, n, min_sep):
    for _ in range(10000):
        az = rng.uniform(-180.0, 180.0, size=n)
        if n < 2 or min_sep <= 0:
            return az
        d = np.abs(np.mod(az[:, None] - az[None, :] + 180.0, 360.0) - 180.0)
        if np.all(d[np.triu_indices(n, 1)] >= min_sep):
            return az
    raise ValueError(f"cannot place {n} sources at least {min_sep} degrees apart")


def sample_scene(
    catalog: StemCatalog,
    n_voices: int,
    with_background: bool,
    rng_seed: int,
    sample_rate: float = 44100.0,
    duration: float = 3.0,
    array: MicArray | None = None,
    min_separation: float = 0.0,
    anechoic: bool = False,
    max_gain_attempts: int = 50,
) -> SceneSpec:
    """Random scene following the synthetic-data recipe; deterministic given ``rng_seed``.

    Gains are rejection-sampled until every foreground source's input SI-SDR on mic 0 lies in
    [-16, 0] dB; when no draw succeeds (e.g. two voices without background) the draw with the
    smallest violation is kept.
    """
    if n_voices < 1:
        raise ValueError("n_voices must be at least 1")
    if n_voices > len(catalog.voices):
        raise ValueError(f"n_voices={n_voices} exceeds catalog size {len(catalog.voices)}")
    if with_background and not catalog.backgrounds:
        raise ValueError("catalog has no background stems")
    array = array or paper6()
    rng = np.random.default_rng(rng_seed)
    T = int(round(duration * sample_rate))

    voice_ids = rng.choice(len(catalog.voices), size=n_voices, replace=False)
    az = _draw_azimuths(rng, n_voices, min_separation)
    dist = rng.uniform(1.0, 5.0, size=n_voices)
    walls = rng.uniform(15.0, 20.0, size=4)  # -x, +x, -y, +y
    abs_fg = rng.uniform(0.1, 0.99)
    abs_bg = rng.uniform(0.5, 0.99)

    def pick(stem: Waveform):
        """Random excerpt offset, redrawn (up to 20 times) while the excerpt is nearly silent."""
        x = stem.data[0].astype(np.float64)
        scale = sample_rate / stem.sample_rate
        n = int(round(len(x) * scale))
        if n <= T:
            return 0
        rms = np.sqrt(np.mean(x * x))
        for _ in range(20):
            off = int(rng.integers(0, n - T + 1))
            a = int(off / scale)
            seg = x[a : a + int(T / scale)]
            if np.sqrt(np.mean(seg * seg)) >= 0.25 * rms:
                break
        return off

    sources = [
        SourceSpec(catalog.voices[v], float(a), float(d), FOREGROUND, 1.0, pick(catalog.voices[v]),
                   catalog.voice_names[v])
        for v, a, d in zip(voice_ids, az, dist)
    ]
    if with_background:
        b = int(rng.integers(len(catalog.backgrounds)))
        bg_az, bg_dist = float(rng.uniform(-180.0, 180.0)), float(rng.uniform(10.0, 20.0))
        sources.append(SourceSpec(catalog.backgrounds[b], bg_az, bg_dist, BACKGROUND, 1.0,
                                  pick(catalog.backgrounds[b]), catalog.background_names[b]))
        bx, by = bg_dist * np.cos(np.deg2rad(bg_az)), bg_dist * np.sin(np.deg2rad(bg_az))
        walls = np.maximum(walls, [WALL_MARGIN - bx, bx + WALL_MARGIN, WALL_MARGIN - by, by + WALL_MARGIN])

    if anechoic:
        room = RoomConfig(walls[0] + walls[1], walls[2] + walls[3], 1.0, 1.0, 0, 0, (walls[0], walls[2]))
    else:
        room = RoomConfig(walls[0] + walls[1], walls[2] + walls[3], abs_fg, abs_bg, array_position=(walls[0], walls[2]))
    spec = SceneSpec(tuple(sources), room, array, sample_rate, duration, rng_seed, loop=True)

    levels = _draw_gains(spec, rng, max_gain_attempts)
    return replace(spec, sources=tuple(replace(s, gain=float(g)) for s, g in zip(spec.sources, levels)))


def _draw_gains(spec: SceneSpec, rng, attempts: int) -> np.ndarray:
    images = [source_image(s, spec, mics=[0])[0] for s in spec.sources]
    # normalize each source to mic-0 RMS 0.05 before drawing relative levels
    base = np.array([0.05 / (np.sqrt(np.mean(im * im)) + 1e-12) for im in images])
    fg = [i for i, s in enumerate(spec.sources) if s.kind == FOREGROUND]
    if len(spec.sources) < 2:
        return base * 10 ** (rng.uniform(-6.0, 0.0) / 20.0)
    lo, hi = SI_SDR_RANGE
    best, best_violation = None, np.inf
    for _ in range(attempts):
        db = np.array([rng.uniform(-8.0, 0.0) if s.kind == FOREGROUND else rng.uniform(-4.0, 6.0)
                       for s in spec.sources])
        gains = base * 10 ** (db / 20.0)
        scaled = [g * im for g, im in zip(gains, images)]
        x = np.sum(scaled, axis=0)
        sdr = np.array([_si_sdr(x, scaled[i]) for i in fg])
        violation = float(np.sum(np.maximum(sdr - hi, 0) + np.maximum(lo - sdr, 0)))
        if violation < best_violation:
            best, best_violation = gains, violation
        if violation == 0.0:
            break
    return best


def input_si_sdrs(scene: RenderedScene) -> list[float]:
    """Mic-0 SI-SDR of the mixture against each foreground stem."""
    x = scene.mixture.data[0]
    return [_si_sdr(x, scene.stems[i].data[0]) for i in scene.foreground]


# ---------------------------------------------------------------------------
# dataset I/O
# ---------------------------------------------------------------------------


def _atomic_write_text(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def scene_metadata(spec: SceneSpec, stem_files: list[str], array_preset: str) -> dict:
    return {
        "sources": [
            {
                "azimuth_deg": s.azimuth,
                "distance_m": s.distance,
                "kind": s.kind,
                "gain": s.gain,
                "stem_file": f,
                "catalog_stem": s.name,
                "offset": s.offset,
            }
            for s, f in zip(spec.sources, stem_files)
        ],
        "room": spec.room.to_json(),
        "array_preset": array_preset,
        "array": spec.array.to_json(),
        "sample_rate": spec.sample_rate,
        "duration_s": spec.duration,
        "seed": spec.rng_seed,
    }


def write_scene(scene: RenderedScene, directory: Path, array_preset: str) -> dict:
    directory.mkdir(parents=True, exist_ok=True)
    write_wav(directory / "mixture.wav", scene.mixture)
    files = []
    for i, stem in enumerate(scene.stems):
        name = f"stem_{i}.wav"
        write_wav(directory / name, stem)
        files.append(name)
    meta = scene_metadata(scene.spec, files, array_preset)
    _atomic_write_text(directory / "metadata.json", json.dumps(meta, indent=2, sort_keys=True))
    return meta


def load_scene(metadata_path: str | Path) -> RenderedScene:
    """Rebuild a RenderedScene from ``metadata.json`` and its WAVs (dry stems are not stored)."""
    path = Path(metadata_path)
    meta = json.loads(path.read_text())
    root = path.parent
    mixture = read_wav(root / "mixture.wav")
    stems = tuple(read_wav(root / s["stem_file"]) for s in meta["sources"])
    info = tuple({"azimuth": s["azimuth_deg"], "distance": s["distance_m"], "kind": s["kind"],
                  "gain": s["gain"], "name": s.get("catalog_stem", "")} for s in meta["sources"])
    return RenderedScene(mixture, stems, info, None)


def scene_array(metadata_path: str | Path) -> MicArray:
    meta = json.loads(Path(metadata_path).read_text())
    if "array" in meta:
        return MicArray(np.asarray(meta["array"]["positions"]), meta["array"].get("speed_of_sound", 343.0),
                        name=meta.get("array_preset", "custom"))
    return load_array(meta["array_preset"])


def scene_seed(rng_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([rng_seed, index]).generate_state(1)[0])


def generate_dataset(
    catalog: StemCatalog,
    count: int,
    n_voices_range: tuple[int, int],
    out_dir: str | Path,
    sample_rate: float = 44100.0,
    rng_seed: int = 0,
    with_background: bool = True,
    array: MicArray | None = None,
    array_preset: str = "paper6",
    duration: float = 3.0,
    workers: int = 1,
    min_separation: float = 0.0,
) -> dict:
    """Render ``count`` scenes into ``out_dir/scene_XXXXX`` and write ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    array = array or load_array(array_preset)
    lo, hi = n_voices_range
    if lo < 1 or hi < lo:
        raise ValueError(f"invalid voice-count range {n_voices_range}")
    rng = np.random.default_rng(rng_seed)
    plan = [(i, int(rng.integers(lo, hi + 1))) for i in range(count)]

    def build(item):
        i, n = item
        try:
            spec = sample_scene(catalog, n, with_background, scene_seed(rng_seed, i), sample_rate, duration,
                                array, min_separation=min_separation)
            scene = render_scene(spec)
            d = out / f"scene_{i:05d}"
            write_scene(scene, d, array_preset)
        except Exception as exc:
            raise RuntimeError(f"scene {i}: {exc}") from exc
        return {"index": i, "dir": d.name, "mixture": f"{d.name}/mixture.wav",
                "metadata": f"{d.name}/metadata.json", "n_voices": n}

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            entries = list(pool.map(build, plan))
    else:
        entries = [build(p) for p in plan]
    manifest = {
        "count": count,
        "sample_rate": sample_rate,
        "duration_s": duration,
        "array_preset": array_preset,
        "seed": rng_seed,
        "with_background": with_background,
        "n_voices_range": [lo, hi],
        "scenes": entries,
    }
    _atomic_write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
    log.info("wrote %d scenes to %s", count, out)
    return manifest
