"""Per-scene scoring of search, localization baselines and oracle masks, plus manifest runs."""

from __future__ import annotations

import json
import logging
import time
from pathlib import Path

import numpy as np

from .baselines import DoaGrid, closest_to_truth, music, oracle_ibm, oracle_irm, srp_phat
from .geometry import MicArray
from .metrics import EvalReport, SceneRecord, angular_error, match_permutation, precision_recall, si_sdr
from .room import BACKGROUND, RenderedScene, load_scene, scene_array
from .search import SearchConfig, linear_sweep, separate_and_localize
from .separation import DSBMaskSeparator, MaskConfig, OracleSeparator

log = logging.getLogger(__name__)

LOCALIZERS = ("srp_phat", "music")
MASKS = ("ibm", "irm")


def make_separator(kind: str, array: MicArray, scene: RenderedScene | None = None, mask: MaskConfig | None = None):
    if kind == "oracle":
        if scene is None:
            raise ValueError("the oracle separator needs scene metadata")
        return OracleSeparator(scene, array)
    if kind == "dsb_mask":
        return DSBMaskSeparator(array, mask)
    raise ValueError(f"unknown separator {kind!r}")


def evaluate_search(scene: RenderedScene, array: MicArray, separator, config: SearchConfig | None = None,
                    tolerance: float = 15.0, name: str = "") -> tuple[SceneRecord, dict]:
    """Run the search on one scene and score it.

    Localization uses the top-N (by energy) outputs matched by angular error; separation uses the
    same top-N matched by negative SI-SDR. Precision/recall use every output.
    """
    t0 = time.perf_counter()
    found, trace = separate_and_localize(scene.mixture, array, separator, config)
    elapsed = time.perf_counter() - t0
    fg = scene.foreground
    truths = [scene.meta[i]["azimuth"] for i in fg]
    est = [c.azimuth for c in found]
    rec = SceneRecord(name, len(truths), len(est))
    rec.precision, rec.recall = precision_recall(est, truths, tolerance)
    top = found[: len(truths)]
    pairs, _ = match_permutation([c.azimuth for c in top], truths, "angular")
    rec.angular_errors = [angular_error(top[i].azimuth, truths[j]) for i, j in pairs]
    refs = [scene.stems[i] for i in fg]
    spairs, _ = match_permutation([c.waveform for c in top], refs, "signal")
    rec.permutation = [(int(i), int(j)) for i, j in spairs]
    for i, j in spairs:
        rec.si_sdr_in.append(si_sdr(scene.mixture, refs[j]))
        rec.si_sdr_out.append(si_sdr(top[i].waveform, refs[j]))
    return rec, {"passes": trace.total_passes, "seconds": elapsed, "trace": trace}


def evaluate_localizer(scene: RenderedScene, array: MicArray, method: str, resolution: float = 2.0,
                       tolerance: float = 15.0, name: str = "") -> SceneRecord:
    """Learning-free localizers: with a background present, localize N+1 and keep the N closest."""
    fg = scene.foreground
    truths = [scene.meta[i]["azimuth"] for i in fg]
    has_bg = any(m["kind"] == BACKGROUND for m in scene.meta)
    grid = DoaGrid.uniform(array, resolution, scene.mixture.sample_rate)
    n = len(truths) + int(has_bg)
    if method == "srp_phat":
        est = srp_phat(scene.mixture, array, grid, n)
    elif method == "music":
        est = music(scene.mixture, array, grid, min(n, array.size - 1))
    else:
        raise ValueError(f"unknown localizer {method!r}")
    if has_bg:
        est = closest_to_truth(est, truths)
    rec = SceneRecord(name, len(truths), len(est))
    rec.precision, rec.recall = precision_recall(est, truths, tolerance)
    pairs, _ = match_permutation(est, truths, "angular")
    rec.permutation = [(int(i), int(j)) for i, j in pairs]
    rec.angular_errors = [angular_error(est[i], truths[j]) for i, j in pairs]
    return rec


def evaluate_masks(scene: RenderedScene, kind: str, fft_size: int = 1024, hop_size: int = 256,
                   name: str = "") -> SceneRecord:
    fn = {"ibm": oracle_ibm, "irm": oracle_irm}[kind]
    outs = fn(scene.mixture, scene.stems, fft_size, hop_size)
    fg = scene.foreground
    rec = SceneRecord(name, len(fg), len(fg))
    for i in fg:
        rec.si_sdr_in.append(si_sdr(scene.mixture, scene.stems[i]))
        rec.si_sdr_out.append(si_sdr(outs[i], scene.stems[i]))
        rec.permutation.append((i, i))
    return rec


def load_manifest(path: str | Path) -> tuple[dict, Path]:
    path = Path(path)
    manifest = json.loads(path.read_text())
    if not manifest.get("scenes"):
        raise ValueError(f"manifest {path} lists no scenes")
    return manifest, path.parent


def run_manifest(manifest_path, method: str, separator: str = "oracle", config: SearchConfig | None = None,
                 resolution: float = 2.0, tolerance: float = 15.0, mask: MaskConfig | None = None,
                 limit: int | None = None) -> EvalReport:
    """Score ``method`` (cos | srp_phat | music | ibm | irm) on every scene; failures are recorded per scene."""
    manifest, root = load_manifest(manifest_path)
    label = f"cos:{separator}" if method == "cos" else method
    report = EvalReport(label, tolerance=tolerance)
    for entry in manifest["scenes"][:limit]:
        name = entry.get("dir", str(entry.get("index")))
        try:
            meta_path = root / entry["metadata"]
            scene = load_scene(meta_path)
            array = scene_array(meta_path)
            if method == "cos":
                sep = make_separator(separator, array, scene, mask)
                rec, _ = evaluate_search(scene, array, sep, config, tolerance, name)
            elif method in LOCALIZERS:
                rec = evaluate_localizer(scene, array, method, resolution, tolerance, name)
            elif method in MASKS:
                rec = evaluate_masks(scene, method, name=name)
            else:
                raise ValueError(f"unknown method {method!r}")
        except (OSError, ValueError, KeyError) as exc:
            log.warning("scene %s failed: %s", name, exc)
            rec = SceneRecord(name, 0, 0, error=str(exc))
        report.add(rec)
    return report


def bench_scene(scene: RenderedScene, array: MicArray, separator, config: SearchConfig | None = None,
                resolution: float = 2.0) -> dict:
    """Forward passes and wall time per pass for binary search vs a linear sweep."""
    t0 = time.perf_counter()
    found, trace = separate_and_localize(scene.mixture, array, separator, config)
    t_bs = time.perf_counter() - t0
    t0 = time.perf_counter()
    swept, sweep_passes = linear_sweep(scene.mixture, array, separator, resolution, config=config)
    t_lin = time.perf_counter() - t0
    return {
        "binary_passes": trace.total_passes,
        "sweep_passes": sweep_passes,
        "binary_seconds": t_bs,
        "sweep_seconds": t_lin,
        "seconds_per_pass": (t_bs + t_lin) / (trace.total_passes + sweep_passes),
        "binary_sources": len(found),
        "sweep_sources": len(swept),
        "n_voices": len(scene.foreground),
    }


def summarize_passes(rows: list[dict]) -> dict:
    b = np.array([r["binary_passes"] for r in rows], dtype=float)
    s = np.array([r["sweep_passes"] for r in rows], dtype=float)
    return {
        "scenes": len(rows),
        "mean_binary_passes": float(b.mean()) if b.size else None,
        "max_binary_passes": float(b.max()) if b.size else None,
        "mean_sweep_passes": float(s.mean()) if s.size else None,
        "mean_seconds_per_pass": float(np.mean([r["seconds_per_pass"] for r in rows])) if rows else None,
    }
