"""Command-line front end: render, separate, localize, track, evaluate, bench.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from .baselines import DoaGrid, music, srp_phat
from .dsp import Waveform, read_wav, write_wav
from .evaluation import bench_scene, make_separator, run_manifest, summarize_passes, load_manifest
from .geometry import MicArray, load_array
from .metrics import write_cdf_csv
from .room import generate_dataset, load_scene, scene_array
from .search import ConfigError, SearchConfig, separate_and_localize, track_moving
from .separation import MaskConfig, WindowLadder
from .synth import load_catalog, synthetic_catalog

log = logging.getLogger("conesep")

EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` file (``#`` comments); dotted keys map to underscores."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    cp.optionxform = str
    cp.read_string("[run]\n" + Path(path).read_text())
    out = {}
    for key, raw in cp["run"].items():
        value = raw.strip().strip('"').strip("'")
        out[key.replace(".", "_").replace("-", "_")] = value
    return out


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--array", default="paper6", help="paper6 | respeaker4 | file:<json>")
    p.add_argument("--sample-rate", type=float, default=44100.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--config", type=Path, help="flat key = value file; flags take precedence")
    p.add_argument("--verbose", action="store_true")


def _add_search(p: argparse.ArgumentParser) -> None:
    p.add_argument("--separator", choices=("oracle", "dsb_mask"), default="oracle")
    p.add_argument("--scene", type=Path, help="scene metadata.json (required for the oracle separator)")
    p.add_argument("--ladder", default="90,45,23,12,2")
    p.add_argument("--gate-rel", type=float, default=1e-3)
    p.add_argument("--gate-abs", type=float, default=1e-6, help="absolute floor per sample")
    p.add_argument("--nms-theta-eps", type=float, default=5.0)
    p.add_argument("--nms-signal-eps", type=float, default=0.1)
    p.add_argument("--max-sources", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--mask-rolloff-deg", type=float, default=10.0)
    p.add_argument("--mask-floor", type=float, default=0.01)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conesep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("render", help="generate a synthetic dataset")
    _add_shared(p)
    p.add_argument("--catalog", type=Path, help="stem catalog directory (default: procedural stems)")
    p.add_argument("--split", default=None, help="catalog split to draw from (train | test)")
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--voices", default="1-4", help="N or LO-HI")
    p.add_argument("--background", action="store_true")
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--min-separation", type=float, default=0.0)
    p.add_argument("--synthetic-voices", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("separate", help="separate and localize all sources")
    _add_shared(p)
    _add_search(p)
    p.add_argument("--input", type=Path, required=True)

    p = sub.add_parser("localize", help="localize sources")
    _add_shared(p)
    _add_search(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--method", choices=("cos", "srp_phat", "music"), default="cos")
    p.add_argument("--grid-resolution", type=float, default=2.0)
    p.add_argument("--n-sources", type=int)

    p = sub.add_parser("track", help="track moving sources chunk by chunk")
    _add_shared(p)
    _add_search(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--chunk-seconds", type=float, default=1.5)
    p.add_argument("--coarse-width", type=float, default=23.0)

    p = sub.add_parser("evaluate", help="score a method over a dataset manifest")
    _add_shared(p)
    _add_search(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--method", choices=("cos", "srp_phat", "music", "ibm", "irm"), default="cos")
    p.add_argument("--grid-resolution", type=float, default=2.0)
    p.add_argument("--tolerance", type=float, default=15.0)
    p.add_argument("--limit", type=int)
    p.add_argument("--cdf-max", type=float, default=180.0)
    p.add_argument("--cdf-step", type=float, default=1.0)

    p = sub.add_parser("bench", help="forward passes and wall time: binary search vs linear sweep")
    _add_shared(p)
    _add_search(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--resolution", type=float, default=2.0)
    p.add_argument("--limit", type=int)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config is not None:
        if not args.config.exists():
            parser.error(f"config file not found: {args.config}")
        values = read_config(args.config)
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in subparser._actions}
        unknown = sorted(set(values) - set(known))
        if unknown:
            parser.error(f"unknown config keys: {', '.join(unknown)}")
        typed = {}
        for k, v in values.items():
            act = known[k]
            if act.type is not None:
                v = act.type(v)
            elif isinstance(act.const, bool) or act.nargs == 0:
                v = v.lower() in ("1", "true", "yes", "on")
            typed[k] = v
        subparser.set_defaults(**typed)
        args = parser.parse_args(argv)
    return args


def _resolved(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())}


def search_config(args) -> SearchConfig:
    try:
        ladder = WindowLadder.parse(args.ladder)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    return SearchConfig(
        ladder=ladder,
        gate_rel=args.gate_rel,
        gate_abs_per_sample=args.gate_abs,
        nms_theta_eps=args.nms_theta_eps,
        nms_signal_eps=args.nms_signal_eps,
        max_sources=args.max_sources,
        workers=args.workers,
    )


def _array(args) -> MicArray:
    try:
        return load_array(args.array)
    except (ValueError, OSError, KeyError) as exc:
        raise UsageError(str(exc)) from exc


def _separator(args, array: MicArray, x: Waveform):
    scene = None
    if args.separator == "oracle":
        if args.scene is None:
            raise UsageError("--separator oracle requires --scene metadata.json")
        scene = load_scene(args.scene)
        if scene.mixture.data.shape != x.data.shape:
            raise ValueError("scene metadata does not match the input mixture")
    if x.channels != array.size:
        raise ValueError(f"input has {x.channels} channels but array {args.array} has {array.size} mics")
    return make_separator(args.separator, array, scene, MaskConfig(args.mask_rolloff_deg, args.mask_floor))


def cmd_render(args) -> dict:
    lo, _, hi = str(args.voices).partition("-")
    try:
        rng = (int(lo), int(hi or lo))
    except ValueError as exc:
        raise UsageError(f"bad --voices {args.voices!r}") from exc
    if args.sample_rate not in (44100.0, 16000.0):
        log.warning("sample rate %g is outside the tested set {44100, 16000}", args.sample_rate)
    array = _array(args)
    if args.catalog is not None:
        catalog = load_catalog(args.catalog, args.split, args.sample_rate)
    else:
        catalog = synthetic_catalog(max(args.synthetic_voices, rng[1]), 4, args.sample_rate,
                                    args.duration + 1.0, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(args.out / "config.json", _resolved(args))
    manifest = generate_dataset(catalog, args.count, rng, args.out, args.sample_rate, args.seed,
                                args.background, array, str(args.array), args.duration, args.workers,
                                args.min_separation)
    return {"count": manifest["count"], "manifest": str(args.out / "manifest.json")}


def cmd_separate(args) -> dict:
    array = _array(args)
    x = read_wav(args.input)
    sep = _separator(args, array, x)
    found, trace = separate_and_localize(x, array, sep, search_config(args))
    args.out.mkdir(parents=True, exist_ok=True)
    sources = []
    for k, c in enumerate(found):
        name = f"source_{k}.wav"
        write_wav(args.out / name, c.waveform)
        sources.append({"azimuth_deg": c.azimuth, "energy": c.energy, "file": name})
    summary = {"sources": sources, "passes": trace.total_passes}
    write_json(args.out / "config.json", _resolved(args))
    write_json(args.out / "trace.json", trace.to_json())
    write_json(args.out / "summary.json", summary)
    return summary


def cmd_localize(args) -> dict:
    array = _array(args)
    x = read_wav(args.input)
    if args.method == "cos":
        sep = _separator(args, array, x)
        found, trace = separate_and_localize(x, array, sep, search_config(args))
        if args.n_sources:
            found = found[: args.n_sources]
        result = {"method": "cos", "azimuths_deg": [c.azimuth for c in found], "passes": trace.total_passes}
    else:
        if x.channels != array.size:
            raise ValueError(f"input has {x.channels} channels but array has {array.size} mics")
        grid = DoaGrid.uniform(array, args.grid_resolution, x.sample_rate)
        n = args.n_sources or 1
        fn = srp_phat if args.method == "srp_phat" else music
        result = {"method": args.method, "azimuths_deg": fn(x, array, grid, n)}
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(args.out / "config.json", _resolved(args))
    write_json(args.out / "localization.json", result)
    return result


def cmd_track(args) -> dict:
    array = _array(args)
    x = read_wav(args.input)
    sep = _separator(args, array, x)
    try:
        tracks, bounds = track_moving(x, array, sep, search_config(args), args.chunk_seconds, args.coarse_width)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    args.out.mkdir(parents=True, exist_ok=True)
    out = []
    for k, t in enumerate(tracks):
        name = f"track_{k}.wav"
        write_wav(args.out / name, t.waveform(bounds, x.channels, x.sample_rate))
        out.append({"file": name, "chunks": list(t.chunks), "azimuths_deg": [c.azimuth for c in t.candidates]})
    result = {"tracks": out, "chunk_bounds": bounds}
    write_json(args.out / "config.json", _resolved(args))
    write_json(args.out / "tracks.json", result)
    return result


def cmd_evaluate(args) -> dict:
    report = run_manifest(args.manifest, args.method, args.separator, search_config(args), args.grid_resolution,
                          args.tolerance, MaskConfig(args.mask_rolloff_deg, args.mask_floor), args.limit)
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(args.out / "config.json", _resolved(args))
    write_json(args.out / "report.json", report.to_json())
    n = int(round(args.cdf_max / args.cdf_step))
    grid = [args.cdf_step * i for i in range(n + 1)]
    if report.angular_errors:
        write_cdf_csv(args.out / "cdf.csv", report.angular_errors, grid)
    return report.aggregate()


def cmd_bench(args) -> dict:
    manifest, root = load_manifest(args.manifest)
    config = search_config(args)
    rows = []
    for entry in manifest["scenes"][: args.limit]:
        meta = root / entry["metadata"]
        scene = load_scene(meta)
        array = scene_array(meta)
        sep = make_separator(args.separator, array, scene, MaskConfig(args.mask_rolloff_deg, args.mask_floor))
        row = bench_scene(scene, array, sep, config, args.resolution)
        row["scene"] = entry.get("dir")
        rows.append(row)
    summary = summarize_passes(rows)
    args.out.mkdir(parents=True, exist_ok=True)
    write_json(args.out / "config.json", _resolved(args))
    write_json(args.out / "bench.json", {"summary": summary, "scenes": rows})
    fields = ["scene", "n_voices", "binary_passes", "sweep_passes", "binary_seconds", "sweep_seconds",
              "seconds_per_pass", "binary_sources", "sweep_sources"]
    tmp = args.out / "bench.csv.tmp"
    with open(tmp, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in fields})
    os.replace(tmp, args.out / "bench.csv")
    return summary


COMMANDS = {
    "render": cmd_render,
    "separate": cmd_separate,
    "localize": cmd_localize,
    "track": cmd_track,
    "evaluate": cmd_evaluate,
    "bench": cmd_bench,
}


def main(argv=None) -> int:
    args = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"conesep {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"conesep {args.command}: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(result, indent=2, sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
