"""Command-line operator surface.

Subcommands: simulate | track | eval | bench | repr. All outputs are
deterministic from (config, seed) except bench timings. Exit codes:
0 success, 2 config error, 3 data error, 4 contract violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import arrayio
from .config import RunConfig, load_run_config
from .errors import ConfigError, ContractError, DataError, TapfuseError
from .events import (
    EventStream,
    bin_events,
    exposure_window_events,
    parse_event_stream,
    serialize_event_stream,
)
from .fusion import taf_init, taf_update
from .metrics import EvalPair, evaluate
from .representations import REPRESENTATIONS
from .synth import render_intensity_video, simulate_events
from .tracker import QueryPoint, parse_track_set, serialize_track_set, track_sequence
from .weights import WeightBundle, load_weights, save_weights


def thread_cap() -> int:
    """Internal-parallelism cap from TAPFUSE_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("TAPFUSE_THREADS", "1")))
    except ValueError:
        return 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def _write(path: Path, data: bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def cmd_simulate(config: RunConfig, out_dir: Path, fmt: str = "evbin") -> dict:
    """Render a seeded scene, simulate events, write video/stream/tracks,
    and print a one-line manifest of output hashes."""
    rng = np.random.default_rng(config.seed)
    scene = config.scene_config(rng)
    timeline = config.timeline()
    video, gt = render_intensity_video(scene, query_times=timeline.query_times)
    stream = simulate_events(video, config.sim_contrast)

    video_path = out_dir / "video.tns"
    stream_path = out_dir / f"events.{fmt}"
    tracks_path = out_dir / "tracks.txt"
    _write(video_path, arrayio.write_array(video.frames))
    _write(stream_path, serialize_event_stream(stream, fmt))
    from .tracker import TrackSet
    gt_tracks = TrackSet(times=gt.times, positions=gt.positions,
                         visibility=gt.visibility)
    _write(tracks_path, serialize_track_set(gt_tracks))
    manifest = {
        "video": _sha256(video_path),
        "events": _sha256(stream_path),
        "tracks": _sha256(tracks_path),
    }
    print("simulate " + " ".join(f"{k}={v}" for k, v in manifest.items()))
    return manifest


def _load_stream(path: Path) -> EventStream:
    fmt = "evbin" if path.suffix == ".evbin" else "csv"
    return parse_event_stream(path.read_bytes(), fmt)


def cmd_track(config: RunConfig, stream_path: Path, frames_path: Path,
              weights_path: Path | None, queries: list[QueryPoint],
              out_path: Path) -> Path:
    """Track queries through a stored sequence and write the track file."""
    stream = _load_stream(stream_path)
    video = arrayio.read_array(frames_path.read_bytes())
    if video.ndim != 3:
        raise DataError(f"frames container must be rank 3, got {video.ndim}")
    timeline = config.timeline()
    # map the rendered-video grid (scene.fps) onto the timeline
    fv = config.scene_fps / config.timeline_query_hz
    if abs(fv - round(fv)) > 1e-9 or round(fv) < 1:
        raise ConfigError("scene.fps must be an integer multiple of query_hz")
    fv = round(fv)
    frame_stride = round(config.timeline_query_hz / config.timeline_frame_hz)
    frame_idx = [qi * fv for qi in range(0, len(timeline.query_times), frame_stride)]
    if frame_idx[-1] >= len(video):
        raise DataError("frames container shorter than the timeline")
    frames = video[frame_idx]

    if weights_path is not None:
        weights = load_weights(weights_path.read_bytes(),
                               config.fusion_config(), config.seed)
    else:
        weights = WeightBundle.initialize(config.fusion_config(), config.seed)
    tracks = track_sequence(frames, list(timeline.frame_times), stream,
                            timeline, queries, weights)
    _write(out_path, serialize_track_set(tracks))
    return out_path


def cmd_eval(pred_path: Path, ref_path: Path, image_height: int,
             thresholds: tuple[float, ...], err_threshold: float,
             out_dir: Path) -> dict:
    """Evaluate a prediction against a reference; write JSON and CSV."""
    pred = parse_track_set(pred_path.read_bytes())
    ref = parse_track_set(ref_path.read_bytes())
    pair = EvalPair(predicted=pred, reference=ref, image_height=image_height)
    report = evaluate(pair, thresholds, err_threshold)
    _write(out_dir / "metrics.json", report.to_json().encode())
    _write(out_dir / "metrics.csv", report.to_csv().encode())
    print(report.to_json())
    return json.loads(report.to_json())


def cmd_bench(config: RunConfig) -> dict:
    """Throughput smoke benchmark on synthetic events."""
    rng = np.random.default_rng(config.seed)
    n = config.bench_n_events
    w, h = config.scene_width, config.scene_height
    span = 1_000_000
    stream = EventStream(
        t=np.sort(rng.integers(0, span + 1, size=n)).astype(np.uint64),
        x=rng.integers(0, w, size=n).astype(np.uint16),
        y=rng.integers(0, h, size=n).astype(np.uint16),
        p=rng.choice(np.array([-1, 1], dtype=np.int8), size=n),
        width=w, height=h, t_start=0, t_end=span)
    blob = serialize_event_stream(stream, "evbin")

    t0 = time.perf_counter()
    stream = parse_event_stream(blob, "evbin")
    parse_s = time.perf_counter() - t0

    timeline = config.timeline()
    t0 = time.perf_counter()
    batches = bin_events(stream, timeline)
    bin_s = time.perf_counter() - t0

    big = max(batches, key=len)
    repr_s = {}
    for kind, fn in REPRESENTATIONS.items():
        t0 = time.perf_counter()
        fn(big, w, h, config.model_subwindows)
        repr_s[kind] = time.perf_counter() - t0

    weights = WeightBundle.initialize(config.fusion_config(), config.seed)
    frame = np.ones((h, w))
    t0f = int(timeline.frame_times[0])
    exposure = exposure_window_events(stream, t0f, timeline.exposure_us)
    state = taf_init(frame, t0f, exposure, weights)
    n_steps = min(20, len(batches) - 1)
    t0 = time.perf_counter()
    for k in range(1, n_steps + 1):
        state = taf_update(state, batches[k], weights)
    taf_s = time.perf_counter() - t0

    report = {
        "events_per_s": {
            "parse": n / max(parse_s, 1e-12),
            "bin": n / max(bin_s, 1e-12),
            "time_surface": len(big) / max(repr_s["time_surface"], 1e-12),
            "count_image": len(big) / max(repr_s["count_image"], 1e-12),
            "voxel_grid": len(big) / max(repr_s["voxel_grid"], 1e-12),
        },
        "steps_per_s": {"taf_update": n_steps / max(taf_s, 1e-12)},
        "n_events": n,
        "threads": thread_cap(),
    }
    print(json.dumps(report, indent=2))
    return report


def cmd_repr(config: RunConfig, stream_path: Path, bin_index: int, kind: str,
             out_path: Path) -> Path:
    """Dump one bin's event tensor to the array container."""
    if kind not in REPRESENTATIONS:
        raise ConfigError(f"unknown representation {kind!r}")
    stream = _load_stream(stream_path)
    timeline = config.timeline()
    batches = bin_events(stream, timeline)
    if not 0 <= bin_index < len(batches):
        raise DataError(f"bin index {bin_index} out of range 0..{len(batches) - 1}")
    tensor = REPRESENTATIONS[kind](batches[bin_index], stream.width,
                                   stream.height, config.model_subwindows)
    _write(out_path, arrayio.write_array(tensor.data))
    return out_path


def _parse_query(text: str) -> QueryPoint:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"query must be t_us,x,y: {text!r}")
    return QueryPoint(t_q=int(parts[0]), x=float(parts[1]), y=float(parts[2]))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="tapfuse")
    ap.add_argument("--config", type=Path, help="flat-text config file")
    ap.add_argument("--seed", type=int, help="override config seed")
    ap.add_argument("--out", type=Path, default=Path("out"), help="output dir")
    ap.add_argument("--format", choices=["csv", "evbin"], default="evbin")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate")
    p_track = sub.add_parser("track")
    p_track.add_argument("--stream", type=Path, required=True)
    p_track.add_argument("--frames", type=Path, required=True)
    p_track.add_argument("--weights", type=Path)
    p_track.add_argument("--query", action="append", default=[],
                         metavar="T,X,Y", help="repeatable query point")
    p_eval = sub.add_parser("eval")
    p_eval.add_argument("--pred", type=Path, required=True)
    p_eval.add_argument("--ref", type=Path, required=True)
    p_eval.add_argument("--thresholds", default="1,2,4,8,16")
    p_eval.add_argument("--err-threshold", type=float, default=None)
    sub.add_parser("bench")
    p_repr = sub.add_parser("repr")
    p_repr.add_argument("--stream", type=Path, required=True)
    p_repr.add_argument("--bin", type=int, default=0)
    p_repr.add_argument("--kind", default="time_surface")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_run_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            config.seed = args.seed
        if args.command == "simulate":
            cmd_simulate(config, args.out, args.format)
        elif args.command == "track":
            queries = [_parse_query(q) for q in args.query]
            cmd_track(config, args.stream, args.frames, args.weights,
                      queries, args.out / "tracks.txt")
        elif args.command == "eval":
            thresholds = tuple(float(t) for t in args.thresholds.split(","))
            err_th = (args.err_threshold if args.err_threshold is not None
                      else config.eval_err_threshold)
            cmd_eval(args.pred, args.ref, config.scene_height, thresholds,
                     err_th, args.out)
        elif args.command == "bench":
            cmd_bench(config)
        elif args.command == "repr":
            cmd_repr(config, args.stream, args.bin, args.kind,
                     args.out / "tensor.tns")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (ContractError, TapfuseError) as exc:
        print(f"contract violation: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
