"""Command-line entry point: ``layercurate <verb> ...``.

Exit codes: 0 success, 1 global failure, 2 some clips failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .config import ClipManifest, PipelineConfig, load_manifest
from .controls import encode_motion_score, filter_tracks, mask_sketch, rasterize_trajectories, tracks_by_layer
from .exceptions import LayerCurateError
from .formats import TensorBundle, read_latb_meta, write_atomic, write_lamk, write_latb
from .masks import ClipGeometry, MaskSet
from .sampler import sample_controls
from .synth import synth_dataset

EXIT_OK, EXIT_GLOBAL, EXIT_PARTIAL = 0, 1, 2

log = logging.getLogger("layercurate")


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=d, help="pipeline config JSON")
    parser.add_argument("--seed", type=int, default=d, help="override the config seed")
    parser.add_argument("--jobs", type=int, default=argparse.SUPPRESS if suppress else 1, help="worker processes")
    parser.add_argument("--out", type=Path, default=d, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layercurate", description="Layer curation for animation clips.")
    parser.add_argument("-v", "--verbose", action="store_true")
    _global_flags(parser, suppress=False)
    common = argparse.ArgumentParser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write synthetic clips and a manifest")
    p.add_argument("--clips", type=int, default=10)
    p.add_argument("--height", type=int, default=320)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--frames", type=int, default=16)
    p.add_argument("--grid", type=int, default=60)

    for verb, text in [
        ("curate", "write curated masklets per clip"),
        ("merge", "write merged layers per clip"),
        ("assign", "write padded layer tensors per clip"),
        ("encode-controls", "write every control modality per layer"),
        ("run", "full pipeline: one bundle per clip"),
        ("validate", "check manifest structure and referenced files"),
    ]:
        p = sub.add_parser(verb, parents=[common], help=text)
        p.add_argument("manifest", type=Path)

    p = sub.add_parser("sample-controls", parents=[common], help="draw a control assignment")
    p.add_argument("--layers", type=int, required=True)
    p.add_argument("--capacity", type=int)
    p.add_argument("--clip-id", default="")

    p = sub.add_parser("stats", parents=[common], help="aggregate report over bundles")
    p.add_argument("bundles", nargs="+", type=Path, help="bundle files or directories")
    return parser


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _emit(doc, out: Path | None, name: str) -> None:
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        write_atomic(Path(out) / name, text.encode())


def _per_clip(clips: list[ClipManifest], fn) -> int:
    failed = 0
    for clip in clips:
        try:
            fn(clip)
        except LayerCurateError as exc:
            failed += 1
            print(json.dumps({"clip_id": clip.clip_id, "status": "failed", "error": str(exc)}), file=sys.stderr)
    if failed == 0:
        return EXIT_OK
    return EXIT_PARTIAL if failed < len(clips) else EXIT_GLOBAL


def _masklet_frames(masklets, geometry: ClipGeometry) -> list[MaskSet]:
    return [
        MaskSet(t, tuple((m.element_id, m.masks[t]) for m in masklets if m.masks[t].area))
        for t in range(geometry.frame_count)
    ]


def cmd_synth(args) -> int:
    out = args.out or Path("synthetic")
    seed = args.seed if args.seed is not None else 0
    geometry = ClipGeometry(args.height, args.width, args.frames)
    path, _ = synth_dataset(out, args.clips, seed=seed, geometry=geometry, grid=args.grid)
    print(path)
    return EXIT_OK


def cmd_curate(args, cfg, clips) -> int:
    out = args.out or Path(".")

    def one(clip):
        inputs = pipeline.load_inputs(clip, cfg)
        masklets = pipeline.curate(inputs, cfg)
        g = inputs.geometry
        write_lamk(out / clip.clip_id / "masklets.lamk", _masklet_frames(masklets, g), g.height, g.width)
        first = {str(m.element_id): m.first_appearance_frame for m in masklets}
        _emit({"clip_id": clip.clip_id, "first_appearance": first}, out / clip.clip_id, "masklets.json")

    return _per_clip(clips, one)


def cmd_merge(args, cfg, clips) -> int:
    out = args.out or Path(".")

    def one(clip):
        inputs = pipeline.load_inputs(clip, cfg)
        masklets = pipeline.curate(inputs, cfg)
        _, _, skipped, layers = pipeline.merge(inputs, masklets, cfg)
        g = inputs.geometry
        frames = [MaskSet(t, tuple((la.layer_id, la.masks[t]) for la in layers)) for t in range(g.frame_count)]
        write_lamk(out / clip.clip_id / "layers.lamk", frames, g.height, g.width)
        doc = {"clip_id": clip.clip_id, "layers": pipeline._layer_meta(layers), "skipped_masklets": skipped}
        _emit(doc, out / clip.clip_id, "layers.json")

    return _per_clip(clips, one)


def cmd_assign(args, cfg, clips) -> int:
    out = args.out or Path(".")

    def one(clip):
        inputs = pipeline.load_inputs(clip, cfg)
        masklets = pipeline.curate(inputs, cfg)
        _, _, _, layers = pipeline.merge(inputs, masklets, cfg)
        stack = pipeline.assign(clip, layers, cfg)
        bundle = TensorBundle(meta={"clip_id": clip.clip_id, "layers": pipeline._layer_meta(layers)})
        bundle.add("layer_masks", stack.masks)
        bundle.add("layer_regions", stack.regions)
        bundle.add("validity", stack.validity)
        bundle.add("scores", stack.scores)
        bundle.add("static", stack.static)
        write_latb(out / clip.clip_id / "stack.latb", bundle)

    return _per_clip(clips, one)


def cmd_encode_controls(args, cfg, clips) -> int:
    out = args.out or Path(".")

    def one(clip):
        inputs = pipeline.load_inputs(clip, cfg)
        masklets = pipeline.curate(inputs, cfg)
        kept, _, _, layers = pipeline.merge(inputs, masklets, cfg)
        stack = pipeline.assign(clip, layers, cfg)
        layer_tracks = tracks_by_layer(filter_tracks(inputs.tracks, kept, inputs.geometry, cfg.min_overlap), layers)
        sketch = pipeline.load_sketch(clip)
        bundle = TensorBundle(meta={"clip_id": clip.clip_id, "layers": pipeline._layer_meta(layers)})
        for k, layer in enumerate(layers):
            bundle.add(f"score_map/{k}", encode_motion_score(stack.masks[k], layer.raw_score, cfg.s_max))
            bundle.add(f"trajectory_map/{k}", rasterize_trajectories(layer_tracks[k], inputs.geometry, cfg.sigma))
            if sketch is not None:
                bundle.add(f"sketch/{k}", mask_sketch(sketch, layer.masks)[:, None])
        write_latb(out / clip.clip_id / "controls.latb", bundle)

    return _per_clip(clips, one)


def cmd_run(args, cfg, clips) -> int:
    out = args.out or Path("bundles")
    report = pipeline.run_batch(clips, cfg, out, jobs=args.jobs)
    print(json.dumps({"ok": report["ok"], "failed": report["failed"], "report": str(out / "report.json")}))
    if report["failed"] == 0:
        return EXIT_OK
    return EXIT_PARTIAL if report["ok"] > 0 else EXIT_GLOBAL


def cmd_validate(args, cfg, clips) -> int:
    from .imageio import read_rgb

    def one(clip):
        missing = [str(p) for p in clip.referenced_files() if not Path(p).is_file()]
        if missing:
            raise LayerCurateError(f"missing files: {missing[:5]}")
        g = clip.geometry
        pipeline.load_inputs(clip, cfg)
        img = read_rgb(clip.frames[0])
        if img.shape[:2] != g.shape:
            raise LayerCurateError(f"frame 0 is {img.shape[1]}x{img.shape[0]}, clip is {g.width}x{g.height}")
        print(json.dumps({"clip_id": clip.clip_id, "status": "ok"}))

    return _per_clip(clips, one)


def cmd_sample_controls(args, cfg) -> int:
    a = sample_controls(args.layers, cfg.sampler_config(), clip_id=args.clip_id, capacity=args.capacity)
    _emit(a.to_dict(), args.out, "assignment.json")
    return EXIT_OK


def cmd_stats(args) -> int:
    paths = []
    for p in args.bundles:
        paths.extend(sorted(p.glob("*.latb")) if p.is_dir() else [p])
    metas = [read_latb_meta(p) for p in paths]
    _emit(pipeline.stats(metas), args.out, "stats.json")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return cmd_synth(args)
        if args.command == "stats":
            return cmd_stats(args)
        cfg = _config(args)
        if args.command == "sample-controls":
            return cmd_sample_controls(args, cfg)
        clips = load_manifest(args.manifest)
        if not clips:
            raise LayerCurateError("manifest lists no clips")
        handler = {
            "curate": cmd_curate,
            "merge": cmd_merge,
            "assign": cmd_assign,
            "encode-controls": cmd_encode_controls,
            "run": cmd_run,
            "validate": cmd_validate,
        }[args.command]
        return handler(args, cfg, clips)
    except (LayerCurateError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GLOBAL


if __name__ == "__main__":
    sys.exit(main())
