"""Per-clip curation pipeline, batch runner and aggregate statistics."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .assignment import LayerStack, decompose_reference, motion_based_assignment
from .config import ClipManifest, PipelineConfig
from .controls import (
    Track,
    encode_motion_score,
    filter_tracks,
    mask_sketch,
    rasterize_trajectories,
    sample_tracks,
    tracks_by_layer,
)
from .exceptions import GeometryError, LayerCurateError, ProviderError
from .formats import (
    TensorBundle,
    read_lafl,
    read_lamk,
    read_latk,
    write_atomic,
    write_latb,
)
from .imageio import read_gray, read_rgb
from .masks import ClipGeometry, MaskSet, PixelMask
from .merge import Layer, flow_magnitude, hierarchical_merge, masklet_motion_score
from .sampler import ControlAssignment, layer_rng, sample_controls
from .segmentation import (
    LookupPropagationProvider,
    LookupSegmentationProvider,
    Masklet,
    curate_masklets,
    unassigned_pixels,
)
from .validation import check_flow, check_sketch

log = logging.getLogger(__name__)

TRACK_STREAM = 1


class StageError(LayerCurateError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


@dataclass
class ClipInputs:
    clip: ClipManifest
    geometry: ClipGeometry
    segmentation: LookupSegmentationProvider
    propagation: LookupPropagationProvider
    flow: np.ndarray
    tracks: list[Track]


def _check_resolution(clip: ClipManifest, cfg: PipelineConfig) -> None:
    if cfg.working_resolution is not None and (clip.width, clip.height) != tuple(cfg.working_resolution):
        raise GeometryError(
            f"clip {clip.clip_id} is {clip.width}x{clip.height}, working resolution is "
            f"{cfg.working_resolution[0]}x{cfg.working_resolution[1]}"
        )


def masklet_tracks_from_frames(frames: Sequence[MaskSet], geometry: ClipGeometry) -> dict[int, list[PixelMask]]:
    """Regroup per-frame mask sets (one per frame 0..F-1) into per-element tracks."""
    by_frame = {s.frame_index: s for s in frames}
    if len(by_frame) != len(frames) or sorted(by_frame) != list(range(geometry.frame_count)):
        raise ProviderError(f"masklet file must hold frames 0..{geometry.frame_count - 1} exactly once")
    empty = PixelMask.empty(geometry.height, geometry.width)
    ids = sorted({eid for s in frames for eid in s.ids})
    tracks = {eid: [empty] * geometry.frame_count for eid in ids}
    for t, s in by_frame.items():
        for eid, m in s:
            tracks[eid][t] = m
    return tracks


def load_inputs(clip: ClipManifest, cfg: PipelineConfig) -> ClipInputs:
    geometry = clip.geometry
    with stage("load"):
        _check_resolution(clip, cfg)
        h, w, seg_sets = read_lamk(clip.masks)
        if (h, w) != geometry.shape:
            raise GeometryError(f"mask file geometry {h}x{w} != clip {geometry.shape}")
        seg_by_frame = {s.frame_index: s for s in seg_sets}
        if len(seg_by_frame) != len(seg_sets):
            raise ProviderError("mask file repeats a frame index")
        h, w, masklet_sets = read_lamk(clip.masklets)
        if (h, w) != geometry.shape:
            raise GeometryError(f"masklet file geometry {h}x{w} != clip {geometry.shape}")
        prop = LookupPropagationProvider(masklet_tracks_from_frames(masklet_sets, geometry))
        flow = check_flow(read_lafl(clip.flow), geometry)
        frame_count, tracks = read_latk(clip.tracks)
        if frame_count != geometry.frame_count:
            raise GeometryError(f"track file has {frame_count} frames, clip has {geometry.frame_count}")
    return ClipInputs(clip, geometry, LookupSegmentationProvider(seg_by_frame), prop, flow, tracks)


def curate(inputs: ClipInputs, cfg: PipelineConfig) -> list[Masklet]:
    with stage("curate"):
        return curate_masklets(
            inputs.geometry, inputs.segmentation, inputs.propagation, cfg.tau_new, cfg.key_interval, cfg.min_area
        )


def score_masklets(masklets: Sequence[Masklet], flow: np.ndarray) -> tuple[list[Masklet], list[float], list[int]]:
    """Score every masklet; masklets with no pixels in any flow frame are skipped."""
    magnitude = flow_magnitude(flow)
    kept, scores, skipped = [], [], []
    for m in masklets:
        if all(m.masks[t].area == 0 for t in range(m.frame_count - 1)):
            skipped.append(m.element_id)
            continue
        kept.append(m)
        scores.append(masklet_motion_score(m, flow, magnitude=magnitude))
    return kept, scores, skipped


def merge(inputs: ClipInputs, masklets: Sequence[Masklet], cfg: PipelineConfig):
    with stage("merge"):
        kept, scores, skipped = score_masklets(masklets, inputs.flow)
        if not kept:
            raise ProviderError("no masklet overlaps any flow frame")
        layers = hierarchical_merge(kept, scores, cfg.merge_config())
    return kept, scores, skipped, layers


def assign(clip: ClipManifest, layers: Sequence[Layer], cfg: PipelineConfig) -> LayerStack:
    with stage("assign"):
        first = read_rgb(clip.frames[0])
        regions = decompose_reference(first, layers, frame=0)
        last_regions = None
        if cfg.mode == "interpolation":
            last = read_rgb(clip.frames[-1])
            last_regions = decompose_reference(last, layers, frame=clip.frame_count - 1)
        return motion_based_assignment(layers, regions, cfg.capacity, cfg.mode, last_regions)


def load_sketch(clip: ClipManifest) -> np.ndarray | None:
    if clip.sketches is None:
        return None
    return check_sketch(np.stack([read_gray(p) for p in clip.sketches]), clip.geometry)


def _layer_meta(layers: Sequence[Layer]) -> list[dict]:
    return [
        {
            "layer_id": layer.layer_id,
            "members": list(layer.members),
            "raw_score": layer.score.raw,
            "normalized_score": layer.score.normalized,
            "motion_class": layer.motion_class,
        }
        for layer in layers
    ]


def build_bundle(clip: ClipManifest, cfg: PipelineConfig) -> TensorBundle:
    """Run every stage for one clip and assemble its tensor bundle."""
    inputs = load_inputs(clip, cfg)
    geometry = inputs.geometry
    masklets = curate(inputs, cfg)
    kept, _, skipped, layers = merge(inputs, masklets, cfg)
    stack = assign(clip, layers, cfg)

    with stage("controls"):
        filtered = filter_tracks(inputs.tracks, kept, geometry, cfg.min_overlap)
        layer_tracks = tracks_by_layer(filtered, layers)
        n_kept = sum(len(v) for v in filtered.values())
        assignment = sample_controls(
            len(layers),
            cfg.sampler_config(),
            clip_id=clip.clip_id,
            capacity=cfg.capacity,
            sketch_available=clip.sketches is not None,
            trajectory_available=[len(t) > 0 for t in layer_tracks],
        )
        bundle = TensorBundle()
        bundle.add("layer_masks", stack.masks)
        bundle.add("layer_regions", stack.regions)
        bundle.add("validity", stack.validity)
        bundle.add("control_valid", stack.validity & (assignment.codes != 0))
        bundle.add("scores", stack.scores)
        raw = np.zeros(cfg.capacity, dtype=np.float64)
        raw[: len(layers)] = [layer.raw_score for layer in layers]
        bundle.add("raw_scores", raw)
        bundle.add("static", stack.static)
        bundle.add("controls", assignment.codes)

        sketch = None
        used_tracks = []
        for k, layer in enumerate(layers):
            choice = assignment.controls[k]
            if choice == "score":
                bundle.add(f"score_map/{k}", encode_motion_score(stack.masks[k], layer.raw_score, cfg.s_max))
            elif choice == "trajectory":
                chosen = layer_tracks[k]
                if cfg.track_sampling == "sample":
                    rng = layer_rng(cfg.seed, clip.clip_id, k, TRACK_STREAM)
                    chosen = sample_tracks(chosen, rng, cfg.max_sampled_tracks)
                used_tracks.append({"layer": k, "track_ids": [tr.track_id for tr in chosen]})
                bundle.add(f"trajectory_map/{k}", rasterize_trajectories(chosen, geometry, cfg.sigma))
            elif choice == "sketch":
                if sketch is None:
                    sketch = load_sketch(clip)
                bundle.add(f"sketch/{k}", mask_sketch(sketch, layer.masks)[:, None])

    n_tracks = len(inputs.tracks)
    bundle.meta = {
        "clip_id": clip.clip_id,
        "geometry": {"height": geometry.height, "width": geometry.width, "frame_count": geometry.frame_count},
        "mode": cfg.mode,
        "config_digest": cfg.digest(),
        "capacity": cfg.capacity,
        "layer_count": len(layers),
        "layers": _layer_meta(layers),
        "masklet_count": len(masklets),
        "first_appearance": {str(m.element_id): m.first_appearance_frame for m in masklets},
        "skipped_masklets": skipped,
        "unassigned_pixels": unassigned_pixels(masklets, geometry),
        "tracks": {
            "total": n_tracks,
            "kept": n_kept,
            "dropped_fraction": (1.0 - n_kept / n_tracks) if n_tracks else 0.0,
            "used": used_tracks,
        },
        "assignment": assignment.to_dict(),
    }
    return bundle


def bundle_path(out_dir, clip_id: str) -> Path:
    return Path(out_dir) / f"{clip_id}.latb"


def process_clip(clip: ClipManifest, cfg: PipelineConfig, out_dir) -> dict:
    """Build and write one clip's bundle; failures become a record, never an exception."""
    try:
        bundle = build_bundle(clip, cfg)
        path = bundle_path(out_dir, clip.clip_id)
        with stage("write"):
            write_latb(path, bundle)
        return {"clip_id": clip.clip_id, "status": "ok", "bundle": path.name, "meta": bundle.meta}
    except StageError as exc:
        log.warning("clip %s failed in %s: %s", clip.clip_id, exc.stage, exc.cause)
        return _failure(clip.clip_id, exc.stage, exc.cause)
    except Exception as exc:  # noqa: BLE001 - per-clip isolation
        log.warning("clip %s failed: %s", clip.clip_id, exc)
        return _failure(clip.clip_id, "unknown", exc)


def _failure(clip_id: str, stage_name: str, exc: BaseException) -> dict:
    return {
        "clip_id": clip_id,
        "status": "failed",
        "stage": stage_name,
        "error": type(exc).__name__,
        "message": str(exc),
    }


def run_batch(clips: Sequence[ClipManifest], cfg: PipelineConfig, out_dir, jobs: int = 1) -> dict:
    """Process clips on a worker pool and write ``report.json`` next to the bundles."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    work = partial(process_clip, cfg=cfg, out_dir=out_dir)
    if jobs > 1 and len(clips) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(clips))) as pool:
            records = list(pool.map(work, clips))
    else:
        records = [work(c) for c in clips]
    ok = [r["meta"] for r in records if r["status"] == "ok"]
    report = {
        "clips": [{k: v for k, v in r.items() if k != "meta"} for r in records],
        "ok": len(ok),
        "failed": len(records) - len(ok),
        "stats": stats(ok) if ok else None,
    }
    write_atomic(out_dir / "report.json", (json.dumps(report, indent=1, sort_keys=True) + "\n").encode())
    return report


def stats(bundles: Iterable[TensorBundle | dict]) -> dict:
    """Aggregate layer counts, motion classes, scores and track filtering."""
    metas = [b.meta if isinstance(b, TensorBundle) else b for b in bundles]
    if not metas:
        raise ValueError("stats needs at least one bundle")
    hist: dict[int, int] = {}
    n_static = n_dynamic = 0
    normalized = []
    total_tracks = kept_tracks = 0
    for meta in metas:
        hist[meta["layer_count"]] = hist.get(meta["layer_count"], 0) + 1
        for layer in meta["layers"]:
            if layer["motion_class"] == "static":
                n_static += 1
            else:
                n_dynamic += 1
            normalized.append(layer["normalized_score"])
        total_tracks += meta["tracks"]["total"]
        kept_tracks += meta["tracks"]["kept"]
    scores = np.asarray(normalized, dtype=np.float64)
    counts, _ = np.histogram(scores, bins=10, range=(0.0, 1.0))
    n_layers = n_static + n_dynamic
    return {
        "bundles": len(metas),
        "layer_count_histogram": {str(k): hist[k] for k in sorted(hist)},
        "static_layers": n_static,
        "dynamic_layers": n_dynamic,
        "static_fraction": n_static / n_layers if n_layers else math.nan,
        "score_distribution": {
            "count": int(scores.size),
            "min": float(scores.min()),
            "max": float(scores.max()),
            "mean": float(scores.mean()),
            "histogram": counts.tolist(),
        },
        "tracks_total": total_tracks,
        "tracks_kept": kept_tracks,
        "dropped_track_fraction": (1.0 - kept_tracks / total_tracks) if total_tracks else 0.0,
    }
