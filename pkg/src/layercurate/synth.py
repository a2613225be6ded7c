"""Procedural clips with exact ground truth for masks, flow, tracks and layers.

Shapes are hard-edged and move with constant integer velocity, so every
ground-truth quantity is known exactly. Later objects occlude earlier ones
and all masks describe visible pixels only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .controls import Track, pixel_index, seed_grid
from .masks import ClipGeometry, MaskSet, PixelMask
from .segmentation import LookupPropagationProvider, LookupSegmentationProvider

BACKGROUND = -1


@dataclass(frozen=True)
class SceneObject:
    shape: Literal["rect", "circle"]
    color: tuple[int, int, int]
    position: tuple[int, int]
    size: tuple[int, int]
    velocity: tuple[int, int] = (0, 0)
    appear_frame: int = 0
    splits: int = 1

    def __post_init__(self):
        if self.shape not in ("rect", "circle"):
            raise ValueError(f"unknown shape {self.shape!r}")
        if self.splits < 1:
            raise ValueError(f"split count must be >= 1, got {self.splits}")
        if any(int(v) != v for v in self.velocity + self.position + self.size):
            raise ValueError("position, size and velocity must be integers")
        if self.size[0] < 1 or self.size[1] < 1:
            raise ValueError(f"size must be positive, got {self.size}")
        if self.splits > self.size[0]:
            raise ValueError(f"cannot split width {self.size[0]} into {self.splits} parts")

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)

    def origin(self, t: int) -> tuple[int, int]:
        return (self.position[0] + self.velocity[0] * t, self.position[1] + self.velocity[1] * t)


@dataclass(frozen=True)
class SceneSpec:
    geometry: ClipGeometry
    objects: tuple[SceneObject, ...] = ()
    background: tuple[int, int, int] = (32, 32, 48)
    seed: int = 0
    grid: int = 60
    track_jitter: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        g = self.geometry
        for i, ob in enumerate(self.objects):
            if not 0 <= ob.appear_frame < g.frame_count:
                raise ValueError(f"object {i} appears at frame {ob.appear_frame}, clip has {g.frame_count}")
            for t in (ob.appear_frame, g.frame_count - 1):
                x, y = ob.origin(t)
                if x < 0 or y < 0 or x + ob.size[0] > g.width or y + ob.size[1] > g.height:
                    raise ValueError(f"object {i} leaves the frame at t={t}")


@dataclass(eq=False)
class GroundTruth:
    spec: SceneSpec
    frames: np.ndarray
    labels: np.ndarray
    element_masks: dict[int, tuple[PixelMask, ...]]
    element_object: dict[int, int]
    flow: np.ndarray
    tracks: list[Track]
    sketch: np.ndarray
    layer_groups: list[tuple[int, ...]] = field(default_factory=list)
    layer_scores: list[float] = field(default_factory=list)

    @property
    def geometry(self) -> ClipGeometry:
        return self.spec.geometry

    def element_score(self, element_id: int) -> float:
        o = self.element_object[element_id]
        return 0.0 if o == BACKGROUND else self.spec.objects[o].speed

    def layer_masks(self, group: Sequence[int]) -> list[PixelMask]:
        g = self.geometry
        out = []
        for t in range(g.frame_count):
            acc = np.zeros(g.shape, dtype=bool)
            for eid in group:
                acc |= self.element_masks[eid][t].to_bitmap()
            out.append(PixelMask.from_bitmap(acc))
        return out

    def mask_sets(self) -> list[MaskSet]:
        return [
            MaskSet(t, tuple((eid, ms[t]) for eid, ms in sorted(self.element_masks.items()) if ms[t].area))
            for t in range(self.geometry.frame_count)
        ]

    def segmentation_provider(self) -> LookupSegmentationProvider:
        return LookupSegmentationProvider({s.frame_index: s for s in self.mask_sets()})

    def propagation_provider(self) -> LookupPropagationProvider:
        return LookupPropagationProvider(self.element_masks)


def _object_pixels(ob: SceneObject, t: int, geometry: ClipGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Boolean footprint and per-pixel part index inside the frame."""
    x0, y0 = ob.origin(t)
    w, h = ob.size
    ys, xs = np.mgrid[0:h, 0:w]
    if ob.shape == "rect":
        inside = np.ones((h, w), dtype=bool)
    else:
        cx, cy = (w - 1) / 2, (h - 1) / 2
        inside = ((xs - cx) / (w / 2)) ** 2 + ((ys - cy) / (h / 2)) ** 2 <= 1.0
    part = (xs * ob.splits) // w
    foot = np.zeros(geometry.shape, dtype=bool)
    parts = np.zeros(geometry.shape, dtype=np.int32)
    foot[y0 : y0 + h, x0 : x0 + w] = inside
    parts[y0 : y0 + h, x0 : x0 + w] = part
    return foot, parts


def generate_scene(spec: SceneSpec) -> GroundTruth:
    g = spec.geometry
    f = g.frame_count
    # element ids: 0 is the background, then objects' parts in order
    element_object = {0: BACKGROUND}
    part_ids: list[list[int]] = []
    next_id = 1
    for o, ob in enumerate(spec.objects):
        ids = list(range(next_id, next_id + ob.splits))
        part_ids.append(ids)
        for eid in ids:
            element_object[eid] = o
        next_id += ob.splits

    labels = np.full((f,) + g.shape, BACKGROUND, dtype=np.int32)
    elements = np.zeros((f,) + g.shape, dtype=np.int32)
    frames = np.empty((f,) + g.shape + (3,), dtype=np.uint8)
    for t in range(f):
        frames[t] = spec.background
        for o, ob in enumerate(spec.objects):
            if t < ob.appear_frame:
                continue
            foot, parts = _object_pixels(ob, t, g)
            labels[t][foot] = o
            elements[t][foot] = np.asarray(part_ids[o])[parts[foot]]
            shade = np.clip(np.asarray(ob.color)[None, :] + 12 * parts[foot][:, None], 0, 255)
            frames[t][foot] = shade.astype(np.uint8)

    element_masks = {}
    for eid in sorted(element_object):
        element_masks[eid] = tuple(PixelMask.from_bitmap(elements[t] == eid) for t in range(f))

    speeds = np.array([[ob.velocity[0], ob.velocity[1]] for ob in spec.objects] + [[0, 0]], dtype=np.float32)
    flow = np.empty((f - 1,) + g.shape + (2,), dtype=np.float32)
    for t in range(f - 1):
        flow[t] = speeds[labels[t]]  # background label -1 picks the trailing zero row

    tracks = _grid_tracks(spec, labels)

    edge = np.zeros((f,) + g.shape, dtype=bool)
    edge[:, :, :-1] |= elements[:, :, :-1] != elements[:, :, 1:]
    edge[:, :-1, :] |= elements[:, :-1, :] != elements[:, 1:, :]
    sketch = np.where(edge, 0, 255).astype(np.uint8)

    groups = [(0,)] + [tuple(ids) for ids in part_ids]
    scores = [0.0] + [ob.speed for ob in spec.objects]
    return GroundTruth(spec, frames, labels, element_masks, element_object, flow, tracks, sketch, groups, scores)


def _grid_tracks(spec: SceneSpec, labels: np.ndarray) -> list[Track]:
    g = spec.geometry
    f = g.frame_count
    seeds = seed_grid(g, spec.grid)
    col, row = pixel_index(seeds, g)
    owner = labels[0][row, col]
    vel = np.array([ob.velocity for ob in spec.objects] + [(0, 0)], dtype=np.float64)
    t = np.arange(f, dtype=np.float64)
    xy = seeds[:, None, :] + vel[owner][:, None, :] * t[None, :, None]
    if spec.track_jitter > 0:
        rng = np.random.default_rng(spec.seed)
        xy = xy + rng.normal(0.0, spec.track_jitter, size=xy.shape)
        xy[..., 0] = np.clip(xy[..., 0], 0, g.width - 1)
        xy[..., 1] = np.clip(xy[..., 1], 0, g.height - 1)
    c, r = pixel_index(xy, g)
    under = labels[np.arange(f)[None, :], r, c]
    visible = under == owner[:, None]
    return [Track(i, xy[i], visible[i]) for i in range(len(seeds))]


# Integer velocities grouped by exact magnitude; kept mostly horizontal so
# objects can share a frame in stacked bands without crossing.
VELOCITY_POOL: dict[int, tuple[tuple[int, int], ...]] = {
    2: ((2, 0), (0, 2)),
    5: ((3, 4), (4, 3), (5, 0)),
    8: ((8, 0),),
    10: ((10, 0), (8, 6)),
    13: ((12, 5), (13, 0)),
}


def random_scene(
    seed: int,
    geometry: ClipGeometry,
    n_layers: int,
    splits: tuple[int, int] = (2, 6),
    appear_frame: int | None = None,
    speeds: Sequence[int] | None = None,
    grid: int = 60,
) -> SceneSpec:
    """A static background plus ``n_layers - 1`` moving objects in separate bands.

    Object speeds are distinct magnitudes from ``VELOCITY_POOL`` (or
    ``speeds``) at least 2 px/frame apart, so the true grouping survives a
    merge threshold of 1. Objects never overlap. When ``appear_frame`` is
    given, the last object first appears at that frame.
    """
    if n_layers < 1:
        raise ValueError("n_layers must be >= 1")
    rng = np.random.default_rng(seed)
    n_obj = n_layers - 1
    pool = sorted(VELOCITY_POOL) if speeds is None else list(speeds)
    if n_obj > len(pool):
        raise ValueError(f"only {len(pool)} distinct speeds available")
    chosen = sorted(rng.choice(pool, size=n_obj, replace=False).tolist()) if n_obj else []
    f = geometry.frame_count
    band = geometry.height // max(n_obj, 1)
    objects = []
    for k, speed in enumerate(chosen):
        options = VELOCITY_POOL[speed]
        vx, vy = options[int(rng.integers(len(options)))]
        vx *= 1 if rng.random() < 0.5 else -1
        vy *= 1 if rng.random() < 0.5 else -1
        start = appear_frame if (appear_frame is not None and k == n_obj - 1) else 0
        steps = f - 1 - start
        max_w = geometry.width - abs(vx) * steps
        max_h = band - abs(vy) * steps
        j = int(rng.integers(splits[0], splits[1] + 1))
        if max_w < max(8, j) or max_h < 8:
            raise ValueError(f"geometry too small for speed {speed} over {steps} steps")
        w = int(rng.integers(max(8, j, max_w // 3), max(8, j, max_w // 2) + 1))
        h = int(rng.integers(max(8, max_h // 2), max_h + 1))
        x_lo = 0 if vx >= 0 else -vx * steps
        x_hi = geometry.width - w - (vx * steps if vx > 0 else 0)
        y_lo = k * band + (0 if vy >= 0 else -vy * steps)
        y_hi = k * band + band - h - (vy * steps if vy > 0 else 0)
        x = int(rng.integers(x_lo, x_hi + 1))
        y = int(rng.integers(y_lo, y_hi + 1))
        # position is where the object sits at its first visible frame
        x0, y0 = x - vx * start, y - vy * start
        color = tuple(int(c) for c in rng.integers(64, 200, size=3))
        shape = "rect" if rng.random() < 0.5 else "circle"
        objects.append(SceneObject(shape, color, (x0, y0), (w, h), (vx, vy), start, j))
    return SceneSpec(geometry, tuple(objects), seed=seed, grid=grid)


def write_clip(gt: GroundTruth, root, clip_id: str, fps: float = 8.0, sketches: bool = True):
    """Write a ground-truth clip in the pipeline's file formats; returns its manifest entry."""
    from pathlib import Path

    from .config import ClipManifest
    from .formats import write_lafl, write_lamk, write_latk
    from .imageio import write_png

    g = gt.geometry
    root = Path(root)
    clip_dir = root / clip_id
    frames = []
    for t in range(g.frame_count):
        p = clip_dir / f"frame_{t:04d}.png"
        write_png(p, gt.frames[t])
        frames.append(p)
    sketch_paths = None
    if sketches:
        sketch_paths = []
        for t in range(g.frame_count):
            p = clip_dir / f"sketch_{t:04d}.png"
            write_png(p, gt.sketch[t])
            sketch_paths.append(p)
    sets = gt.mask_sets()
    write_lamk(clip_dir / "masks.lamk", sets, g.height, g.width)
    write_lamk(clip_dir / "masklets.lamk", sets, g.height, g.width)
    write_lafl(clip_dir / "flow.lafl", gt.flow)
    write_latk(clip_dir / "tracks.latk", gt.tracks, g.frame_count)
    return ClipManifest(
        clip_id=clip_id,
        frame_count=g.frame_count,
        height=g.height,
        width=g.width,
        fps=fps,
        frames=tuple(frames),
        masks=clip_dir / "masks.lamk",
        masklets=clip_dir / "masklets.lamk",
        flow=clip_dir / "flow.lafl",
        tracks=clip_dir / "tracks.latk",
        sketches=None if sketch_paths is None else tuple(sketch_paths),
    )


def synth_dataset(
    root,
    n_clips: int,
    seed: int = 0,
    geometry: ClipGeometry = ClipGeometry(320, 512, 16),
    layer_counts: Sequence[int] = (2, 3, 4),
    grid: int = 60,
):
    """Write ``n_clips`` random scenes plus ``manifest.json`` under ``root``.

    Clip ``i`` gets ``layer_counts[i % len(layer_counts)]`` true layers.
    Returns the manifest path and the generated scene specs.
    """
    from pathlib import Path

    from .config import dump_manifest

    root = Path(root)
    clips, specs = [], []
    for i in range(n_clips):
        spec = random_scene(seed * 100003 + i, geometry, layer_counts[i % len(layer_counts)], grid=grid)
        gt = generate_scene(spec)
        clips.append(write_clip(gt, root, f"clip{i:05d}"))
        specs.append(spec)
    path = root / "manifest.json"
    dump_manifest(clips, path)
    return path, specs
