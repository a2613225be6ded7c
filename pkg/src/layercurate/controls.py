"""Layer-level control encoders: motion-score maps, trajectory maps, masked sketches."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .exceptions import GeometryError
from .masks import ClipGeometry, PixelMask
from .merge import DEFAULT_S_MAX, Layer, normalize_score
from .segmentation import Masklet
from .validation import check_sketch

SKETCH_BACKGROUND = 255
DEFAULT_SIGMA = 5.0
DEFAULT_GRID = 60
DEFAULT_MIN_OVERLAP = 0.8
MAX_SAMPLED_TRACKS = 8


@dataclass(frozen=True, eq=False)
class Track:
    """A tracked point: ``xy`` is ``(F, 2)`` sub-pixel (x, y), ``visible`` is ``(F,)``.

    Pixel centers sit at integer coordinates.
    """

    track_id: int
    xy: np.ndarray
    visible: np.ndarray

    def __post_init__(self):
        xy = np.asarray(self.xy, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if xy.ndim != 2 or xy.shape[1] != 2 or vis.shape != (xy.shape[0],):
            raise ValueError(f"bad track shapes: xy {xy.shape}, visible {vis.shape}")
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "visible", vis)

    @property
    def frame_count(self) -> int:
        return self.xy.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return (
            self.track_id == other.track_id
            and np.array_equal(self.xy, other.xy)
            and np.array_equal(self.visible, other.visible)
        )

    __hash__ = None


def seed_grid(geometry: ClipGeometry, n: int = DEFAULT_GRID) -> np.ndarray:
    """Cell centers of an ``n x n`` grid as ``(n*n, 2)`` (x, y), rows first."""
    if n < 1:
        raise ValueError(f"grid size must be >= 1, got {n}")
    xs = (np.arange(n) + 0.5) * (geometry.width / n)
    ys = (np.arange(n) + 0.5) * (geometry.height / n)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def pixel_index(xy: np.ndarray, geometry: ClipGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Nearest pixel (col, row) for sub-pixel coordinates, clipped into the frame."""
    xy = np.asarray(xy, dtype=np.float64)
    col = np.clip(np.floor(xy[..., 0] + 0.5).astype(np.int64), 0, geometry.width - 1)
    row = np.clip(np.floor(xy[..., 1] + 0.5).astype(np.int64), 0, geometry.height - 1)
    return col, row


def _label_maps(masklets: Sequence[Masklet], geometry: ClipGeometry) -> np.ndarray:
    labels = np.full((geometry.frame_count,) + geometry.shape, -1, dtype=np.int32)
    # Descending id so the lowest id wins where masklets overlap.
    for k in sorted(range(len(masklets)), key=lambda i: masklets[i].element_id, reverse=True):
        for t, m in enumerate(masklets[k].masks):
            if m.area:
                labels[t][m.to_bitmap()] = k
    return labels


def filter_tracks(
    tracks: Sequence[Track],
    masklets: Sequence[Masklet],
    geometry: ClipGeometry,
    min_overlap: float = DEFAULT_MIN_OVERLAP,
) -> dict[int, list[Track]]:
    """Assign tracks to masklets by their first-frame point and keep consistent ones.

    A track belongs to the masklet under its frame-0 position and is kept
    when the fraction of frames in which it is visible inside that masklet is
    strictly greater than ``min_overlap``. Tracks starting outside every
    masklet, or invisible at frame 0, are dropped. Returns kept tracks keyed
    by masklet element id, each list sorted by track id.
    """
    out: dict[int, list[Track]] = {m.element_id: [] for m in masklets}
    if not tracks or not masklets:
        return out
    f = geometry.frame_count
    for tr in tracks:
        if tr.frame_count != f:
            raise GeometryError(f"track {tr.track_id} has {tr.frame_count} frames, clip has {f}")
    labels = _label_maps(masklets, geometry)
    xy = np.stack([tr.xy for tr in tracks])
    vis = np.stack([tr.visible for tr in tracks])
    col, row = pixel_index(xy, geometry)
    frames = np.arange(f)[None, :]
    under = labels[frames, row, col]
    owner = np.where(vis[:, 0], under[:, 0], -1)
    inside = vis & (under == owner[:, None]) & (owner[:, None] >= 0)
    frac = inside.sum(axis=1) / f
    keep = (owner >= 0) & (frac > min_overlap)
    for i in np.flatnonzero(keep):
        out[masklets[owner[i]].element_id].append(tracks[i])
    for v in out.values():
        v.sort(key=lambda tr: tr.track_id)
    return out


def tracks_by_layer(filtered: Mapping[int, Sequence[Track]], layers: Sequence[Layer]) -> list[list[Track]]:
    """Pool per-masklet tracks into per-layer lists, sorted by track id."""
    out = []
    for layer in layers:
        pooled = [tr for mid in layer.members for tr in filtered.get(mid, ())]
        out.append(sorted(pooled, key=lambda tr: tr.track_id))
    return out


def sample_tracks(tracks: Sequence[Track], rng: np.random.Generator, k_max: int = MAX_SAMPLED_TRACKS) -> list[Track]:
    """Draw ``k ~ U{1..k_max}`` tracks without replacement (fewer if not available)."""
    if not tracks:
        return []
    k = min(int(rng.integers(1, k_max + 1)), len(tracks))
    picked = rng.choice(len(tracks), size=k, replace=False)
    return sorted((tracks[i] for i in picked), key=lambda tr: tr.track_id)


def rasterize_trajectories(
    tracks: Sequence[Track],
    geometry: ClipGeometry,
    sigma: float = DEFAULT_SIGMA,
) -> np.ndarray:
    """Hybrid trajectory map of shape ``(F, 3, H, W)``, float32.

    Channel 0 is a Gaussian heatmap (max over tracks) centered on each
    visible point's nearest pixel and truncated at ``3 * sigma``. Channels 1-2
    hold the displacement to the next frame divided by width and height,
    written on the blob support of the nearest track. Displacements into or
    out of an invisible frame, and on the last frame, are zero.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    f, h, w = geometry.frame_count, geometry.height, geometry.width
    out = np.zeros((f, 3, h, w), dtype=np.float32)
    if not tracks:
        return out
    for tr in tracks:
        if tr.frame_count != f:
            raise GeometryError(f"track {tr.track_id} has {tr.frame_count} frames, clip has {f}")

    radius = int(math.floor(3 * sigma))
    cutoff = (3 * sigma) ** 2
    offs = np.arange(-radius, radius + 1)
    d2_win = offs[None, :] ** 2 + offs[:, None] ** 2
    gauss_win = np.exp(-d2_win / (2 * sigma * sigma))
    support_win = d2_win <= cutoff

    ordered = sorted(tracks, key=lambda tr: tr.track_id)
    for t in range(f):
        heat = np.zeros((h, w), dtype=np.float64)
        best = np.full((h, w), np.inf)
        ox = np.zeros((h, w), dtype=np.float64)
        oy = np.zeros((h, w), dtype=np.float64)
        for tr in ordered:
            if not tr.visible[t]:
                continue
            cx, cy = pixel_index(tr.xy[t], geometry)
            cx, cy = int(cx), int(cy)
            if t + 1 < f and tr.visible[t + 1]:
                dx = (tr.xy[t + 1, 0] - tr.xy[t, 0]) / w
                dy = (tr.xy[t + 1, 1] - tr.xy[t, 1]) / h
            else:
                dx = dy = 0.0
            y0, y1 = max(cy - radius, 0), min(cy + radius + 1, h)
            x0, x1 = max(cx - radius, 0), min(cx + radius + 1, w)
            wy = slice(y0 - cy + radius, y1 - cy + radius)
            wx = slice(x0 - cx + radius, x1 - cx + radius)
            sup = support_win[wy, wx]
            d2 = np.where(sup, d2_win[wy, wx], np.inf)
            region = (slice(y0, y1), slice(x0, x1))
            np.maximum(heat[region], np.where(sup, gauss_win[wy, wx], 0.0), out=heat[region])
            closer = d2 < best[region]
            best[region][closer] = d2[closer]
            ox[region][closer] = dx
            oy[region][closer] = dy
        out[t, 0] = heat
        out[t, 1] = ox
        out[t, 2] = oy
    return out


def encode_motion_score(masks: np.ndarray, raw_score: float, s_max: float = DEFAULT_S_MAX) -> np.ndarray:
    """Two-channel score map ``(F, 2, H, W)``: layer mask, then score on its support."""
    masks = np.asarray(masks)
    if masks.ndim == 4:
        if masks.shape[1] != 1:
            raise GeometryError(f"expected (F, 1, H, W) masks, got {masks.shape}")
        masks = masks[:, 0]
    if masks.ndim != 3:
        raise GeometryError(f"expected (F, H, W) masks, got {masks.shape}")
    m = (masks != 0).astype(np.float32)
    s = np.float32(normalize_score(raw_score, s_max))
    return np.stack([m, m * s], axis=1)


def mask_sketch(sketch: np.ndarray, layer_masks: Sequence[PixelMask]) -> np.ndarray:
    """Blank (to white) every sketch pixel outside the layer's per-frame masks."""
    sketch = check_sketch(sketch)
    if len(layer_masks) != sketch.shape[0]:
        raise GeometryError(f"{len(layer_masks)} masks for {sketch.shape[0]} sketch frames")
    out = np.full_like(sketch, SKETCH_BACKGROUND)
    for t, m in enumerate(layer_masks):
        if m.shape != sketch.shape[1:]:
            raise GeometryError(f"mask geometry {m.shape} != sketch {sketch.shape[1:]}")
        if m.area:
            bits = m.to_bitmap()
            out[t][bits] = sketch[t][bits]
    return out


def track_mse(predicted: Sequence[Track], reference: Sequence[Track]) -> float:
    """Mean squared point distance over all (track, frame) pairs, matched by id."""
    pred = {tr.track_id: tr for tr in predicted}
    ref = {tr.track_id: tr for tr in reference}
    if len(pred) != len(predicted) or len(ref) != len(reference):
        raise ValueError("duplicate track ids")
    if set(pred) != set(ref):
        raise ValueError(f"track ids differ: {sorted(set(pred) ^ set(ref))}")
    if not ref:
        raise ValueError("no tracks to compare")
    total, count = [], 0
    for tid in sorted(ref):
        a, b = pred[tid].xy, ref[tid].xy
        if a.shape != b.shape:
            raise ValueError(f"track {tid} lengths differ: {a.shape[0]} vs {b.shape[0]}")
        total.append(float(((a - b) ** 2).sum()))
        count += a.shape[0]
    return math.fsum(total) / count
