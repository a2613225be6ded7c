"""Reference-frame decomposition, motion-based temporal assignment, capacity padding."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .exceptions import CapacityError, GeometryError
from .merge import Layer
from .validation import check_image

Mode = Literal["i2v", "interpolation"]


@dataclass(frozen=True, eq=False)
class LayerStack:
    """Fixed-capacity layer tensors.

    masks     : (N, F, 1, H, W) uint8, 0/1
    regions   : (N, F, 3, H, W) uint8
    validity  : (N,) bool, False for padding slots
    scores    : (N,) float32 normalized motion scores, 0 for padding
    static    : (N,) bool
    """

    masks: np.ndarray
    regions: np.ndarray
    validity: np.ndarray
    scores: np.ndarray
    static: np.ndarray

    @property
    def capacity(self) -> int:
        return self.masks.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.validity.sum())

    @property
    def frame_count(self) -> int:
        return self.masks.shape[1]


def decompose_reference(image: np.ndarray, layers: Sequence[Layer], frame: int = 0) -> np.ndarray:
    """Cut the reference image into per-layer regions, ``(n_layers, 3, H, W)``."""
    image = check_image(image)
    out = np.zeros((len(layers), 3) + image.shape[:2], dtype=np.uint8)
    chw = np.moveaxis(image, -1, 0)
    for k, layer in enumerate(layers):
        m = layer.masks[frame]
        if m.shape != image.shape[:2]:
            raise GeometryError(f"layer {layer.layer_id} geometry {m.shape} != image {image.shape[:2]}")
        np.copyto(out[k], chw, where=m.to_bitmap()[None])
    return out


def pad_layers(
    masks: np.ndarray,
    regions: np.ndarray,
    scores: Sequence[float],
    static: Sequence[bool],
    capacity: int,
) -> LayerStack:
    """Zero-pad ``n <= capacity`` layer slots up to ``capacity``."""
    n = masks.shape[0]
    if n == 0:
        raise CapacityError("a clip must yield at least one layer")
    if n > capacity:
        raise CapacityError(f"{n} layers exceed capacity {capacity}")
    if regions.shape[0] != n or len(scores) != n or len(static) != n:
        raise ValueError("masks, regions, scores and static must agree on layer count")
    pad = capacity - n
    full_masks = np.zeros((capacity,) + masks.shape[1:], dtype=np.uint8)
    full_masks[:n] = masks
    full_regions = np.zeros((capacity,) + regions.shape[1:], dtype=np.uint8)
    full_regions[:n] = regions
    validity = np.array([True] * n + [False] * pad)
    full_scores = np.zeros(capacity, dtype=np.float32)
    full_scores[:n] = scores
    full_static = np.zeros(capacity, dtype=bool)
    full_static[:n] = static
    return LayerStack(full_masks, full_regions, validity, full_scores, full_static)


def motion_based_assignment(
    layers: Sequence[Layer],
    regions: np.ndarray,
    capacity: int = 4,
    mode: Mode = "i2v",
    last_regions: np.ndarray | None = None,
) -> LayerStack:
    """Spread reference-frame layers over time according to motion class.

    Static layers repeat their reference mask and region on every
    non-reference frame; dynamic layers are zero there. In interpolation
    mode the last frame is a second reference built from ``last_regions``
    and the last-frame layer masks, and the frames in between follow the
    same rule using the first-frame decomposition.
    """
    n = len(layers)
    if n > capacity:
        raise CapacityError(f"{n} layers exceed capacity {capacity}")
    if n == 0:
        raise CapacityError("a clip must yield at least one layer")
    if regions.shape[0] != n:
        raise ValueError(f"{regions.shape[0]} regions for {n} layers")
    if mode not in ("i2v", "interpolation"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "interpolation" and last_regions is None:
        raise ValueError("interpolation mode needs last_regions")

    f = layers[0].frame_count
    h, w = regions.shape[2:]
    masks = np.zeros((n, f, 1, h, w), dtype=np.uint8)
    out = np.zeros((n, f, 3, h, w), dtype=np.uint8)
    for k, layer in enumerate(layers):
        ref_mask = layer.masks[0].to_bitmap().astype(np.uint8)
        masks[k, 0, 0] = ref_mask
        out[k, 0] = regions[k]
        if layer.is_static:
            masks[k, 1:, 0] = ref_mask
            out[k, 1:] = regions[k]
        if mode == "interpolation":
            masks[k, f - 1, 0] = layer.masks[f - 1].to_bitmap()
            out[k, f - 1] = last_regions[k]
    scores = [layer.score.normalized for layer in layers]
    static = [layer.is_static for layer in layers]
    return pad_layers(masks, out, scores, static, capacity)
