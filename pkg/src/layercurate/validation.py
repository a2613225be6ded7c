"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numpy as np

from .exceptions import GeometryError
from .masks import ClipGeometry


def check_scores(X) -> np.ndarray:
    """Return motion scores as a finite, non-negative 1-D float64 array.

    Accepts a sequence, a 1-D array, or a single-column 2-D array.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 2 and arr.shape[1] == 1:
        arr = arr[:, 0]
    if arr.ndim != 1:
        raise ValueError(f"expected 1-D scores or a single column, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("found array with 0 samples")
    if not np.all(np.isfinite(arr)):
        raise ValueError("scores must be finite")
    if np.any(arr < 0):
        raise ValueError("scores must be non-negative")
    return arr


def check_flow(flow, geometry: ClipGeometry | None = None) -> np.ndarray:
    """Validate a dense flow field of shape ``(F-1, H, W, 2)``."""
    flow = np.asarray(flow)
    if flow.ndim != 4 or flow.shape[-1] != 2:
        raise GeometryError(f"flow must have shape (F-1, H, W, 2), got {flow.shape}")
    if geometry is not None:
        expected = (geometry.frame_count - 1, geometry.height, geometry.width, 2)
        if flow.shape != expected:
            raise GeometryError(f"flow shape {flow.shape} != expected {expected}")
    if not np.all(np.isfinite(flow)):
        raise ValueError("flow contains non-finite values")
    return flow


def check_image(image, geometry: ClipGeometry | None = None) -> np.ndarray:
    """Validate an 8-bit ``(H, W, 3)`` RGB image."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise GeometryError(f"image must have shape (H, W, 3), got {image.shape}")
    if image.dtype != np.uint8:
        raise ValueError(f"image must be uint8, got {image.dtype}")
    if geometry is not None and image.shape[:2] != geometry.shape:
        raise GeometryError(f"image geometry {image.shape[:2]} != clip {geometry.shape}")
    return image


def check_sketch(sketch, geometry: ClipGeometry | None = None) -> np.ndarray:
    """Validate an 8-bit ``(F, H, W)`` line-drawing sequence."""
    sketch = np.asarray(sketch)
    if sketch.ndim != 3:
        raise GeometryError(f"sketch must have shape (F, H, W), got {sketch.shape}")
    if sketch.dtype != np.uint8:
        raise ValueError(f"sketch must be uint8, got {sketch.dtype}")
    if geometry is not None:
        expected = (geometry.frame_count, geometry.height, geometry.width)
        if sketch.shape != expected:
            raise GeometryError(f"sketch shape {sketch.shape} != expected {expected}")
    return sketch
