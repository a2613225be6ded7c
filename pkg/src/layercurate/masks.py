"""Run-length encoded binary masks and per-frame mask collections.

Masks are stored as canonical RLE: row-major, the first run counts zeros
(and may be zero-length), runs alternate zero/one, and no interior run is
empty. Equal bitmaps therefore always produce byte-equal run arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, Literal, Sequence

import numpy as np

from .exceptions import EmptyMaskError, GeometryError

RUN_DTYPE = np.dtype("<u4")

CombineMode = Literal["union", "intersect", "subtract"]


@dataclass(frozen=True)
class ClipGeometry:
    height: int
    width: int
    frame_count: int = 2

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise GeometryError(f"height and width must be >= 1, got {self.height}x{self.width}")
        if self.frame_count < 2:
            raise GeometryError(f"frame_count must be >= 2, got {self.frame_count}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_pixels(self) -> int:
        return self.height * self.width


def _encode_runs(flat: np.ndarray) -> np.ndarray:
    n = flat.size
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [n]))
    runs = np.diff(bounds)
    if flat[0]:
        runs = np.concatenate(([0], runs))
    return runs.astype(RUN_DTYPE)


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Immutable single-frame binary mask held as canonical RLE."""

    height: int
    width: int
    runs: np.ndarray
    area: int = field(init=False)

    def __post_init__(self):
        runs = np.ascontiguousarray(self.runs, dtype=RUN_DTYPE)
        if runs.ndim != 1 or runs.size == 0:
            raise ValueError("runs must be a nonempty 1-D array")
        if int(runs.sum(dtype=np.uint64)) != self.height * self.width:
            raise ValueError(
                f"runs sum to {int(runs.sum(dtype=np.uint64))}, expected {self.height * self.width}"
            )
        if runs.size > 1 and np.any(runs[1:] == 0):
            raise ValueError("zero-length interior run; encoding is not canonical")
        runs.setflags(write=False)
        object.__setattr__(self, "runs", runs)
        object.__setattr__(self, "area", int(runs[1::2].sum(dtype=np.uint64)))

    @classmethod
    def from_bitmap(cls, bitmap: np.ndarray) -> "PixelMask":
        bitmap = np.asarray(bitmap)
        if bitmap.ndim != 2:
            raise ValueError(f"bitmap must be 2-D, got shape {bitmap.shape}")
        h, w = bitmap.shape
        return cls(h, w, _encode_runs(bitmap.astype(bool, copy=False).ravel()))

    @classmethod
    def empty(cls, height: int, width: int) -> "PixelMask":
        return cls(height, width, np.array([height * width], dtype=RUN_DTYPE))

    @classmethod
    def full(cls, height: int, width: int) -> "PixelMask":
        return cls(height, width, np.array([0, height * width], dtype=RUN_DTYPE))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    def to_bitmap(self) -> np.ndarray:
        values = np.zeros(self.runs.size, dtype=bool)
        values[1::2] = True
        return np.repeat(values, self.runs).reshape(self.height, self.width)

    def __bool__(self) -> bool:
        return self.area > 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, PixelMask):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.runs, other.runs)

    def __hash__(self) -> int:
        return hash((self.height, self.width, self.runs.tobytes()))

    def __repr__(self) -> str:
        return f"PixelMask({self.height}x{self.width}, area={self.area})"


def _check_same_shape(a: PixelMask, b: PixelMask) -> None:
    if a.shape != b.shape:
        raise GeometryError(f"mask geometry mismatch: {a.shape} vs {b.shape}")


def area(m: PixelMask) -> int:
    return m.area


def combine(a: PixelMask, b: PixelMask, mode: CombineMode) -> PixelMask:
    _check_same_shape(a, b)
    x, y = a.to_bitmap(), b.to_bitmap()
    if mode == "union":
        out = x | y
    elif mode == "intersect":
        out = x & y
    elif mode == "subtract":
        out = x & ~y
    else:
        raise ValueError(f"unknown combine mode {mode!r}")
    return PixelMask.from_bitmap(out)


def union_all(masks: Iterable[PixelMask], height: int, width: int) -> PixelMask:
    acc = np.zeros((height, width), dtype=bool)
    for m in masks:
        if m.shape != (height, width):
            raise GeometryError(f"mask geometry mismatch: {m.shape} vs {(height, width)}")
        acc |= m.to_bitmap()
    return PixelMask.from_bitmap(acc)


def coverage(a: PixelMask, b: PixelMask) -> float:
    """Fraction of ``a``'s pixels that are also set in ``b``."""
    _check_same_shape(a, b)
    if a.area == 0:
        raise EmptyMaskError("coverage of an empty mask is undefined")
    inter = np.count_nonzero(a.to_bitmap() & b.to_bitmap())
    return inter / a.area


@dataclass(frozen=True)
class MaskSet:
    """Labeled masks for one frame. Element ids are unique integers."""

    frame_index: int
    entries: tuple[tuple[int, PixelMask], ...] = ()

    def __post_init__(self):
        entries = tuple((int(eid), m) for eid, m in self.entries)
        ids = [eid for eid, _ in entries]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate element ids in mask set: {ids}")
        shapes = {m.shape for _, m in entries}
        if len(shapes) > 1:
            raise GeometryError(f"mask set mixes geometries: {sorted(shapes)}")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[int, PixelMask]]:
        return iter(self.entries)

    @property
    def ids(self) -> list[int]:
        return [eid for eid, _ in self.entries]

    @property
    def masks(self) -> list[PixelMask]:
        return [m for _, m in self.entries]

    @property
    def shape(self) -> tuple[int, int] | None:
        return self.entries[0][1].shape if self.entries else None

    def get(self, element_id: int) -> PixelMask:
        for eid, m in self.entries:
            if eid == element_id:
                return m
        raise KeyError(element_id)

    def union(self, height: int, width: int) -> PixelMask:
        return union_all(self.masks, height, width)

    def is_disjoint(self) -> bool:
        if not self.entries:
            return True
        h, w = self.shape
        count = np.zeros((h, w), dtype=np.int32)
        for m in self.masks:
            count += m.to_bitmap()
        return bool(count.max() <= 1)


def mask_set_subtract(
    candidates: MaskSet,
    existing: MaskSet,
    tau_new: float = 0.5,
    min_area: int = 64,
) -> MaskSet:
    """Keep the candidates that are mostly not claimed by ``existing``.

    A candidate is new when at most ``tau_new`` of its pixels are covered by
    the union of ``existing``. Survivors are clipped against that union and
    dropped if fewer than ``min_area`` pixels remain. Empty candidates are
    ignored.
    """
    if candidates.shape and existing.shape and candidates.shape != existing.shape:
        raise GeometryError(f"mask set geometry mismatch: {candidates.shape} vs {existing.shape}")
    if not candidates.entries:
        return MaskSet(candidates.frame_index)
    h, w = candidates.shape
    claimed = np.zeros((h, w), dtype=bool)
    for m in existing.masks:
        claimed |= m.to_bitmap()

    kept = []
    for eid, m in candidates:
        if m.area == 0:
            continue
        bits = m.to_bitmap()
        covered = np.count_nonzero(bits & claimed)
        if covered / m.area > tau_new:
            continue
        clipped = bits & ~claimed
        if np.count_nonzero(clipped) < max(min_area, 1):
            continue
        kept.append((eid, PixelMask.from_bitmap(clipped)))
    return MaskSet(candidates.frame_index, tuple(kept))


def resolve_overlaps(s: MaskSet) -> MaskSet:
    """Make masks pairwise disjoint; contested pixels go to the smallest claimant.

    Ties on area go to the lower element id. Entry order is preserved.
    """
    if len(s) < 2:
        return s
    h, w = s.shape
    order = sorted(range(len(s)), key=lambda i: (s.entries[i][1].area, s.entries[i][0]))
    claimed = np.zeros((h, w), dtype=bool)
    resolved: list[PixelMask | None] = [None] * len(s)
    for i in order:
        m = s.entries[i][1]
        bits = m.to_bitmap()
        if np.any(bits & claimed):
            resolved[i] = PixelMask.from_bitmap(bits & ~claimed)
        else:
            resolved[i] = m
        claimed |= bits
    return MaskSet(s.frame_index, tuple((eid, r) for (eid, _), r in zip(s.entries, resolved)))


def stack_bitmaps(masks: Sequence[PixelMask]) -> np.ndarray:
    """Decode masks into a ``(len(masks), H, W)`` boolean array."""
    if not masks:
        raise ValueError("no masks to stack")
    return np.stack([m.to_bitmap() for m in masks])
