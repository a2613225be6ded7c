"""Iterative key-frame refinement of masklets over pluggable providers."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

import numpy as np

from .exceptions import GeometryError, PropagationCoverageError, ProviderError
from .masks import ClipGeometry, MaskSet, PixelMask, coverage, mask_set_subtract, resolve_overlaps

log = logging.getLogger(__name__)

PROMPT_COVERAGE_MIN = 0.9


@dataclass(frozen=True)
class Masklet:
    """One element's mask in every frame of a clip."""

    element_id: int
    masks: tuple[PixelMask, ...]
    first_appearance_frame: int = 0

    def __post_init__(self):
        object.__setattr__(self, "masks", tuple(self.masks))
        if not 0 <= self.first_appearance_frame < len(self.masks):
            raise ValueError(
                f"first_appearance_frame {self.first_appearance_frame} outside 0..{len(self.masks) - 1}"
            )
        if len({m.shape for m in self.masks}) > 1:
            raise GeometryError("masklet frames disagree on geometry")
        for t in range(self.first_appearance_frame):
            if self.masks[t].area:
                raise ValueError(f"masklet {self.element_id} is nonempty at frame {t} before its first appearance")

    @property
    def frame_count(self) -> int:
        return len(self.masks)

    def __getitem__(self, t: int) -> PixelMask:
        return self.masks[t]

    def is_empty(self) -> bool:
        return all(m.area == 0 for m in self.masks)


@dataclass(frozen=True)
class Prompt:
    frame_index: int
    mask: PixelMask
    element_id: int


@dataclass(frozen=True)
class PromptSet:
    prompts: tuple[Prompt, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        ids = [p.element_id for p in self.prompts]
        if len(set(ids)) != len(ids):
            raise ValueError(f"one prompt per element id, got {ids}")

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    def extend(self, frame_index: int, new: MaskSet) -> "PromptSet":
        added = tuple(Prompt(frame_index, m, eid) for eid, m in new)
        return PromptSet(self.prompts + added)


class SegmentationProvider(Protocol):
    def segment(self, frame_index: int) -> MaskSet: ...


class PropagationProvider(Protocol):
    def propagate(self, prompts: PromptSet, geometry: ClipGeometry) -> list[Masklet]: ...


def key_frames(geometry: ClipGeometry, interval: int = 4) -> list[int]:
    if interval < 1:
        raise ValueError(f"interval must be >= 1, got {interval}")
    return list(range(0, geometry.frame_count, interval))


class LookupSegmentationProvider:
    """Serves precomputed per-frame mask sets, e.g. ingested from files."""

    def __init__(self, sets: Mapping[int, MaskSet]):
        self.sets = dict(sets)

    def segment(self, frame_index: int) -> MaskSet:
        try:
            return self.sets[frame_index]
        except KeyError:
            raise ProviderError(f"no segmentation available for frame {frame_index}") from None


class LookupPropagationProvider:
    """Propagates prompts by matching them to precomputed element tracks.

    Each prompt is matched to the track with the largest overlap at the
    prompt's frame (ties to the lower track id); the returned masklet copies
    that track from the prompt frame onward and is empty before it.
    """

    def __init__(self, tracks: Mapping[int, Sequence[PixelMask]]):
        self.tracks = {int(k): tuple(v) for k, v in tracks.items()}
        self._ids = sorted(self.tracks)

    def _match(self, prompt: Prompt) -> int | None:
        bits = prompt.mask.to_bitmap()
        best, best_overlap = None, 0
        for tid in self._ids:
            track = self.tracks[tid]
            if prompt.frame_index >= len(track):
                continue
            overlap = int(np.count_nonzero(bits & track[prompt.frame_index].to_bitmap()))
            if overlap > best_overlap:
                best, best_overlap = tid, overlap
        return best

    def propagate(self, prompts: PromptSet, geometry: ClipGeometry) -> list[Masklet]:
        out = []
        empty = PixelMask.empty(geometry.height, geometry.width)
        for p in prompts:
            tid = self._match(p)
            if tid is None:
                raise ProviderError(f"prompt for element {p.element_id} at frame {p.frame_index} matches no track")
            track = self.tracks[tid]
            if len(track) != geometry.frame_count:
                raise ProviderError(f"track {tid} has {len(track)} frames, clip has {geometry.frame_count}")
            masks = [empty] * p.frame_index + list(track[p.frame_index:])
            out.append(Masklet(p.element_id, tuple(masks), p.frame_index))
        return out


def _check_propagation(masklets: list[Masklet], prompts: PromptSet, geometry: ClipGeometry) -> dict[int, Masklet]:
    by_id = {m.element_id: m for m in masklets}
    for p in prompts:
        m = by_id.get(p.element_id)
        if m is None:
            raise ProviderError(f"propagation returned no masklet for element {p.element_id}")
        if m.frame_count != geometry.frame_count:
            raise ProviderError(
                f"masklet {p.element_id} has {m.frame_count} frames, clip has {geometry.frame_count}"
            )
        if m.masks[0].shape != geometry.shape:
            raise GeometryError(f"masklet {p.element_id} geometry {m.masks[0].shape} != {geometry.shape}")
        cov = coverage(p.mask, m.masks[p.frame_index])
        if cov < PROMPT_COVERAGE_MIN:
            raise PropagationCoverageError(
                f"masklet {p.element_id} covers {cov:.3f} of its prompt at frame {p.frame_index}"
            )
    return by_id


def _restrict(masklet: Masklet, first: int, geometry: ClipGeometry) -> Masklet:
    empty = PixelMask.empty(geometry.height, geometry.width)
    masks = tuple(empty if t < first else m for t, m in enumerate(masklet.masks))
    return Masklet(masklet.element_id, masks, first)


def curate_masklets(
    geometry: ClipGeometry,
    seg: SegmentationProvider,
    prop: PropagationProvider,
    tau_new: float = 0.5,
    key_interval: int = 4,
    min_area: int = 64,
) -> list[Masklet]:
    """Run the key-frame refinement loop and return disjoint masklets.

    Frame 0 is segmented and propagated to seed the masklets. Every later key
    frame is segmented again; masks mostly unclaimed by the current masklets
    become new prompts (first appearing at that key frame) and everything is
    re-propagated. A key frame with no new elements leaves the masklets as
    they were. Masklets that end up empty at their first appearance after
    overlap resolution are discarded.
    """
    keys = key_frames(geometry, key_interval)
    first_set = seg.segment(0)
    if first_set.shape is not None and first_set.shape != geometry.shape:
        raise GeometryError(f"segmentation geometry {first_set.shape} != clip {geometry.shape}")

    next_id = 0
    initial = []
    for _, m in first_set:
        if m.area:
            initial.append((next_id, m))
            next_id += 1
    if not initial:
        raise ProviderError("segmentation of frame 0 returned no nonempty masks")
    prompts = PromptSet().extend(0, MaskSet(0, tuple(initial)))
    first_of = {eid: 0 for eid, _ in initial}
    by_id = _check_propagation(prop.propagate(prompts, geometry), prompts, geometry)

    for t in keys[1:]:
        candidates = seg.segment(t)
        if candidates.shape is not None and candidates.shape != geometry.shape:
            raise GeometryError(f"segmentation geometry {candidates.shape} at frame {t} != clip {geometry.shape}")
        existing = MaskSet(t, tuple((eid, by_id[eid].masks[t]) for eid in sorted(by_id)))
        delta = mask_set_subtract(candidates, existing, tau_new, min_area)
        if not delta.entries:
            continue
        new = []
        for _, m in delta:
            new.append((next_id, m))
            first_of[next_id] = t
            next_id += 1
        log.debug("key frame %d: %d new elements", t, len(new))
        prompts = prompts.extend(t, MaskSet(t, tuple(new)))
        by_id = _check_propagation(prop.propagate(prompts, geometry), prompts, geometry)

    ordered = [_restrict(by_id[eid], first_of[eid], geometry) for eid in sorted(by_id)]
    per_frame = []
    for t in range(geometry.frame_count):
        resolved = resolve_overlaps(MaskSet(t, tuple((m.element_id, m.masks[t]) for m in ordered)))
        per_frame.append(resolved.masks)
    result = []
    for i, m in enumerate(ordered):
        masks = tuple(per_frame[t][i] for t in range(geometry.frame_count))
        if masks[m.first_appearance_frame].area == 0:
            log.debug("dropping masklet %d: empty at first appearance after overlap resolution", m.element_id)
            continue
        result.append(Masklet(m.element_id, masks, m.first_appearance_frame))
    return result


def unassigned_pixels(masklets: Sequence[Masklet], geometry: ClipGeometry) -> list[int]:
    """Per-frame count of pixels claimed by no masklet."""
    counts = []
    for t in range(geometry.frame_count):
        covered = np.zeros(geometry.shape, dtype=bool)
        for m in masklets:
            covered |= m.masks[t].to_bitmap()
        counts.append(int(geometry.n_pixels - np.count_nonzero(covered)))
    return counts
