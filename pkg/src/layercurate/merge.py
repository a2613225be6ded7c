"""Motion scores from optical flow and bottom-up merging of masklets into layers."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import EmptyMaskError, GeometryError
from .masks import MaskSet, PixelMask, resolve_overlaps
from .segmentation import Masklet
from .validation import check_flow, check_scores

MotionClass = Literal["static", "dynamic"]

DEFAULT_CAPACITY = 4
DEFAULT_MERGE_THRESHOLD = 1.0
DEFAULT_STATIC_THRESHOLD = 0.1
DEFAULT_S_MAX = 30.0


@dataclass(frozen=True)
class MergeConfig:
    capacity: int = DEFAULT_CAPACITY
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD
    static_threshold: float = DEFAULT_STATIC_THRESHOLD
    s_max: float = DEFAULT_S_MAX

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        if self.merge_threshold < 0:
            raise ValueError(f"merge_threshold must be >= 0, got {self.merge_threshold}")
        if self.s_max <= 0:
            raise ValueError(f"s_max must be > 0, got {self.s_max}")


@dataclass(frozen=True)
class MotionScore:
    raw: float
    normalized: float

    @classmethod
    def from_raw(cls, raw: float, s_max: float = DEFAULT_S_MAX) -> "MotionScore":
        return cls(raw, normalize_score(raw, s_max))


def flow_magnitude(flow: np.ndarray) -> np.ndarray:
    """Per-pixel flow magnitude in float64; direction is discarded."""
    flow = np.asarray(flow, dtype=np.float64)
    return np.hypot(flow[..., 0], flow[..., 1])


def masklet_motion_score(masklet: Masklet, flow: np.ndarray, *, magnitude: np.ndarray | None = None) -> float:
    """Mean flow magnitude over every (pixel, frame) the masklet covers.

    ``flow`` has shape ``(F-1, H, W, 2)``; frame ``t`` of the masklet is paired
    with flow ``t -> t+1``. A precomputed ``magnitude`` array may be passed to
    avoid recomputing it per masklet.
    """
    if magnitude is None:
        flow = check_flow(flow)
        magnitude = flow_magnitude(flow)
    n_flow = magnitude.shape[0]
    if n_flow != masklet.frame_count - 1:
        raise GeometryError(f"flow has {n_flow} frames, masklet has {masklet.frame_count}")
    if masklet.masks[0].shape != magnitude.shape[1:]:
        raise GeometryError(f"flow geometry {magnitude.shape[1:]} != mask geometry {masklet.masks[0].shape}")
    sums, count = [], 0
    for t in range(n_flow):
        m = masklet.masks[t]
        if m.area == 0:
            continue
        sums.append(float(magnitude[t][m.to_bitmap()].sum()))
        count += m.area
    if count == 0:
        raise EmptyMaskError(f"masklet {masklet.element_id} is empty over all flow frames")
    return math.fsum(sums) / count


def normalize_score(raw: float, s_max: float = DEFAULT_S_MAX) -> float:
    if raw < 0:
        raise ValueError(f"motion score must be >= 0, got {raw}")
    return min(raw / s_max, 1.0)


def classify(raw: float, eta: float = DEFAULT_STATIC_THRESHOLD) -> MotionClass:
    return "static" if raw < eta else "dynamic"


def _cluster_score(scores: Sequence[float]) -> float:
    return math.fsum(scores) / len(scores)


def agglomerate(
    scores: Sequence[float],
    ids: Sequence[int] | None = None,
    capacity: int = DEFAULT_CAPACITY,
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD,
) -> tuple[list[list[int]], list[tuple[int, int, float]]]:
    """Greedy 1-D agglomeration on scalar scores.

    Clusters are merged pairwise, closest scores first, until there are at
    most ``capacity`` clusters and every pair of cluster scores differs by
    more than ``merge_threshold``. A cluster's score is the plain mean of its
    members' scores. Ties go to the pair whose smallest member ids are lower.

    Returns the clusters as lists of positions into ``scores`` and the merge
    history as ``(left, right, distance)`` tuples of cluster positions at the
    time of the merge.
    """
    n = len(scores)
    if n == 0:
        raise ValueError("need at least one score to merge")
    ids = list(range(n)) if ids is None else [int(i) for i in ids]
    if len(set(ids)) != n:
        raise ValueError("ids must be unique")

    clusters = sorted(([i] for i in range(n)), key=lambda c: (scores[c[0]], ids[c[0]]))
    values = [float(scores[c[0]]) for c in clusters]
    history = []
    while len(clusters) > 1:
        # In 1-D the closest pair of clusters is always adjacent in score order.
        best = None
        for k in range(len(clusters) - 1):
            d = values[k + 1] - values[k]
            a = min(ids[i] for i in clusters[k])
            b = min(ids[i] for i in clusters[k + 1])
            key = (d, min(a, b), max(a, b))
            if best is None or key < best[0]:
                best = (key, k)
        (d, _, _), k = best
        if len(clusters) <= capacity and d > merge_threshold:
            break
        merged = clusters[k] + clusters[k + 1]
        history.append((k, k + 1, d))
        clusters[k : k + 2] = [merged]
        values[k : k + 2] = [_cluster_score([scores[i] for i in merged])]
        # Mean of a merged cluster can leave it out of order with a neighbor
        # only through rounding; keep the invariant explicit.
        order = sorted(range(len(clusters)), key=lambda j: (values[j], min(ids[i] for i in clusters[j])))
        clusters = [clusters[j] for j in order]
        values = [values[j] for j in order]
    return [sorted(c, key=lambda i: ids[i]) for c in clusters], history


@dataclass(frozen=True)
class Layer:
    layer_id: int
    members: tuple[int, ...]
    masks: tuple[PixelMask, ...]
    score: MotionScore
    motion_class: MotionClass

    @property
    def frame_count(self) -> int:
        return len(self.masks)

    @property
    def raw_score(self) -> float:
        return self.score.raw

    @property
    def is_static(self) -> bool:
        return self.motion_class == "static"


def hierarchical_merge(
    masklets: Sequence[Masklet],
    scores: Sequence[float],
    cfg: MergeConfig = MergeConfig(),
) -> list[Layer]:
    """Group masklets into layers by motion score.

    Layers are returned in ascending score order (ties by smallest member id)
    and numbered in that order, so the result does not depend on input order.
    """
    if not masklets:
        raise ValueError("hierarchical_merge needs at least one masklet")
    if len(masklets) != len(scores):
        raise ValueError(f"{len(masklets)} masklets but {len(scores)} scores")
    scores = check_scores(scores)
    ids = [m.element_id for m in masklets]
    groups, _ = agglomerate(scores, ids, cfg.capacity, cfg.merge_threshold)

    frame_count = masklets[0].frame_count
    h, w = masklets[0].masks[0].shape
    unions = []
    for g in groups:
        per_frame = []
        for t in range(frame_count):
            acc = np.zeros((h, w), dtype=bool)
            for i in g:
                acc |= masklets[i].masks[t].to_bitmap()
            per_frame.append(PixelMask.from_bitmap(acc))
        unions.append(per_frame)
    # Member masklets may overlap if the caller skipped curation.
    resolved = [
        resolve_overlaps(MaskSet(t, tuple((k, unions[k][t]) for k in range(len(groups))))).masks
        for t in range(frame_count)
    ]

    layers = []
    for k, g in enumerate(groups):
        raw = _cluster_score([scores[i] for i in g])
        layers.append(
            Layer(
                layer_id=k,
                members=tuple(ids[i] for i in g),
                masks=tuple(resolved[t][k] for t in range(frame_count)),
                score=MotionScore.from_raw(raw, cfg.s_max),
                motion_class=classify(raw, cfg.static_threshold),
            )
        )
    return layers


class HierarchicalMotionMerger(ClusterMixin, BaseEstimator):
    """Agglomerative clustering of scalar motion scores with a capacity cap.

    Parameters
    ----------
    capacity : int, default=4
        Maximum number of clusters left once merging stops.
    merge_threshold : float, default=1.0
        Merging continues while any two clusters are within this distance.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Cluster index per sample; clusters are numbered by ascending score.
    cluster_scores_ : ndarray of shape (n_clusters_,)
    n_clusters_ : int
    merge_history_ : list of (left, right, distance)
    """

    def __init__(self, capacity=DEFAULT_CAPACITY, merge_threshold=DEFAULT_MERGE_THRESHOLD):
        self.capacity = capacity
        self.merge_threshold = merge_threshold

    def fit(self, X, y=None, ids=None):
        scores = check_scores(X)
        if self.capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {self.capacity}")
        groups, history = agglomerate(scores, ids, self.capacity, self.merge_threshold)
        labels = np.empty(len(scores), dtype=np.intp)
        for k, g in enumerate(groups):
            labels[g] = k
        self.labels_ = labels
        self.cluster_scores_ = np.array([_cluster_score([scores[i] for i in g]) for g in groups])
        self.n_clusters_ = len(groups)
        self.merge_history_ = history
        return self


class MotionScoreNormalizer(TransformerMixin, BaseEstimator):
    """Clamp-divide raw motion scores into ``[0, 1]``."""

    def __init__(self, s_max=DEFAULT_S_MAX):
        self.s_max = s_max

    def fit(self, X, y=None):
        if self.s_max <= 0:
            raise ValueError(f"s_max must be > 0, got {self.s_max}")
        check_scores(X)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        scores = check_scores(X)
        return np.minimum(scores / self.s_max, 1.0)
