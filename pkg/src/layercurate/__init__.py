"""Curate layer-decomposed, control-annotated training bundles from animation clips."""

from .assignment import LayerStack, decompose_reference, motion_based_assignment, pad_layers
from .config import ClipManifest, PipelineConfig, load_manifest
from .controls import (
    Track,
    encode_motion_score,
    filter_tracks,
    mask_sketch,
    rasterize_trajectories,
    seed_grid,
    track_mse,
)
from .masks import ClipGeometry, MaskSet, PixelMask, area, combine, coverage, mask_set_subtract, resolve_overlaps
from .merge import (
    HierarchicalMotionMerger,
    Layer,
    MergeConfig,
    MotionScore,
    MotionScoreNormalizer,
    classify,
    hierarchical_merge,
    masklet_motion_score,
    normalize_score,
)
from .sampler import ControlAssignment, SamplerConfig, sample_controls
from .segmentation import Masklet, PromptSet, curate_masklets, key_frames

__version__ = "0.1.0"
