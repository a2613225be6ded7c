import numpy as np
import pytest

from layercurate.masks import ClipGeometry, PixelMask


def bitmap_mask(rows):
    """Build a PixelMask from a list of '0'/'1' strings."""
    return PixelMask.from_bitmap(np.array([[c == "1" for c in r] for r in rows]))


def half(side, h=4, w=4):
    bits = np.zeros((h, w), dtype=bool)
    if side == "left":
        bits[:, : w // 2] = True
    elif side == "right":
        bits[:, w // 2 :] = True
    elif side == "top":
        bits[: h // 2] = True
    elif side == "bottom":
        bits[h // 2 :] = True
    return PixelMask.from_bitmap(bits)


@pytest.fixture
def geom4():
    return ClipGeometry(4, 4, 2)


def make_layer(masks, raw, layer_id=0, members=None):
    from layercurate.merge import Layer, MotionScore, classify

    return Layer(layer_id, members or (layer_id,), tuple(masks), MotionScore.from_raw(raw), classify(raw))


def recover_layers(gt, cfg=None):
    """Run curation, scoring and merging on a generated scene's perfect providers."""
    from layercurate.merge import MergeConfig, hierarchical_merge
    from layercurate.pipeline import score_masklets
    from layercurate.segmentation import curate_masklets

    masklets = curate_masklets(gt.geometry, gt.segmentation_provider(), gt.propagation_provider())
    kept, scores, _ = score_masklets(masklets, gt.flow)
    return masklets, hierarchical_merge(kept, scores, cfg or MergeConfig())


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    """Ten synthetic 320x512x16 clips cycling through 2, 3 and 4 true layers."""
    from layercurate.synth import synth_dataset

    root = tmp_path_factory.mktemp("synthetic")
    manifest, specs = synth_dataset(root, 10, seed=3)
    return manifest, specs
