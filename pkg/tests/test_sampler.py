import math

import numpy as np
import pytest

from layercurate.sampler import SamplerConfig, layer_rng, sample_controls

EXPECTED = {"dropped": 0.10, "score": 0.18, "trajectory": 0.36, "sketch": 0.36}


def test_same_seed_same_assignment():
    a = sample_controls(4, SamplerConfig(seed=7), clip_id="c1")
    b = sample_controls(4, SamplerConfig(seed=7), clip_id="c1")
    assert a == b and a.codes.tobytes() == b.codes.tobytes()
    assert a.to_dict() == b.to_dict()


def test_clip_and_seed_change_the_draws():
    base = sample_controls(4, SamplerConfig(seed=7), clip_id="c1").draws
    assert sample_controls(4, SamplerConfig(seed=8), clip_id="c1").draws != base
    assert sample_controls(4, SamplerConfig(seed=7), clip_id="c2").draws != base


def test_layer_draws_do_not_depend_on_layer_count():
    two = sample_controls(2, SamplerConfig(seed=3), clip_id="x")
    four = sample_controls(4, SamplerConfig(seed=3), clip_id="x")
    assert four.draws[:2] == two.draws


def test_drop_everything():
    out = sample_controls(4, SamplerConfig(p_drop=1.0))
    assert out.controls == ("dropped",) * 4
    assert out.codes.tolist() == [0, 0, 0, 0]


def test_padding_slots_dropped():
    out = sample_controls(2, SamplerConfig(p_drop=0.0), capacity=4)
    assert out.controls[2:] == ("dropped", "dropped")
    assert out.draws[2:] == (None, None)
    assert "dropped" not in out.controls[:2]


def test_fallbacks():
    cfg = SamplerConfig(p_drop=0.0, p_score=0.0, p_trajectory=0.0, p_sketch=1.0)
    out = sample_controls(3, cfg, sketch_available=False, trajectory_available=[True, False, True])
    assert out.controls == ("trajectory", "score", "trajectory")
    assert out.degraded == (True, True, True)
    assert sample_controls(1, cfg).degraded == (False,)


@pytest.mark.parametrize(
    "kwargs",
    [dict(p_drop=1.5), dict(p_score=0.5), dict(seed=-1)],
)
def test_bad_config(kwargs):
    with pytest.raises(ValueError):
        SamplerConfig(**kwargs)


def test_bad_layer_counts():
    with pytest.raises(ValueError):
        sample_controls(0)
    with pytest.raises(ValueError):
        sample_controls(5, capacity=4)


def frequencies(n=10_000, seed=0):
    counts = dict.fromkeys(EXPECTED, 0)
    for i in range(n):
        (c,) = sample_controls(1, SamplerConfig(seed=seed), clip_id=f"clip{i}").controls
        counts[c] += 1
    return counts


def test_frequencies_within_three_sigma():
    n = 10_000
    counts = frequencies(n)
    for name, p in EXPECTED.items():
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts[name] - n * p) <= 3 * sigma, (name, counts)
    # chi-square with 3 dof, 99.9% quantile
    chi2 = sum((counts[k] - n * p) ** 2 / (n * p) for k, p in EXPECTED.items())
    assert chi2 < 16.27


def test_layer_rng_streams_are_independent():
    a = layer_rng(1, "c", 0, stream=0).random(4)
    b = layer_rng(1, "c", 0, stream=1).random(4)
    assert not np.array_equal(a, b)
    assert np.array_equal(a, layer_rng(1, "c", 0).random(4))
