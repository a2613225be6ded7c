"""Acceptance suite: one test per headline criterion, each printing a PASS/FAIL line."""

import hashlib
import math
import random
import shutil
import struct
import time
from collections import Counter

import numpy as np
import pytest

from conftest import half, recover_layers
from fixtures import RANDOM_FIXTURES
from oracles import brute_force_agglomerate
from layercurate.assignment import decompose_reference, motion_based_assignment
from layercurate.config import PipelineConfig, load_manifest
from layercurate.controls import Track, filter_tracks, rasterize_trajectories
from layercurate.exceptions import BadMagicError, LengthMismatchError, UnsupportedVersionError
from layercurate.formats import (
    decode_lafl,
    decode_lamk,
    decode_latb,
    decode_latk,
    encode_lafl,
    encode_lamk,
    encode_latb,
    encode_latk,
)
from layercurate.masks import ClipGeometry, PixelMask
from layercurate.merge import MergeConfig, hierarchical_merge, masklet_motion_score, normalize_score
from layercurate.pipeline import run_batch
from layercurate.sampler import SamplerConfig, sample_controls
from layercurate.segmentation import Masklet
from layercurate.synth import generate_scene, random_scene, synth_dataset

GEOM = ClipGeometry(320, 512, 16)


@pytest.fixture
def report(capsys):
    def emit(name, ok, detail):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        assert ok, detail

    return emit


def column_masklets(ids, h=4, frames=2):
    w = len(ids)
    out = []
    for col, eid in enumerate(ids):
        bits = np.zeros((h, w), bool)
        bits[:, col] = True
        out.append(Masklet(eid, (PixelMask.from_bitmap(bits),) * frames))
    return out


def test_merge_matches_oracle(report):
    start = time.perf_counter()
    rng = random.Random(20240611)
    mismatches = 0
    for _ in range(200):
        n = rng.randint(1, 8)
        # coarse rounding makes exact ties and threshold-boundary gaps common
        scores = [round(rng.uniform(0, 12), rng.choice([0, 1, 2, 6])) for _ in range(n)]
        ids = rng.sample(range(64), n)
        cap, thr = rng.randint(1, 5), rng.choice([0.0, 0.5, 1.0, 2.0])
        layers = hierarchical_merge(column_masklets(ids), scores, MergeConfig(cap, thr))
        got = {la.members: la.raw_score for la in layers}
        mismatches += got != brute_force_agglomerate(scores, ids, cap, thr)
    worked = [0.05, 0.12, 4.8, 5.3, 20.0]
    layers = hierarchical_merge(column_masklets(range(5)), worked, MergeConfig(4, 1.0))
    err = max(abs(la.raw_score - e) for la, e in zip(layers, [0.085, 5.05, 20.0]))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and len(layers) == 3 and err <= 1e-12 and elapsed < 5.0
    report(
        "merge oracle equivalence",
        ok,
        f"{mismatches}/200 mismatches, worked example {len(layers)} layers max err {err:.1e}, {elapsed:.2f}s",
    )


def test_synthetic_recovery(report):
    start = time.perf_counter()
    failures, splits_seen, counts_seen, appear_checked = [], set(), Counter(), 0
    for i in range(50):
        g = 2 + i % 3
        appear = 8 if i % 5 == 4 else None
        gt = generate_scene(random_scene(1000 + i, GEOM, g, appear_frame=appear))
        masklets, layers = recover_layers(gt)
        counts_seen[g] += 1
        splits_seen.update(ob.splits for ob in gt.spec.objects)
        if len(layers) != g:
            failures.append(f"scene {i}: {len(layers)} layers, expected {g}")
            continue
        truth = {grp: (gt.layer_masks(grp), s) for grp, s in zip(gt.layer_groups, gt.layer_scores)}
        for la in layers:
            if la.members not in truth:
                failures.append(f"scene {i}: unexpected grouping {la.members}")
                continue
            masks, score = truth[la.members]
            if list(la.masks) != masks:
                failures.append(f"scene {i}: layer {la.members} masks differ")
            if abs(la.raw_score - score) > 1e-9:
                failures.append(f"scene {i}: score {la.raw_score} vs {score}")
        if appear is not None:
            appear_checked += 1
            late = set(gt.layer_groups[-1])
            firsts = {m.first_appearance_frame for m in masklets if m.element_id in late}
            if firsts != {appear}:
                failures.append(f"scene {i}: first appearance {firsts}")
    elapsed = time.perf_counter() - start
    coverage_ok = splits_seen == set(range(2, 7)) and set(counts_seen) == {2, 3, 4}
    ok = not failures and coverage_ok and appear_checked > 0 and elapsed < 30.0
    detail = (
        f"50 scenes, G={dict(sorted(counts_seen.items()))}, j={sorted(splits_seen)}, "
        f"{appear_checked} appearing, {len(failures)} failures, {elapsed:.1f}s"
    )
    report("synthetic end-to-end recovery", ok, detail + (f"; first: {failures[0]}" if failures else ""))


def test_motion_scoring(report):
    m = column_masklets([0], h=6, frames=3)[0]
    flow = np.zeros((2, 6, 1, 2), np.float32)
    flow[..., 0], flow[..., 1] = 3, 4
    constant = masklet_motion_score(m, flow)

    a = np.zeros((4, 4), bool)
    a[0, :2] = True
    b = np.zeros((4, 4), bool)
    b[1:3, :3] = True
    mixed = Masklet(0, (PixelMask.from_bitmap(a), PixelMask.from_bitmap(b), PixelMask.empty(4, 4)))
    mflow = np.zeros((2, 4, 4, 2), np.float32)
    mflow[0, ..., 1] = 2.0
    mflow[1, ..., 0] = 6.0
    pixels = [(t, r, c) for t, bits in enumerate((a, b)) for r, c in zip(*np.nonzero(bits))]
    oracle = sum(math.hypot(*mflow[t, r, c]) for t, r, c in pixels) / len(pixels)
    weighted = masklet_motion_score(mixed, mflow)

    norms = [normalize_score(x, 30.0) for x in (30.0, 45.0, 15.0)]
    ok = constant == 5.0 and weighted == oracle == 5.0 and norms == [1.0, 1.0, 0.5]
    report("motion scoring", ok, f"constant {constant}, weighted {weighted} (oracle {oracle}), normalize {norms}")


def test_assignment_tensors(report):
    problems, shapes = [], set()
    for g in (2, 4):
        gt = generate_scene(random_scene(77 + g, GEOM, g))
        _, layers = recover_layers(gt)
        regions = decompose_reference(gt.frames[0], layers)
        stack = motion_based_assignment(layers, regions, capacity=4)
        shapes.add((stack.masks.shape, stack.regions.shape))
        for k in range(4):
            if k >= len(layers):
                if stack.validity[k] or stack.masks[k].any() or stack.regions[k].any():
                    problems.append(f"G={g} padded slot {k} not zero/invalid")
            elif layers[k].is_static:
                ref_m, ref_r = stack.masks[k, 0].tobytes(), stack.regions[k, 0].tobytes()
                if any(stack.masks[k, t].tobytes() != ref_m or stack.regions[k, t].tobytes() != ref_r for t in range(16)):
                    problems.append(f"G={g} static slot {k} not replicated")
            elif stack.masks[k, 1:].any() or stack.regions[k, 1:].any():
                problems.append(f"G={g} dynamic slot {k} nonzero off-reference")
        if not stack.static[: len(layers)].any() or stack.static[: len(layers)].all():
            problems.append(f"G={g} expected both static and dynamic slots")
    expected = {((4, 16, 1, 320, 512), (4, 16, 3, 320, 512))}
    ok = not problems and shapes == expected
    report("assignment tensors", ok, f"shapes {sorted(shapes)}, {len(problems)} problems {problems[:2]}")


def test_trajectory_filter_and_encoding(report):
    g16 = ClipGeometry(16, 16, 16)
    left = Masklet(0, (half("left", 16, 16),) * 16)

    def inside_for(n):
        xy = np.tile([3.0, 5.0], (16, 1))
        xy[n:, 0] = 12.0
        return Track(0, xy, np.ones(16, bool))

    dropped = filter_tracks([inside_for(12)], [left], g16)[0] == []
    kept = len(filter_tracks([inside_for(14)], [left], g16)[0]) == 1

    geom = ClipGeometry(80, 512, 4)
    still = rasterize_trajectories([Track(0, np.tile([100.0, 50.0], (4, 1)), np.ones(4, bool))], geom)
    peak_ok = all(still[t, 0, 50, 100] == 1.0 for t in range(4))
    static_zero = not still[:, 1:].any()
    moving = rasterize_trajectories([Track(1, [[100.0 + 8 * t, 40.0] for t in range(4)], np.ones(4, bool))], geom)
    support = moving[:3, 0] > 0
    dx_err = float(np.abs(moving[:3, 1][support] - 0.015625).max())

    ok = dropped and kept and peak_ok and static_zero and dx_err <= 1e-9
    report(
        "trajectory filter and encoding",
        ok,
        f"12/16 dropped={dropped}, 14/16 kept={kept}, peak 1.0={peak_ok}, "
        f"offset-x err {dx_err:.1e}, static offsets zero={static_zero}",
    )


def test_sampler_statistics(report):
    n = 10_000
    expected = {"dropped": 0.10, "score": 0.18, "trajectory": 0.36, "sketch": 0.36}
    counts = Counter(sample_controls(1, SamplerConfig(seed=2024), clip_id=f"c{i}").controls[0] for i in range(n))
    z = {k: (counts[k] - n * p) / math.sqrt(n * p * (1 - p)) for k, p in expected.items()}
    runs = [sample_controls(4, SamplerConfig(seed=99), clip_id="same") for _ in range(2)]
    same = runs[0].codes.tobytes() == runs[1].codes.tobytes() and runs[0].to_dict() == runs[1].to_dict()
    ok = all(abs(v) <= 3 for v in z.values()) and same
    zs = ", ".join(f"{k} {counts[k]} (z={v:+.2f})" for k, v in z.items())
    report("sampler statistics", ok, f"{zs}; reproducible={same}")


def test_format_round_trips(report):
    reencode = {
        "LAMK": lambda d: encode_lamk(decode_lamk(d)[2], *decode_lamk(d)[:2]),
        "LAFL": lambda d: encode_lafl(decode_lafl(d)),
        "LATK": lambda d: encode_latk(decode_latk(d)[1], decode_latk(d)[0]),
        "LATB": lambda d: encode_latb(decode_latb(d)),
    }
    decoders = {"LAMK": decode_lamk, "LAFL": decode_lafl, "LATK": decode_latk, "LATB": decode_latb}
    bad_round_trips, wrong_errors = 0, []
    for fmt, make in RANDOM_FIXTURES.items():
        rng = np.random.default_rng(len(fmt) * 1000 + ord(fmt[-1]))
        for _ in range(100):
            data = make(rng)
            bad_round_trips += reencode[fmt](data) != data
        corruptions = {
            BadMagicError: b"ZZZZ" + data[4:],
            UnsupportedVersionError: data[:4] + struct.pack("<H", 9) + data[6:],
            LengthMismatchError: data[:-1] if len(data) > 6 else data + b"\0",
        }
        for err, blob in corruptions.items():
            try:
                decoders[fmt](blob)
                wrong_errors.append(f"{fmt}: no error for {err.__name__}")
            except Exception as exc:  # noqa: BLE001 - checking the exact class
                if type(exc) is not err:
                    wrong_errors.append(f"{fmt}: {type(exc).__name__} for {err.__name__}")
    ok = bad_round_trips == 0 and not wrong_errors
    report(
        "format round-trips",
        ok,
        f"4 formats x 100 fixtures, {bad_round_trips} non-identical; corruption errors {wrong_errors or 'distinct'}",
    )


def _hash_and_remove(out_dir, clip_ids):
    digests = {cid: hashlib.sha256((out_dir / f"{cid}.latb").read_bytes()).hexdigest() for cid in clip_ids}
    shutil.rmtree(out_dir)
    return digests


def test_pipeline_determinism_and_throughput(report, tmp_path):
    manifest, _ = synth_dataset(tmp_path / "data", 50, seed=7, geometry=GEOM)
    clips = load_manifest(manifest)
    ids = [c.clip_id for c in clips]
    cfg = PipelineConfig(seed=123)

    start = time.perf_counter()
    serial = run_batch(clips, cfg, tmp_path / "jobs1", jobs=1)
    elapsed = time.perf_counter() - start
    h1 = _hash_and_remove(tmp_path / "jobs1", ids)

    parallel = run_batch(clips, cfg, tmp_path / "jobs8", jobs=8)
    h8 = _hash_and_remove(tmp_path / "jobs8", ids)

    differing = [cid for cid in ids if h1[cid] != h8[cid]]
    failed = serial["failed"] + parallel["failed"]
    ok = not differing and failed == 0 and elapsed < 120.0
    report(
        "pipeline determinism and throughput",
        ok,
        f"50 clips 320x512x16, {len(differing)} bundles differ between jobs 1 and 8, "
        f"{failed} failures, jobs 1 took {elapsed:.1f}s",
    )
