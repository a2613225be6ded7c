"""Random encoded fixtures for the binary formats, keyed by a numpy Generator."""

import numpy as np

from layercurate.controls import Track
from layercurate.formats import TensorBundle, encode_lafl, encode_lamk, encode_latb, encode_latk
from layercurate.masks import MaskSet, PixelMask


def random_lamk(rng):
    h, w = (int(v) for v in rng.integers(1, 12, size=2))
    frames = []
    for t in range(int(rng.integers(0, 4))):
        ids = rng.choice(50, size=int(rng.integers(0, 5)), replace=False)
        entries = tuple((int(i), PixelMask.from_bitmap(rng.random((h, w)) < rng.random())) for i in ids)
        frames.append(MaskSet(t, entries))
    return encode_lamk(frames, h, w)


def random_lafl(rng):
    n, h, w = (int(v) for v in rng.integers(1, 6, size=3))
    return encode_lafl(rng.normal(0, 10, size=(n, h, w, 2)).astype(np.float32))


def random_latk(rng):
    f = int(rng.integers(1, 10))
    ids = rng.choice(1000, size=int(rng.integers(0, 6)), replace=False)
    tracks = [
        Track(int(i), rng.uniform(0, 500, size=(f, 2)).astype(np.float32), rng.random(f) < 0.8) for i in ids
    ]
    return encode_latk(tracks, f)


def random_latb(rng):
    b = TensorBundle(meta={"clip_id": f"c{int(rng.integers(1000))}", "n": [1, 2.5, None]})
    for k in range(int(rng.integers(0, 5))):
        dtype = rng.choice(["u1", "<f4", "<i8", "|b1", "<u2"])
        shape = tuple(int(s) for s in rng.integers(0, 4, size=int(rng.integers(0, 4))))
        b.add(f"a{k}", (rng.random(shape) * 100).astype(dtype))
    return encode_latb(b)


RANDOM_FIXTURES = {"LAMK": random_lamk, "LAFL": random_lafl, "LATK": random_latk, "LATB": random_latb}
