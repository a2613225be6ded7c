import os
import struct

import numpy as np
import pytest

from fixtures import RANDOM_FIXTURES
from layercurate.exceptions import (
    BadMagicError,
    CorruptPayloadError,
    FormatError,
    LengthMismatchError,
    UnsupportedVersionError,
)
from layercurate.formats import (
    TensorBundle,
    decode_lafl,
    decode_lamk,
    decode_latb,
    decode_latk,
    encode_lafl,
    encode_lamk,
    encode_latb,
    encode_latk,
    read_latb,
    read_latb_meta,
    write_latb,
)

CODECS = {
    "LAMK": (lambda d: encode_lamk(decode_lamk(d)[2], *decode_lamk(d)[:2]), decode_lamk),
    "LAFL": (lambda d: encode_lafl(decode_lafl(d)), decode_lafl),
    "LATK": (lambda d: encode_latk(decode_latk(d)[1], decode_latk(d)[0]), decode_latk),
    "LATB": (lambda d: encode_latb(decode_latb(d)), decode_latb),
}


@pytest.mark.parametrize("fmt", sorted(CODECS))
def test_round_trip_is_byte_identical(fmt):
    rng = np.random.default_rng(hash(fmt) & 0xFFFF)
    reencode, _ = CODECS[fmt]
    for _ in range(100):
        data = RANDOM_FIXTURES[fmt](rng)
        assert reencode(data) == data


@pytest.mark.parametrize("fmt", sorted(CODECS))
def test_corruptions_raise_distinct_errors(fmt):
    data = RANDOM_FIXTURES[fmt](np.random.default_rng(1))
    _, decode = CODECS[fmt]
    with pytest.raises(BadMagicError):
        decode(b"XXXX" + data[4:])
    with pytest.raises(UnsupportedVersionError):
        decode(data[:4] + struct.pack("<H", 2) + data[6:])
    with pytest.raises(LengthMismatchError):
        decode(data + b"\0")
    with pytest.raises(LengthMismatchError):
        decode(data[:5])


def test_error_classes_are_distinct():
    classes = {BadMagicError, UnsupportedVersionError, LengthMismatchError, CorruptPayloadError}
    assert len(classes) == 4
    for a in classes:
        assert issubclass(a, FormatError)
        assert not any(issubclass(a, b) for b in classes - {a})


def test_truncated_payload():
    data = encode_lafl(np.zeros((1, 2, 2, 2), np.float32))
    with pytest.raises(LengthMismatchError):
        decode_lafl(data[:-4])


def test_corrupt_payloads():
    flow = np.zeros((1, 2, 2, 2), np.float32)
    flow[0, 0, 0, 0] = np.nan
    with pytest.raises(CorruptPayloadError):
        decode_lafl(encode_lafl(flow))
    bad_runs = encode_lamk([], 2, 2)[:-4] + struct.pack("<I", 1) + struct.pack("<IIIII", 0, 1, 3, 1, 3)
    with pytest.raises(CorruptPayloadError):
        decode_lamk(bad_runs)


def test_bundle_file_and_meta(tmp_path):
    b = TensorBundle(meta={"clip_id": "x"})
    b.add("m", np.arange(6, dtype=np.uint8).reshape(2, 3))
    b.add("s", np.array([0.5, 1.0], np.float32))
    path = tmp_path / "b.latb"
    write_latb(path, b)
    assert read_latb_meta(path) == {"clip_id": "x"}
    back = read_latb(path)
    assert np.array_equal(back["m"], b["m"]) and back["s"].dtype == np.dtype("<f4")
    assert os.stat(path).st_mode & 0o777 == 0o644
    assert [p.name for p in tmp_path.iterdir()] == ["b.latb"]
    with pytest.raises(KeyError):
        b.add("m", np.zeros(1))


def test_bundle_rejects_object_arrays():
    b = TensorBundle()
    b.add("o", np.array(["a"], dtype=object))
    with pytest.raises(ValueError):
        encode_latb(b)
