"""Little-endian binary file formats.

Every file opens with a 4-byte magic and a u16 version.

LAMK  masks      u32 H, u32 W, u32 n_frames, then per frame:
                 u32 frame_index, u32 n_entries, then per entry:
                 u32 element_id, u32 n_runs, n_runs x u32 canonical RLE runs
LAFL  flow       u32 n_flow_frames (F-1), u32 H, u32 W, then f32[n, H, W, 2]
LATK  tracks     u32 n_tracks, u32 F, then per track:
                 u32 track_id, F x (f32 x, f32 y, u8 visible)
LATB  bundle     u32 index_len, UTF-8 JSON index, then the raw array payloads
                 packed back to back in index order
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .controls import Track
from .exceptions import (
    BadMagicError,
    CorruptPayloadError,
    LengthMismatchError,
    UnsupportedVersionError,
)
from .masks import RUN_DTYPE, MaskSet, PixelMask

VERSION = 1
_PREAMBLE = struct.Struct("<4sH")


def write_atomic(path: str | os.PathLike, chunks: bytes | Iterable[bytes]) -> None:
    """Write to a temp file beside ``path`` then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(chunks, (bytes, bytearray, memoryview)):
        chunks = [chunks]
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            for c in chunks:
                fh.write(c)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class _Reader:
    def __init__(self, data: bytes, magic: bytes):
        self.data = memoryview(data)
        self.pos = 0
        if len(data) < _PREAMBLE.size:
            raise LengthMismatchError(f"{magic.decode()}: file too short for header ({len(data)} bytes)")
        got, version = _PREAMBLE.unpack_from(self.data, 0)
        if got != magic:
            raise BadMagicError(f"expected magic {magic!r}, got {bytes(got)!r}")
        if version != VERSION:
            raise UnsupportedVersionError(f"{magic.decode()}: unsupported version {version}")
        self.magic = magic.decode()
        self.pos = _PREAMBLE.size

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.data):
            raise LengthMismatchError(f"{self.magic}: truncated at byte {self.pos} (need {n} more)")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str) -> tuple:
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def finish(self) -> None:
        if self.pos != len(self.data):
            raise LengthMismatchError(f"{self.magic}: {len(self.data) - self.pos} trailing bytes")


def _preamble(magic: bytes) -> bytes:
    return _PREAMBLE.pack(magic, VERSION)


# --- LAMK ---------------------------------------------------------------

def encode_lamk(frames: Sequence[MaskSet], height: int, width: int) -> bytes:
    parts = [_preamble(b"LAMK"), struct.pack("<III", height, width, len(frames))]
    for s in frames:
        if s.shape is not None and s.shape != (height, width):
            raise ValueError(f"mask set geometry {s.shape} != {(height, width)}")
        parts.append(struct.pack("<II", s.frame_index, len(s)))
        for eid, m in s:
            parts.append(struct.pack("<II", eid, m.runs.size))
            parts.append(m.runs.astype(RUN_DTYPE, copy=False).tobytes())
    return b"".join(parts)


def decode_lamk(data: bytes) -> tuple[int, int, list[MaskSet]]:
    r = _Reader(data, b"LAMK")
    height, width, n_frames = r.unpack("<III")
    if height < 1 or width < 1:
        raise CorruptPayloadError(f"LAMK: bad geometry {height}x{width}")
    frames = []
    for _ in range(n_frames):
        frame_index, n_entries = r.unpack("<II")
        entries = []
        for _ in range(n_entries):
            eid, n_runs = r.unpack("<II")
            runs = np.frombuffer(r.take(4 * n_runs), dtype=RUN_DTYPE)
            try:
                entries.append((eid, PixelMask(height, width, runs)))
            except ValueError as exc:
                raise CorruptPayloadError(f"LAMK: element {eid} at frame {frame_index}: {exc}") from None
        try:
            frames.append(MaskSet(frame_index, tuple(entries)))
        except ValueError as exc:
            raise CorruptPayloadError(f"LAMK: frame {frame_index}: {exc}") from None
    r.finish()
    return height, width, frames


def write_lamk(path, frames: Sequence[MaskSet], height: int, width: int) -> None:
    write_atomic(path, encode_lamk(frames, height, width))


def read_lamk(path) -> tuple[int, int, list[MaskSet]]:
    return decode_lamk(Path(path).read_bytes())


# --- LAFL ---------------------------------------------------------------

FLOW_DTYPE = np.dtype("<f4")


def encode_lafl(flow: np.ndarray) -> bytes:
    flow = np.asarray(flow)
    if flow.ndim != 4 or flow.shape[-1] != 2:
        raise ValueError(f"flow must have shape (F-1, H, W, 2), got {flow.shape}")
    n, h, w, _ = flow.shape
    payload = np.ascontiguousarray(flow, dtype=FLOW_DTYPE).tobytes()
    return _preamble(b"LAFL") + struct.pack("<III", n, h, w) + payload


def decode_lafl(data: bytes) -> np.ndarray:
    r = _Reader(data, b"LAFL")
    n, h, w = r.unpack("<III")
    if n < 1 or h < 1 or w < 1:
        raise CorruptPayloadError(f"LAFL: bad dimensions {n}x{h}x{w}")
    flow = np.frombuffer(r.take(n * h * w * 2 * FLOW_DTYPE.itemsize), dtype=FLOW_DTYPE).reshape(n, h, w, 2)
    r.finish()
    if not np.all(np.isfinite(flow)):
        raise CorruptPayloadError("LAFL: non-finite flow values")
    return flow


def write_lafl(path, flow: np.ndarray) -> None:
    write_atomic(path, encode_lafl(flow))


def read_lafl(path) -> np.ndarray:
    return decode_lafl(Path(path).read_bytes())


# --- LATK ---------------------------------------------------------------

_POINT = np.dtype([("x", "<f4"), ("y", "<f4"), ("v", "u1")])


def _track_dtype(frame_count: int) -> np.dtype:
    return np.dtype([("id", "<u4"), ("pts", _POINT, (frame_count,))])


def encode_latk(tracks: Sequence[Track], frame_count: int) -> bytes:
    rec = np.zeros(len(tracks), dtype=_track_dtype(frame_count))
    for i, tr in enumerate(tracks):
        if tr.frame_count != frame_count:
            raise ValueError(f"track {tr.track_id} has {tr.frame_count} frames, expected {frame_count}")
        rec["id"][i] = tr.track_id
        rec["pts"]["x"][i] = tr.xy[:, 0]
        rec["pts"]["y"][i] = tr.xy[:, 1]
        rec["pts"]["v"][i] = tr.visible
    return _preamble(b"LATK") + struct.pack("<II", len(tracks), frame_count) + rec.tobytes()


def decode_latk(data: bytes) -> tuple[int, list[Track]]:
    r = _Reader(data, b"LATK")
    count, frame_count = r.unpack("<II")
    if frame_count < 1:
        raise CorruptPayloadError(f"LATK: bad frame count {frame_count}")
    dt = _track_dtype(frame_count)
    rec = np.frombuffer(r.take(count * dt.itemsize), dtype=dt)
    r.finish()
    vis = rec["pts"]["v"]
    if np.any(vis > 1):
        raise CorruptPayloadError("LATK: visibility byte not 0/1")
    x, y = rec["pts"]["x"], rec["pts"]["y"]
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise CorruptPayloadError("LATK: non-finite coordinates")
    ids = rec["id"]
    if len(np.unique(ids)) != count:
        raise CorruptPayloadError("LATK: duplicate track ids")
    tracks = [
        Track(int(ids[i]), np.stack([x[i], y[i]], axis=1).astype(np.float64), vis[i].astype(bool))
        for i in range(count)
    ]
    return frame_count, tracks


def write_latk(path, tracks: Sequence[Track], frame_count: int) -> None:
    write_atomic(path, encode_latk(tracks, frame_count))


def read_latk(path) -> tuple[int, list[Track]]:
    return decode_latk(Path(path).read_bytes())


# --- LATB ---------------------------------------------------------------

_ALLOWED_KINDS = "biuf"


def _le_dtype(dt: np.dtype) -> np.dtype:
    if dt.kind not in _ALLOWED_KINDS:
        raise ValueError(f"unsupported bundle dtype {dt}")
    return dt.newbyteorder("<") if dt.itemsize > 1 else dt


@dataclass
class TensorBundle:
    """Named arrays plus a JSON-serializable metadata document."""

    arrays: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.arrays:
            raise KeyError(f"array {name!r} already in bundle")
        self.arrays[name] = np.asarray(array)

    def _index(self) -> tuple[bytes, list[np.ndarray]]:
        entries, payloads, offset = [], [], 0
        for name, arr in self.arrays.items():
            dt = _le_dtype(arr.dtype)
            data = np.ascontiguousarray(arr, dtype=dt)
            entries.append(
                {"name": name, "dtype": dt.str, "shape": list(data.shape), "offset": offset, "nbytes": data.nbytes}
            )
            payloads.append(data)
            offset += data.nbytes
        index = json.dumps({"arrays": entries, "meta": self.meta}, sort_keys=True, separators=(",", ":"))
        return index.encode("utf-8"), payloads

    def chunks(self) -> Iterable[bytes]:
        index, payloads = self._index()
        yield _preamble(b"LATB") + struct.pack("<I", len(index)) + index
        for p in payloads:
            yield p.tobytes()


def encode_latb(bundle: TensorBundle) -> bytes:
    return b"".join(bundle.chunks())


def decode_latb(data: bytes) -> TensorBundle:
    r = _Reader(data, b"LATB")
    (index_len,) = r.unpack("<I")
    raw_index = bytes(r.take(index_len))
    try:
        index = json.loads(raw_index.decode("utf-8"))
        entries, meta = index["arrays"], index["meta"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptPayloadError(f"LATB: unreadable index: {exc}") from None
    start = r.pos
    arrays: dict[str, np.ndarray] = {}
    expected_offset = 0
    for e in entries:
        try:
            name, dt, shape = e["name"], np.dtype(e["dtype"]), tuple(int(s) for s in e["shape"])
            offset, nbytes = int(e["offset"]), int(e["nbytes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorruptPayloadError(f"LATB: bad index entry {e!r}: {exc}") from None
        if dt.kind not in _ALLOWED_KINDS or name in arrays:
            raise CorruptPayloadError(f"LATB: bad index entry {e!r}")
        if offset != expected_offset or nbytes != int(np.prod(shape, dtype=np.int64)) * dt.itemsize:
            raise CorruptPayloadError(f"LATB: entry {name!r} offset/size disagree with its shape")
        buf = r.take(nbytes)
        arrays[name] = np.frombuffer(buf, dtype=dt).reshape(shape)
        expected_offset += nbytes
    r.finish()
    assert r.pos - start == expected_offset
    return TensorBundle(arrays, meta)


def write_latb(path, bundle: TensorBundle) -> None:
    write_atomic(path, bundle.chunks())


def read_latb(path) -> TensorBundle:
    return decode_latb(Path(path).read_bytes())


def read_latb_meta(path) -> dict:
    """Read only the JSON index of a bundle file."""
    with open(path, "rb") as fh:
        head = fh.read(_PREAMBLE.size + 4)
        r = _Reader(head, b"LATB")
        (index_len,) = r.unpack("<I")
        raw = fh.read(index_len)
    if len(raw) != index_len:
        raise LengthMismatchError("LATB: truncated index")
    try:
        return json.loads(raw.decode("utf-8"))["meta"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise CorruptPayloadError(f"LATB: unreadable index: {exc}") from None
