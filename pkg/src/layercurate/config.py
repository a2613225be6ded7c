"""Pipeline configuration and clip manifests (JSON documents, unknown keys rejected).

Config document, every key optional::

    {"key_interval": 4, "tau_new": 0.5, "min_area": 64, "capacity": 4,
     "merge_threshold": 1.0, "static_threshold": 0.1, "s_max": 30.0,
     "grid": 60, "min_overlap": 0.8, "sigma": 5.0,
     "track_sampling": "sample" | "all", "max_sampled_tracks": 8,
     "mode": "i2v" | "interpolation", "working_resolution": [512, 320] | null,
     "seed": 0,
     "sampler": {"p_drop": 0.1, "p_score": 0.2, "p_trajectory": 0.4, "p_sketch": 0.4}}

Manifest document (paths relative to the manifest file)::

    {"version": 1,
     "clips": [{"clip_id": "...", "frame_count": 16, "height": 320, "width": 512,
                "fps": 8.0, "frames": [...], "masks": "...", "masklets": "...",
                "flow": "...", "tracks": "...", "sketches": [...] | null}]}
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .exceptions import ManifestError
from .masks import ClipGeometry
from .merge import MergeConfig
from .sampler import SamplerConfig

MIN_CLIP_FRAMES = 16
MAX_CLIP_FRAMES = 128


def _reject_unknown(doc: dict, allowed, where: str) -> None:
    if not isinstance(doc, dict):
        raise ManifestError(f"{where}: expected an object, got {type(doc).__name__}")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ManifestError(f"{where}: unknown keys {unknown}")


@dataclass(frozen=True)
class SamplerSettings:
    p_drop: float = 0.10
    p_score: float = 0.20
    p_trajectory: float = 0.40
    p_sketch: float = 0.40


@dataclass(frozen=True)
class PipelineConfig:
    key_interval: int = 4
    tau_new: float = 0.5
    min_area: int = 64
    capacity: int = 4
    merge_threshold: float = 1.0
    static_threshold: float = 0.1
    s_max: float = 30.0
    grid: int = 60
    min_overlap: float = 0.8
    sigma: float = 5.0
    track_sampling: str = "sample"
    max_sampled_tracks: int = 8
    mode: str = "i2v"
    working_resolution: tuple[int, int] | None = (512, 320)
    seed: int = 0
    sampler: SamplerSettings = field(default_factory=SamplerSettings)

    def __post_init__(self):
        checks = [
            (self.key_interval >= 1, "key_interval must be >= 1"),
            (0.0 <= self.tau_new <= 1.0, "tau_new must be in [0, 1]"),
            (self.min_area >= 0, "min_area must be >= 0"),
            (self.capacity >= 1, "capacity must be >= 1"),
            (self.merge_threshold >= 0, "merge_threshold must be >= 0"),
            (self.static_threshold >= 0, "static_threshold must be >= 0"),
            (self.s_max > 0, "s_max must be > 0"),
            (self.grid >= 1, "grid must be >= 1"),
            (0.0 <= self.min_overlap < 1.0, "min_overlap must be in [0, 1)"),
            (self.sigma > 0, "sigma must be > 0"),
            (self.track_sampling in ("sample", "all"), "track_sampling must be 'sample' or 'all'"),
            (self.max_sampled_tracks >= 1, "max_sampled_tracks must be >= 1"),
            (self.mode in ("i2v", "interpolation"), "mode must be 'i2v' or 'interpolation'"),
            (0 <= self.seed < 2**64, "seed must be an unsigned 64-bit integer"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ManifestError(f"config: {msg}")
        if self.working_resolution is not None:
            wr = tuple(int(v) for v in self.working_resolution)
            if len(wr) != 2 or min(wr) < 1:
                raise ManifestError("config: working_resolution must be [width, height]")
            object.__setattr__(self, "working_resolution", wr)
        self.sampler_config()

    @classmethod
    def from_dict(cls, doc: dict) -> "PipelineConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        _reject_unknown(doc, names, "config")
        doc = dict(doc)
        if "sampler" in doc:
            s = doc["sampler"]
            _reject_unknown(s, {f.name for f in dataclasses.fields(SamplerSettings)}, "config.sampler")
            doc["sampler"] = SamplerSettings(**s)
        if doc.get("working_resolution") is not None:
            doc["working_resolution"] = tuple(doc["working_resolution"])
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ManifestError(f"config: {exc}") from None

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(_load_json(path))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        if d["working_resolution"] is not None:
            d["working_resolution"] = list(d["working_resolution"])
        return d

    def replace(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def merge_config(self) -> MergeConfig:
        return MergeConfig(self.capacity, self.merge_threshold, self.static_threshold, self.s_max)

    def sampler_config(self) -> SamplerConfig:
        s = self.sampler
        try:
            return SamplerConfig(s.p_drop, s.p_score, s.p_trajectory, s.p_sketch, self.seed)
        except ValueError as exc:
            raise ManifestError(f"config.sampler: {exc}") from None


@dataclass(frozen=True)
class ClipManifest:
    clip_id: str
    frame_count: int
    height: int
    width: int
    fps: float
    frames: tuple[Path, ...]
    masks: Path
    masklets: Path
    flow: Path
    tracks: Path
    sketches: tuple[Path, ...] | None = None

    @property
    def geometry(self) -> ClipGeometry:
        return ClipGeometry(self.height, self.width, self.frame_count)

    @classmethod
    def from_dict(cls, doc: dict, base: Path) -> "ClipManifest":
        names = {f.name for f in dataclasses.fields(cls)}
        _reject_unknown(doc, names, "clip")
        missing = sorted(names - {"sketches"} - set(doc))
        if missing:
            raise ManifestError(f"clip {doc.get('clip_id', '?')}: missing keys {missing}")
        clip_id = doc["clip_id"]
        if not isinstance(clip_id, str) or not clip_id or "/" in clip_id or clip_id.startswith("."):
            raise ManifestError(f"bad clip_id {clip_id!r}")
        f = doc["frame_count"]
        if not isinstance(f, int) or not MIN_CLIP_FRAMES <= f <= MAX_CLIP_FRAMES:
            raise ManifestError(f"clip {clip_id}: frame_count {f} outside [{MIN_CLIP_FRAMES}, {MAX_CLIP_FRAMES}]")
        for key in ("height", "width"):
            if not isinstance(doc[key], int) or doc[key] < 1:
                raise ManifestError(f"clip {clip_id}: bad {key} {doc[key]!r}")
        frames = tuple(base / p for p in doc["frames"])
        if len(frames) != f:
            raise ManifestError(f"clip {clip_id}: {len(frames)} frame paths for frame_count {f}")
        sketches = doc.get("sketches")
        if sketches is not None:
            sketches = tuple(base / p for p in sketches)
            if len(sketches) != f:
                raise ManifestError(f"clip {clip_id}: {len(sketches)} sketch paths for frame_count {f}")
        return cls(
            clip_id=clip_id,
            frame_count=f,
            height=doc["height"],
            width=doc["width"],
            fps=float(doc["fps"]),
            frames=frames,
            masks=base / doc["masks"],
            masklets=base / doc["masklets"],
            flow=base / doc["flow"],
            tracks=base / doc["tracks"],
            sketches=sketches,
        )

    def to_dict(self, base: Path) -> dict:
        def rel(p: Path) -> str:
            return Path(p).relative_to(base).as_posix()

        return {
            "clip_id": self.clip_id,
            "frame_count": self.frame_count,
            "height": self.height,
            "width": self.width,
            "fps": self.fps,
            "frames": [rel(p) for p in self.frames],
            "masks": rel(self.masks),
            "masklets": rel(self.masklets),
            "flow": rel(self.flow),
            "tracks": rel(self.tracks),
            "sketches": None if self.sketches is None else [rel(p) for p in self.sketches],
        }

    def referenced_files(self) -> list[Path]:
        paths = list(self.frames) + [self.masks, self.masklets, self.flow, self.tracks]
        return paths + list(self.sketches or ())


def _load_json(path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: invalid JSON: {exc}") from None


def load_manifest(path) -> list[ClipManifest]:
    path = Path(path)
    doc = _load_json(path)
    _reject_unknown(doc, {"version", "clips"}, "manifest")
    if doc.get("version") != 1:
        raise ManifestError(f"manifest: unsupported version {doc.get('version')!r}")
    clips = [ClipManifest.from_dict(c, path.parent) for c in doc.get("clips", [])]
    ids = [c.clip_id for c in clips]
    if len(set(ids)) != len(ids):
        raise ManifestError("manifest: duplicate clip ids")
    return clips


def dump_manifest(clips, path) -> None:
    from .formats import write_atomic

    path = Path(path)
    doc = {"version": 1, "clips": [c.to_dict(path.parent) for c in clips]}
    write_atomic(path, (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode())
