"""Training-time random choice of one control modality per layer, with layer dropout."""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

Control = Literal["dropped", "score", "trajectory", "sketch"]
CONTROL_CODES: dict[str, int] = {"dropped": 0, "score": 1, "trajectory": 2, "sketch": 3}
MODALITIES = ("score", "trajectory", "sketch")


@dataclass(frozen=True)
class SamplerConfig:
    p_drop: float = 0.10
    p_score: float = 0.20
    p_trajectory: float = 0.40
    p_sketch: float = 0.40
    seed: int = 0

    def __post_init__(self):
        probs = (self.p_drop, self.p_score, self.p_trajectory, self.p_sketch)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError(f"probabilities must lie in [0, 1], got {probs}")
        if abs(self.p_score + self.p_trajectory + self.p_sketch - 1.0) > 1e-9:
            raise ValueError("modality probabilities must sum to 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    @property
    def modality_probs(self) -> tuple[float, float, float]:
        return (self.p_score, self.p_trajectory, self.p_sketch)


@dataclass(frozen=True)
class ControlAssignment:
    controls: tuple[Control, ...]
    degraded: tuple[bool, ...]
    draws: tuple[tuple[float, float] | None, ...]
    seed: int
    clip_id: str = ""

    @property
    def codes(self) -> np.ndarray:
        return np.array([CONTROL_CODES[c] for c in self.controls], dtype=np.uint8)

    def to_dict(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "seed": self.seed,
            "controls": list(self.controls),
            "degraded": list(self.degraded),
            "draws": [list(d) if d is not None else None for d in self.draws],
        }


def layer_rng(seed: int, clip_id: str, layer_index: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by (seed, clip, layer, stream).

    Independent of the order in which clips or layers are processed.
    """
    key = [seed & 0xFFFFFFFF, seed >> 32, zlib.crc32(clip_id.encode("utf-8")), layer_index, stream]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def _fallback(choice: Control, has_sketch: bool, has_trajectory: bool) -> Control:
    if choice == "sketch" and not has_sketch:
        choice = "trajectory"
    if choice == "trajectory" and not has_trajectory:
        choice = "score"
    return choice


def sample_controls(
    layer_count: int,
    cfg: SamplerConfig = SamplerConfig(),
    clip_id: str = "",
    capacity: int | None = None,
    sketch_available: bool | Sequence[bool] = True,
    trajectory_available: bool | Sequence[bool] = True,
) -> ControlAssignment:
    """Pick a control per layer slot.

    Each valid layer is dropped with ``cfg.p_drop``; otherwise one modality
    is drawn from the configured split. A sketch pick on a layer without a
    sketch falls back to trajectory, and a trajectory pick on a layer without
    tracks falls back to score; fallbacks are flagged in ``degraded``. Slots
    beyond ``layer_count`` (up to ``capacity``) are always dropped.
    """
    if layer_count < 1:
        raise ValueError(f"layer_count must be >= 1, got {layer_count}")
    capacity = layer_count if capacity is None else capacity
    if capacity < layer_count:
        raise ValueError(f"layer_count {layer_count} exceeds capacity {capacity}")

    def per_layer(flag, name):
        if isinstance(flag, (bool, np.bool_)):
            return [bool(flag)] * layer_count
        flag = list(flag)
        if len(flag) != layer_count:
            raise ValueError(f"{name} needs {layer_count} entries, got {len(flag)}")
        return [bool(x) for x in flag]

    has_sketch = per_layer(sketch_available, "sketch_available")
    has_traj = per_layer(trajectory_available, "trajectory_available")
    cum = np.cumsum(cfg.modality_probs)

    controls, degraded, draws = [], [], []
    for k in range(layer_count):
        rng = layer_rng(cfg.seed, clip_id, k)
        u_drop, u_mod = (float(u) for u in rng.random(2))
        draws.append((u_drop, u_mod))
        if u_drop < cfg.p_drop:
            controls.append("dropped")
            degraded.append(False)
            continue
        picked: Control = MODALITIES[min(int(np.searchsorted(cum, u_mod, side="right")), 2)]
        final = _fallback(picked, has_sketch[k], has_traj[k])
        controls.append(final)
        degraded.append(final != picked)
    for _ in range(capacity - layer_count):
        controls.append("dropped")
        degraded.append(False)
        draws.append(None)
    return ControlAssignment(tuple(controls), tuple(degraded), tuple(draws), cfg.seed, clip_id)
