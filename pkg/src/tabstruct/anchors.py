"""Anchor generation for table rows and columns, plus the typical-anchor baseline.

Column anchors keep a fixed height per pyramid level and vary their width by
the aspect ratio; row anchors fix the width and vary the height. The typical
baseline keeps the area fixed per level instead.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .geometry import BBox, box_size

DEFAULT_LEVELS: tuple[tuple[float, float], ...] = (
    (8, 32),
    (16, 64),
    (32, 128),
    (64, 256),
    (128, 512),
)
DEFAULT_RATIOS: tuple[float, ...] = (0.5, 1.0, 2.0)


class AnchorError(ValueError):
    pass


class AnchorMode(enum.Enum):
    TYPICAL = "typical"
    STRUCTURE_AWARE = "structure"


class AnchorRole(enum.Enum):
    COLUMN = "column"
    ROW = "row"
    GENERIC = "generic"


@dataclass(frozen=True)
class AnchorConfig:
    image_width: float
    image_height: float
    mode: AnchorMode = AnchorMode.STRUCTURE_AWARE
    levels: tuple[tuple[float, float], ...] = DEFAULT_LEVELS
    aspect_ratios: tuple[float, ...] = DEFAULT_RATIOS
    clip_to_image: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple((float(s), float(e)) for s, e in self.levels))
        object.__setattr__(self, "aspect_ratios", tuple(float(r) for r in self.aspect_ratios))
        if not self.levels:
            raise AnchorError("at least one pyramid level is required")
        if not self.aspect_ratios:
            raise AnchorError("at least one aspect ratio is required")
        strides = [s for s, _ in self.levels]
        if any(s <= 0 for s in strides) or any(b <= a for a, b in zip(strides, strides[1:])):
            raise AnchorError(f"strides must be positive and strictly increasing: {strides}")
        if any(e <= 0 for _, e in self.levels):
            raise AnchorError("base extents must be positive")
        if any(not (r > 0 and math.isfinite(r)) for r in self.aspect_ratios):
            raise AnchorError("aspect ratios must be positive")
        if not (self.image_width > 0 and self.image_height > 0):
            raise AnchorError("image dimensions must be positive")


@dataclass(frozen=True)
class Anchor:
    bbox: BBox
    level: int
    role: AnchorRole


@dataclass
class AnchorSet:
    """Anchors stored column-wise: ``boxes`` is (N, 4) corner form."""

    boxes: np.ndarray
    levels: np.ndarray
    roles: list[AnchorRole] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.boxes)

    def __iter__(self) -> Iterator[Anchor]:
        for box, level, role in zip(self.boxes, self.levels, self.roles):
            yield Anchor(BBox(*(float(v) for v in box)), int(level), role)

    def widths(self) -> np.ndarray:
        return self.boxes[:, 2] - self.boxes[:, 0]

    def heights(self) -> np.ndarray:
        return self.boxes[:, 3] - self.boxes[:, 1]

    def centers(self) -> np.ndarray:
        return np.stack(
            [(self.boxes[:, 0] + self.boxes[:, 2]) / 2, (self.boxes[:, 1] + self.boxes[:, 3]) / 2],
            axis=1,
        )

    def concat(self, other: "AnchorSet") -> "AnchorSet":
        return AnchorSet(
            np.concatenate([self.boxes, other.boxes]),
            np.concatenate([self.levels, other.levels]),
            self.roles + other.roles,
        )

    def to_jsonl(self) -> str:
        lines = []
        for box, level, role in zip(self.boxes.tolist(), self.levels.tolist(), self.roles):
            lines.append(
                json.dumps(
                    {
                        "level": level,
                        "role": role.value,
                        "x_min": box[0],
                        "y_min": box[1],
                        "x_max": box[2],
                        "y_max": box[3],
                    }
                )
            )
        return "".join(line + "\n" for line in lines)


def expected_anchor_count(cfg: AnchorConfig) -> int:
    """Unclipped anchor count for a single role: sum over levels of ceil(W/s)*ceil(H/s)*|ratios|."""
    return sum(
        math.ceil(cfg.image_width / s) * math.ceil(cfg.image_height / s) * len(cfg.aspect_ratios)
        for s, _ in cfg.levels
    )


def _grid_centers(extent: float, stride: float) -> np.ndarray:
    # Centre of each stride cell clipped to the image, so a partial last cell
    # still gets a centre inside the image.
    n = math.ceil(extent / stride)
    lo = np.arange(n, dtype=float) * stride
    hi = np.minimum(lo + stride, extent)
    return (lo + hi) / 2.0


def anchor_shapes(role: AnchorRole, extent: float, ratios) -> tuple[np.ndarray, np.ndarray]:
    """(widths, heights) of the anchors at one grid position before placement."""
    ratios = np.asarray(ratios, dtype=float)
    if role is AnchorRole.COLUMN:
        return extent * ratios, np.full_like(ratios, extent)
    if role is AnchorRole.ROW:
        return np.full_like(ratios, extent), extent * ratios
    root = np.sqrt(ratios)
    return extent * root, extent / root


def _generate(cfg: AnchorConfig, role: AnchorRole) -> AnchorSet:
    min_stride = cfg.levels[0][0]
    if cfg.image_width < min_stride or cfg.image_height < min_stride:
        raise AnchorError(
            f"image {cfg.image_width}x{cfg.image_height} is smaller than one stride cell ({min_stride})"
        )
    ratios = np.asarray(cfg.aspect_ratios, dtype=float)
    all_boxes = []
    all_levels = []
    for level, (stride, extent) in enumerate(cfg.levels):
        widths, heights = anchor_shapes(role, extent, ratios)
        cx = _grid_centers(cfg.image_width, stride)
        cy = _grid_centers(cfg.image_height, stride)
        # order: y-major, then x, then ratio
        gy, gx = np.meshgrid(cy, cx, indexing="ij")
        cxs = np.repeat(gx.ravel(), len(ratios))
        cys = np.repeat(gy.ravel(), len(ratios))
        ws = np.tile(widths, gx.size)
        hs = np.tile(heights, gx.size)
        boxes = np.stack([cxs - ws / 2, cys - hs / 2, cxs + ws / 2, cys + hs / 2], axis=1)
        all_boxes.append(boxes)
        all_levels.append(np.full(len(boxes), level, dtype=int))
    boxes = np.concatenate(all_boxes)
    if cfg.clip_to_image:
        boxes[:, [0, 2]] = np.clip(boxes[:, [0, 2]], 0.0, cfg.image_width)
        boxes[:, [1, 3]] = np.clip(boxes[:, [1, 3]], 0.0, cfg.image_height)
    levels = np.concatenate(all_levels)
    return AnchorSet(boxes, levels, [role] * len(boxes))


def _require_mode(cfg: AnchorConfig, mode: AnchorMode) -> None:
    if cfg.mode is not mode:
        raise AnchorError(f"config mode is {cfg.mode.value}, expected {mode.value}")


def generate_column_anchors(cfg: AnchorConfig) -> AnchorSet:
    """Fixed-height anchors: height = level extent, width = extent * ratio."""
    _require_mode(cfg, AnchorMode.STRUCTURE_AWARE)
    return _generate(cfg, AnchorRole.COLUMN)


def generate_row_anchors(cfg: AnchorConfig) -> AnchorSet:
    """Fixed-width anchors: width = level extent, height = extent * ratio."""
    _require_mode(cfg, AnchorMode.STRUCTURE_AWARE)
    return _generate(cfg, AnchorRole.ROW)


def generate_typical_anchors(cfg: AnchorConfig) -> AnchorSet:
    """Constant-area anchors (extent²) with width = extent*sqrt(r), height = extent/sqrt(r)."""
    _require_mode(cfg, AnchorMode.TYPICAL)
    return _generate(cfg, AnchorRole.GENERIC)


def generate_anchors(cfg: AnchorConfig) -> AnchorSet:
    """All anchors for the configured mode; structure-aware yields columns then rows."""
    if cfg.mode is AnchorMode.TYPICAL:
        return generate_typical_anchors(cfg)
    return generate_column_anchors(cfg).concat(generate_row_anchors(cfg))


def sample_proposals_size_prioritized(
    proposals: Sequence[tuple[BBox, float]],
    k: int,
    gamma: float = 1.0,
    seed: Optional[int] = 0,
) -> list[tuple[BBox, float]]:
    """Draw ``k`` proposals without replacement, favouring small boxes.

    Each proposal is weighted by ``score * (1 / box_size) ** gamma``; sizes
    below one pixel are treated as one pixel. ``gamma=0`` reduces to
    score-proportional sampling. The result is in draw order.
    """
    n = len(proposals)
    if k > n:
        raise ValueError(f"cannot sample {k} proposals from {n}")
    if k < 0:
        raise ValueError("k must be non-negative")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if k == 0:
        return []
    scores = np.array([s for _, s in proposals], dtype=float)
    sizes = np.array([max(box_size(b), 1.0) for b, _ in proposals], dtype=float)
    if np.any(scores < 0) or not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite and non-negative")
    weights = scores * sizes ** (-gamma)
    if np.count_nonzero(weights) < k:
        raise ValueError(f"only {np.count_nonzero(weights)} proposals have positive weight, need {k}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(n, size=k, replace=False, p=weights / weights.sum())
    return [proposals[i] for i in idx.tolist()]
