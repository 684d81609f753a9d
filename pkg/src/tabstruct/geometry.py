"""Axis-aligned bounding boxes: intersection, IoU, size and size buckets."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

SMALL_AREA = 32.0**2
LARGE_AREA = 64.0**2


@dataclass(frozen=True)
class BBox:
    """Rectangle in continuous pixel coordinates, stored as corners."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self) -> None:
        if not (self.x_max >= self.x_min and self.y_max >= self.y_min):
            raise ValueError(
                f"negative extent: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @classmethod
    def from_xywh(cls, x: float, y: float, width: float, height: float) -> "BBox":
        return cls(x, y, x + width, y + height)

    def to_xywh(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.width(), self.height())

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def width(self) -> float:
        return self.x_max - self.x_min

    def height(self) -> float:
        return self.y_max - self.y_min

    def area(self) -> float:
        return self.width() * self.height()

    def center(self) -> tuple[float, float]:
        return ((self.x_min + self.x_max) / 2.0, (self.y_min + self.y_max) / 2.0)

    def clip(self, frame: "BBox") -> "BBox":
        """Clamp every edge into ``frame``; a box outside collapses onto its border."""
        x0 = min(max(self.x_min, frame.x_min), frame.x_max)
        x1 = min(max(self.x_max, frame.x_min), frame.x_max)
        y0 = min(max(self.y_min, frame.y_min), frame.y_max)
        y1 = min(max(self.y_max, frame.y_min), frame.y_max)
        return BBox(x0, y0, x1, y1)


class SizeBucket(enum.Enum):
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"


def intersect(a: BBox, b: BBox) -> Optional[BBox]:
    """Overlap rectangle of two boxes, or ``None`` when the interiors are disjoint.

    Boxes that only touch along an edge or at a corner have no overlap.
    """
    x0 = max(a.x_min, b.x_min)
    y0 = max(a.y_min, b.y_min)
    x1 = min(a.x_max, b.x_max)
    y1 = min(a.y_max, b.y_max)
    if x1 <= x0 or y1 <= y0:
        return None
    return BBox(x0, y0, x1, y1)


def intersection_area(a: BBox, b: BBox) -> float:
    inter = intersect(a, b)
    return 0.0 if inter is None else inter.area()


def iou(a: BBox, b: BBox) -> float:
    inter = intersection_area(a, b)
    union = a.area() + b.area() - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def iou_matrix(a: Sequence[BBox], b: Sequence[BBox]) -> np.ndarray:
    """Pairwise IoU, shape ``(len(a), len(b))``; elementwise identical to :func:`iou`."""
    A = np.array([x.as_tuple() for x in a], dtype=float).reshape(-1, 4)[:, None, :]
    B = np.array([x.as_tuple() for x in b], dtype=float).reshape(-1, 4)[None, :, :]
    w = np.minimum(A[..., 2], B[..., 2]) - np.maximum(A[..., 0], B[..., 0])
    h = np.minimum(A[..., 3], B[..., 3]) - np.maximum(A[..., 1], B[..., 1])
    inter = np.where((w > 0) & (h > 0), w * h, 0.0)
    area_a = (A[..., 2] - A[..., 0]) * (A[..., 3] - A[..., 1])
    area_b = (B[..., 2] - B[..., 0]) * (B[..., 3] - B[..., 1])
    union = area_a + area_b - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, 0.0)


def box_size(a: BBox) -> float:
    """Height plus width, the size measure used for dataset statistics and hardness."""
    return a.height() + a.width()


def size_bucket_of_area(area: float) -> SizeBucket:
    if area < SMALL_AREA:
        return SizeBucket.SMALL
    if area < LARGE_AREA:
        return SizeBucket.MEDIUM
    return SizeBucket.LARGE


def size_bucket(a: BBox) -> SizeBucket:
    """Small below 32², medium in [32², 64²), large from 64² up."""
    return size_bucket_of_area(a.area())
