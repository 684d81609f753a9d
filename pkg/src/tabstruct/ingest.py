"""Annotation and detection input: VOC XML, COCO-results JSON, dataset statistics."""

from __future__ import annotations

import enum
import json
import logging
import math
import os
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from .geometry import BBox, box_size

log = logging.getLogger(__name__)


class ParseError(ValueError):
    """Malformed annotation or detection input."""


class Category(enum.IntEnum):
    TABLE = 0
    TABLE_COLUMN = 1
    TABLE_ROW = 2
    TABLE_SPANNING_CELL = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def short(self) -> str:
        return _SHORT[self]

    @classmethod
    def from_label(cls, name: str) -> "Category":
        try:
            return _BY_LABEL[name.strip().lower()]
        except KeyError:
            raise ParseError(f"unknown category name {name!r}") from None


_LABELS = {
    Category.TABLE: "table",
    Category.TABLE_COLUMN: "table column",
    Category.TABLE_ROW: "table row",
    Category.TABLE_SPANNING_CELL: "table spanning cell",
}
_SHORT = {
    Category.TABLE: "T",
    Category.TABLE_COLUMN: "TC",
    Category.TABLE_ROW: "TR",
    Category.TABLE_SPANNING_CELL: "TSC",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}


@dataclass(frozen=True)
class GroundTruthObject:
    category: Category
    bbox: BBox


@dataclass
class AnnotatedImage:
    image_id: str
    width: float
    height: float
    objects: list[GroundTruthObject] = field(default_factory=list)
    # number of objects dropped in lenient parsing; not part of equality
    skipped: int = field(default=0, compare=False)


@dataclass(frozen=True)
class DetectionRecord:
    image_id: str
    category: Category
    bbox: BBox
    score: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"score {self.score} outside [0, 1]")


def _number(text: Optional[str], where: str) -> float:
    if text is None or not text.strip():
        raise ParseError(f"missing value for <{where}>")
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"<{where}> is not a number: {text!r}") from None
    if not math.isfinite(value):
        raise ParseError(f"<{where}> is not finite: {text!r}")
    return value


def parse_voc_xml(
    document: str | bytes,
    *,
    image_id: Optional[str] = None,
    strict: bool = False,
    clamp: bool = True,
) -> AnnotatedImage:
    """Parse one PASCAL-VOC style annotation.

    The image id defaults to the ``<filename>`` stem. Unknown object names
    raise in ``strict`` mode and are skipped (and counted) otherwise. With
    ``clamp`` on, boxes are clamped into the image frame.
    """
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise ParseError(f"malformed XML: {exc}") from None
    size = root.find("size")
    if size is None:
        raise ParseError("missing <size> element")
    width = _number(size.findtext("width"), "size/width")
    height = _number(size.findtext("height"), "size/height")
    if image_id is None:
        filename = root.findtext("filename")
        if not filename:
            raise ParseError("no <filename> and no image_id given")
        image_id = os.path.splitext(filename.strip())[0]
    frame = BBox(0.0, 0.0, width, height)

    objects = []
    skipped = 0
    for i, obj in enumerate(root.iter("object")):
        name = obj.findtext("name")
        where = f"object[{i}]"
        if name is None:
            raise ParseError(f"{where}: missing <name>")
        try:
            category = Category.from_label(name)
        except ParseError:
            if strict:
                raise ParseError(f"{where}: unknown category name {name!r}") from None
            skipped += 1
            continue
        bndbox = obj.find("bndbox")
        if bndbox is None:
            raise ParseError(f"{where} ({name}): missing <bndbox>")
        coords = [_number(bndbox.findtext(k), f"{where}/bndbox/{k}") for k in ("xmin", "ymin", "xmax", "ymax")]
        if coords[2] < coords[0] or coords[3] < coords[1]:
            raise ParseError(f"{where} ({name}): inverted box {coords}")
        box = BBox(*coords)
        if clamp:
            box = box.clip(frame)
        objects.append(GroundTruthObject(category, box))
    if skipped:
        log.warning("%s: skipped %d object(s) with unknown names", image_id, skipped)
    return AnnotatedImage(image_id, width, height, objects, skipped)


def to_voc_xml(image: AnnotatedImage) -> str:
    """Serialize to VOC XML; coordinates are written at full float precision."""
    root = ET.Element("annotation")
    ET.SubElement(root, "filename").text = image.image_id + ".jpg"
    size = ET.SubElement(root, "size")
    ET.SubElement(size, "width").text = repr(float(image.width))
    ET.SubElement(size, "height").text = repr(float(image.height))
    ET.SubElement(size, "depth").text = "3"
    for obj in image.objects:
        node = ET.SubElement(root, "object")
        ET.SubElement(node, "name").text = obj.category.label
        bnd = ET.SubElement(node, "bndbox")
        for key, value in zip(("xmin", "ymin", "xmax", "ymax"), obj.bbox.as_tuple()):
            ET.SubElement(bnd, key).text = repr(float(value))
    ET.indent(root)
    return ET.tostring(root, encoding="unicode") + "\n"


def parse_detections(document: str | bytes) -> list[DetectionRecord]:
    """Parse a COCO-results style array of {image_id, category_id, bbox: [x, y, w, h], score}."""
    try:
        data = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from None
    if not isinstance(data, list):
        raise ParseError("detections document must be a JSON array")
    out = []
    for i, rec in enumerate(data):
        try:
            if not isinstance(rec, dict):
                raise ParseError("not an object")
            try:
                category = Category(rec["category_id"])
            except ValueError:
                raise ParseError(f"unknown category_id {rec['category_id']!r}") from None
            bbox = rec["bbox"]
            if not isinstance(bbox, list) or len(bbox) != 4:
                raise ParseError("bbox must be [x, y, width, height]")
            x, y, w, h = (float(v) for v in bbox)
            if w < 0 or h < 0:
                raise ParseError(f"negative width/height in {bbox}")
            score = float(rec["score"])
            if not 0.0 <= score <= 1.0:
                raise ParseError(f"score {score} outside [0, 1]")
            out.append(DetectionRecord(str(rec["image_id"]), category, BBox.from_xywh(x, y, w, h), score))
        except KeyError as exc:
            raise ParseError(f"record {i}: missing field {exc.args[0]!r}") from None
        except (TypeError, ValueError) as exc:
            raise ParseError(f"record {i}: {exc}") from None
    return out


def detections_to_json(records: Sequence[DetectionRecord]) -> str:
    return json.dumps(
        [
            {
                "image_id": r.image_id,
                "category_id": int(r.category),
                "bbox": list(r.bbox.to_xywh()),
                "score": r.score,
            }
            for r in records
        ],
        indent=1,
    )


HISTOGRAM_EDGES: tuple[float, ...] = (0, 32, 64, 128, 256, 512, 1024, 2048, 4096, math.inf)


@dataclass
class CategoryStats:
    count: int = 0
    size_sum: Fraction = Fraction(0)
    histogram: list[int] = field(default_factory=lambda: [0] * (len(HISTOGRAM_EDGES) - 1))

    @property
    def mean_size(self) -> Optional[float]:
        return float(self.size_sum / self.count) if self.count else None

    def add(self, size: float) -> None:
        self.count += 1
        # exact rational sum: order- and shard-independent
        self.size_sum += Fraction(size)
        for b in range(len(HISTOGRAM_EDGES) - 1):
            if size < HISTOGRAM_EDGES[b + 1]:
                self.histogram[b] += 1
                break

    def merged(self, other: "CategoryStats") -> "CategoryStats":
        return CategoryStats(
            self.count + other.count,
            self.size_sum + other.size_sum,
            [a + b for a, b in zip(self.histogram, other.histogram)],
        )


@dataclass
class DatasetStats:
    """Per-category sample counts, mean box size (height + width) and size histograms."""

    per_category: dict[Category, CategoryStats] = field(
        default_factory=lambda: {c: CategoryStats() for c in Category}
    )
    n_images: int = 0

    def add_image(self, image: AnnotatedImage) -> None:
        self.n_images += 1
        for obj in image.objects:
            self.per_category[obj.category].add(box_size(obj.bbox))

    def merge(self, other: "DatasetStats") -> "DatasetStats":
        return DatasetStats(
            {c: self.per_category[c].merged(other.per_category[c]) for c in Category},
            self.n_images + other.n_images,
        )

    def to_dict(self) -> dict:
        edges = [e if math.isfinite(e) else None for e in HISTOGRAM_EDGES]
        return {
            "n_images": self.n_images,
            "categories": {
                c.label: {
                    "count": s.count,
                    "mean_size": s.mean_size,
                    "histogram": {"bucket_edges": edges, "counts": list(s.histogram)},
                }
                for c, s in self.per_category.items()
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        lines = [f"images: {self.n_images}", f"{'class':<6}{'count':>12}{'mean size':>12}"]
        for c, s in self.per_category.items():
            mean = f"{s.mean_size:.2f}" if s.mean_size is not None else "-"
            lines.append(f"{c.short:<6}{s.count:>12}{mean:>12}")
        return "\n".join(lines) + "\n"


def dataset_stats(images: Iterable[AnnotatedImage]) -> DatasetStats:
    """Single streaming pass over ``images``."""
    stats = DatasetStats()
    for image in images:
        stats.add_image(image)
    return stats


def iter_voc_paths(path: str, *, sort: bool = False):
    """Paths of the ``*.xml`` files in ``path``; directory order unless ``sort``."""
    names = (e.name for e in os.scandir(path) if e.is_file() and e.name.endswith(".xml"))
    if sort:
        names = iter(sorted(names))
    for name in names:
        yield os.path.join(path, name)


def iter_voc_dir(path: str, *, strict: bool = False, clamp: bool = True, sort: bool = False):
    for p in iter_voc_paths(path, sort=sort):
        yield load_voc_file(p, strict=strict, clamp=clamp)


def load_voc_file(path: str, *, strict: bool = False, clamp: bool = True) -> AnnotatedImage:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return parse_voc_xml(data, strict=strict, clamp=clamp)
    except ParseError as exc:
        raise ParseError(f"{path}: {exc}") from None
