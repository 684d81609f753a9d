"""COCO-style average precision for table-structure detections.

AP is the 101-point interpolated precision averaged over IoU thresholds
0.50:0.05:0.95 and over categories that have ground truth. Size-bucketed APs
use the 32²/64² area buckets: ground truth outside the bucket is ignored,
predictions matched to ignored ground truth count neither way, and unmatched
predictions outside the bucket are dropped.

Score ties are broken by the order of the prediction list, so results are
deterministic. Undefined values (no ground truth in scope) are ``nan``.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import SizeBucket, iou_matrix, size_bucket
from .ingest import AnnotatedImage, Category, DetectionRecord

IOU_THRESHOLDS: tuple[float, ...] = tuple(np.round(np.linspace(0.5, 0.95, 10), 2).tolist())
# k/100 exactly, so recall tp/n == k/100 compares as the rationals do
RECALL_GRID = np.arange(101) / 100.0

FIELDS = ("ap", "ap50", "ap75", "ap_small", "ap_medium", "ap_large")
HEADERS = ("AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L")


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class Match:
    pred_index: int
    score: float
    gt_index: Optional[int]
    iou: float
    ignored: bool


@dataclass
class MatchSet:
    """Matching outcome for one image: predictions in processing order."""

    matches: list[Match]
    gt_ignored: list[bool]

    @property
    def gt_count(self) -> int:
        """Ground truth that counts toward recall (not ignored)."""
        return sum(not g for g in self.gt_ignored)


@dataclass
class PRCurve:
    recall: np.ndarray
    precision: np.ndarray

    @property
    def ap(self) -> float:
        return float(np.mean(self.precision)) * 100.0


def _match(ious: list[list[float]], gt_ignored: list[bool], iou_threshold: float) -> list[Optional[int]]:
    """Greedy COCO matching over score-ordered rows of ``ious``; the matched column per row.

    Non-ignored ground truth is preferred; IoU ties keep the earlier column.
    """
    taken = [False] * len(gt_ignored)
    out: list[Optional[int]] = []
    for row in ious:
        best = None
        for want_ignored in (False, True):
            best_iou = -1.0
            for g, v in enumerate(row):
                if not taken[g] and gt_ignored[g] is want_ignored and v >= iou_threshold and v > best_iou:
                    best, best_iou = g, v
            if best is not None:
                taken[best] = True
                break
        out.append(best)
    return out


def _score_order(preds: Iterable[tuple[int, DetectionRecord]]) -> list[tuple[int, DetectionRecord]]:
    return sorted(preds, key=lambda p: (-p[1].score, p[0]))


@dataclass
class _CategoryScene:
    """Per-image, per-category state shared by every threshold and bucket."""

    gt_index: list[int]
    preds: list[tuple[int, DetectionRecord]]
    ious: list[list[float]]
    gt_bucket: list[SizeBucket]
    pred_bucket: list[SizeBucket]


def _prepare(gt: AnnotatedImage, preds: Sequence[DetectionRecord], max_dets: Optional[int]) -> list[_CategoryScene]:
    scenes = []
    for cat in Category:
        gidx = [i for i, o in enumerate(gt.objects) if o.category is cat]
        cat_preds = _score_order((i, p) for i, p in enumerate(preds) if p.category is cat)
        if max_dets is not None:
            cat_preds = cat_preds[:max_dets]
        scenes.append(
            _CategoryScene(
                gidx,
                cat_preds,
                iou_matrix([p.bbox for _, p in cat_preds], [gt.objects[i].bbox for i in gidx]).tolist(),
                [size_bucket(gt.objects[i].bbox) for i in gidx],
                [size_bucket(p.bbox) for _, p in cat_preds],
            )
        )
    return scenes


def _match_prepared(
    scenes: list[_CategoryScene], n_gt: int, iou_threshold: float, bucket_filter: Optional[SizeBucket]
) -> MatchSet:
    gt_ignored = [False] * n_gt
    matches: list[Match] = []
    for sc in scenes:
        ignored = [bucket_filter is not None and b is not bucket_filter for b in sc.gt_bucket]
        for g, ign in zip(sc.gt_index, ignored):
            gt_ignored[g] = ign
        for k, (best, (idx, rec)) in enumerate(zip(_match(sc.ious, ignored, iou_threshold), sc.preds)):
            if best is None:
                ign = bucket_filter is not None and sc.pred_bucket[k] is not bucket_filter
                matches.append(Match(idx, rec.score, None, 0.0, ign))
            else:
                matches.append(Match(idx, rec.score, sc.gt_index[best], sc.ious[k][best], ignored[best]))
    return MatchSet(matches, gt_ignored)


def match_detections(
    gt: AnnotatedImage,
    preds: Sequence[DetectionRecord],
    iou_threshold: float,
    bucket_filter: Optional[SizeBucket] = None,
    *,
    max_dets: Optional[int] = None,
) -> MatchSet:
    """Match one image's predictions to its ground truth, category by category.

    Unmatched predictions outside ``bucket_filter`` are marked ignored, as are
    predictions matched to ignored ground truth. ``gt_index`` refers to
    ``gt.objects`` and ``pred_index`` to ``preds``.
    """
    bad = sorted({p.image_id for p in preds if p.image_id != gt.image_id})
    if bad:
        raise EvaluationError(f"predictions reference other images: {bad}")
    return _match_prepared(_prepare(gt, preds, max_dets), len(gt.objects), iou_threshold, bucket_filter)


def pr_curve(matches: Iterable[Match], gt_count: int) -> Optional[PRCurve]:
    """Interpolated precision on the 101-point recall grid; ``None`` when ``gt_count`` is 0.

    Matches are ordered globally by descending score, ties by ``pred_index``.
    """
    if gt_count <= 0:
        return None
    kept = sorted((m for m in matches if not m.ignored), key=lambda m: (-m.score, m.pred_index))
    tp = np.cumsum([m.gt_index is not None for m in kept], dtype=float)
    fp = np.cumsum([m.gt_index is None for m in kept], dtype=float)
    recall = tp / gt_count
    with np.errstate(invalid="ignore", divide="ignore"):
        precision = tp / (tp + fp)
    # running max from the right
    envelope = np.maximum.accumulate(precision[::-1])[::-1] if len(precision) else precision
    pos = np.searchsorted(recall, RECALL_GRID, side="left")
    sampled = np.zeros(len(RECALL_GRID))
    hit = pos < len(envelope)
    sampled[hit] = envelope[pos[hit]]
    return PRCurve(RECALL_GRID.copy(), sampled)


@dataclass
class APValues:
    ap: float = math.nan
    ap50: float = math.nan
    ap75: float = math.nan
    ap_small: float = math.nan
    ap_medium: float = math.nan
    ap_large: float = math.nan

    def as_dict(self) -> dict[str, Optional[float]]:
        return {f: (None if math.isnan(getattr(self, f)) else getattr(self, f)) for f in FIELDS}


@dataclass
class APReport(APValues):
    """Overall AP fields (percent) plus the same fields per category."""

    per_category: dict[Category, APValues] = field(default_factory=dict)
    # AP per category at each IoU threshold (nan where undefined)
    per_threshold: dict[Category, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = self.as_dict()
        out["per_category"] = {c.label: v.as_dict() for c, v in self.per_category.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_text(self) -> str:
        return format_report_table(self)


def _fmt(v: float) -> str:
    return "-" if math.isnan(v) else f"{v:.2f}"


def format_report_table(report: APReport) -> str:
    """Two aligned tables: the AP field set, then AP per category (T, TC, TR, TSC)."""
    cats = list(Category)
    lines = [
        "".join(f"{h:>8}" for h in HEADERS),
        "".join(f"{_fmt(getattr(report, f)):>8}" for f in FIELDS),
        "",
        "".join(f"{c.short:>8}" for c in cats),
        "".join(f"{_fmt(report.per_category[c].ap if c in report.per_category else math.nan):>8}" for c in cats),
    ]
    return "\n".join(lines) + "\n"


def _nanmean(values: Sequence[float]) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return float(np.mean(vals)) if vals else math.nan


def evaluate(
    gt: Sequence[AnnotatedImage],
    preds: Sequence[DetectionRecord],
    *,
    max_dets: Optional[int] = None,
) -> APReport:
    by_image = {}
    for image in gt:
        if image.image_id in by_image:
            raise EvaluationError(f"duplicate image_id {image.image_id!r}")
        by_image[image.image_id] = image
    unknown = sorted({p.image_id for p in preds if p.image_id not in by_image})
    if unknown:
        raise EvaluationError(f"predictions reference unknown images: {unknown}")

    grouped: dict[str, list[tuple[int, DetectionRecord]]] = defaultdict(list)
    for i, p in enumerate(preds):
        grouped[p.image_id].append((i, p))

    buckets: list[Optional[SizeBucket]] = [None, SizeBucket.SMALL, SizeBucket.MEDIUM, SizeBucket.LARGE]
    # ap[bucket][category][threshold]
    table: dict = {b: {c: [] for c in Category} for b in buckets}
    prepared = [_prepare(image, [p for _, p in grouped.get(image.image_id, [])], max_dets) for image in gt]
    for bucket in buckets:
        for t in IOU_THRESHOLDS:
            per_cat_matches: dict[Category, list[Match]] = {c: [] for c in Category}
            per_cat_gt: dict[Category, int] = {c: 0 for c in Category}
            for image, scenes in zip(gt, prepared):
                pairs = grouped.get(image.image_id, [])
                ms = _match_prepared(scenes, len(image.objects), t, bucket)
                for m in ms.matches:
                    global_index = pairs[m.pred_index][0]
                    cat = pairs[m.pred_index][1].category
                    per_cat_matches[cat].append(
                        Match(global_index, m.score, m.gt_index, m.iou, m.ignored)
                    )
                for o, ign in zip(image.objects, ms.gt_ignored):
                    if not ign:
                        per_cat_gt[o.category] += 1
            for c in Category:
                curve = pr_curve(per_cat_matches[c], per_cat_gt[c])
                table[bucket][c].append(math.nan if curve is None else curve.ap)

    report = APReport()
    i50 = IOU_THRESHOLDS.index(0.5)
    i75 = IOU_THRESHOLDS.index(0.75)
    for c in Category:
        if all(math.isnan(v) for v in table[None][c]):
            continue
        report.per_category[c] = APValues(
            ap=_nanmean(table[None][c]),
            ap50=table[None][c][i50],
            ap75=table[None][c][i75],
            ap_small=_nanmean(table[SizeBucket.SMALL][c]),
            ap_medium=_nanmean(table[SizeBucket.MEDIUM][c]),
            ap_large=_nanmean(table[SizeBucket.LARGE][c]),
        )
        report.per_threshold[c] = list(table[None][c])
    for f in FIELDS:
        setattr(report, f, _nanmean([getattr(v, f) for v in report.per_category.values()]))
    return report
