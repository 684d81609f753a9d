"""From scored table/row/column/spanning-cell detections to a logical table grid.

Rows give vertical extents and columns give horizontal extents; every
row x column pair is a unit cell. Spanning-cell detections then merge blocks
of unit cells. The grid can be exported as HTML, CSV or JSON.
"""

from __future__ import annotations

import csv
import html
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .geometry import BBox, intersect, intersection_area, iou
from .ingest import Category, DetectionRecord

log = logging.getLogger(__name__)


class NoStructureError(ValueError):
    """No row or no column (or no required table) survived filtering."""


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class StructureConfig:
    # a single cutoff for all categories, or one per category
    score_threshold: Union[float, Mapping[Category, float]] = 0.5
    nms_iou: float = 0.5
    span_overlap_tau: float = 0.5
    require_table_box: bool = False

    def __post_init__(self) -> None:
        for t in self._thresholds().values():
            if not 0.0 <= t <= 1.0:
                raise ValueError(f"score threshold {t} outside [0, 1]")
        if not 0.0 <= self.nms_iou <= 1.0:
            raise ValueError(f"nms_iou {self.nms_iou} outside [0, 1]")
        if not 0.0 < self.span_overlap_tau <= 1.0:
            raise ValueError(f"span_overlap_tau {self.span_overlap_tau} outside (0, 1]")

    def _thresholds(self) -> dict[Category, float]:
        if isinstance(self.score_threshold, Mapping):
            return {c: float(self.score_threshold.get(c, 0.5)) for c in Category}
        return {c: float(self.score_threshold) for c in Category}

    def threshold_for(self, category: Category) -> float:
        return self._thresholds()[category]


@dataclass(frozen=True)
class Cell:
    row: int
    col: int
    rowspan: int
    colspan: int
    bbox: BBox


@dataclass
class TableGrid:
    n_rows: int
    n_cols: int
    row_extents: list[tuple[float, float]]
    col_extents: list[tuple[float, float]]
    cells: list[Cell] = field(default_factory=list)

    def unit_bbox(self, r: int, c: int) -> BBox:
        x0, x1 = self.col_extents[c]
        y0, y1 = self.row_extents[r]
        return BBox(x0, y0, x1, y1)

    def occupancy(self) -> list[list[int]]:
        """Index into ``cells`` of the cell covering each lattice position (-1 if none).

        Raises GridError on overlapping or out-of-lattice cells.
        """
        occ = [[-1] * self.n_cols for _ in range(self.n_rows)]
        for k, cell in enumerate(self.cells):
            if cell.rowspan < 1 or cell.colspan < 1:
                raise GridError(f"cell {k} has non-positive span")
            if cell.row < 0 or cell.col < 0 or cell.row + cell.rowspan > self.n_rows or cell.col + cell.colspan > self.n_cols:
                raise GridError(f"cell {k} leaves the {self.n_rows}x{self.n_cols} lattice")
            for r in range(cell.row, cell.row + cell.rowspan):
                for c in range(cell.col, cell.col + cell.colspan):
                    if occ[r][c] != -1:
                        raise GridError(f"position ({r}, {c}) covered by cells {occ[r][c]} and {k}")
                    occ[r][c] = k
        return occ

    def check_exact_cover(self) -> None:
        occ = self.occupancy()
        holes = [(r, c) for r in range(self.n_rows) for c in range(self.n_cols) if occ[r][c] == -1]
        if holes:
            raise GridError(f"uncovered lattice positions: {holes[:5]}")

    def to_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "row_extents": [list(e) for e in self.row_extents],
            "col_extents": [list(e) for e in self.col_extents],
            "cells": [
                {
                    "row": c.row,
                    "col": c.col,
                    "rowspan": c.rowspan,
                    "colspan": c.colspan,
                    "bbox": list(c.bbox.as_tuple()),
                }
                for c in self.cells
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TableGrid":
        return cls(
            int(data["n_rows"]),
            int(data["n_cols"]),
            [tuple(float(v) for v in e) for e in data["row_extents"]],
            [tuple(float(v) for v in e) for e in data["col_extents"]],
            [
                Cell(int(c["row"]), int(c["col"]), int(c["rowspan"]), int(c["colspan"]), BBox(*c["bbox"]))
                for c in data["cells"]
            ],
        )


@dataclass
class SpanReport:
    merged: int = 0
    no_overlap: int = 0
    conflicts: int = 0
    rectangularized: int = 0


def _score_order(records: Sequence[DetectionRecord]) -> list[DetectionRecord]:
    # stable sort: equal scores keep input order
    return sorted(records, key=lambda r: -r.score)


def nms(records: Sequence[DetectionRecord], iou_threshold: float) -> list[DetectionRecord]:
    """Greedy per-category suppression; output is in descending score order."""
    kept: list[DetectionRecord] = []
    for rec in _score_order(records):
        if all(
            k.category is not rec.category or iou(k.bbox, rec.bbox) < iou_threshold for k in kept
        ):
            kept.append(rec)
    return kept


def filter_detections(records: Sequence[DetectionRecord], cfg: StructureConfig) -> dict[Category, list[DetectionRecord]]:
    """Score thresholding then NMS, grouped by category."""
    passed = [r for r in records if r.score >= cfg.threshold_for(r.category)]
    out: dict[Category, list[DetectionRecord]] = {c: [] for c in Category}
    for rec in nms(passed, cfg.nms_iou):
        out[rec.category].append(rec)
    return out


def _sorted_extents(boxes: list[BBox], axis: int) -> list[tuple[float, float]]:
    if axis == 0:
        spans = [(b.x_min, b.x_max) for b in boxes]
    else:
        spans = [(b.y_min, b.y_max) for b in boxes]
    order = sorted(range(len(spans)), key=lambda i: (spans[i][0] + spans[i][1]) / 2.0)
    return [spans[i] for i in order]


def infer_grid(records: Sequence[DetectionRecord], cfg: StructureConfig = StructureConfig()) -> TableGrid:
    """Unit-cell grid from the row and column detections of one image."""
    ids = {r.image_id for r in records}
    if len(ids) > 1:
        raise ValueError(f"records from several images: {sorted(ids)}")
    groups = filter_detections(records, cfg)
    rows = [r.bbox for r in groups[Category.TABLE_ROW]]
    cols = [r.bbox for r in groups[Category.TABLE_COLUMN]]
    if cfg.require_table_box:
        if not groups[Category.TABLE]:
            raise NoStructureError("no structure: no table box survived filtering")
        frame = groups[Category.TABLE][0].bbox
        rows = [b for b in (intersect(b, frame) for b in rows) if b is not None]
        cols = [b for b in (intersect(b, frame) for b in cols) if b is not None]
    if not rows or not cols:
        raise NoStructureError(f"no structure: {len(rows)} row(s), {len(cols)} column(s) survived")
    row_ext = _sorted_extents(rows, axis=1)
    col_ext = _sorted_extents(cols, axis=0)
    cells = [
        Cell(r, c, 1, 1, BBox(col_ext[c][0], row_ext[r][0], col_ext[c][1], row_ext[r][1]))
        for r in range(len(row_ext))
        for c in range(len(col_ext))
    ]
    return TableGrid(len(row_ext), len(col_ext), row_ext, col_ext, cells)


def merge_spans(
    grid: TableGrid, spans: Sequence[DetectionRecord], cfg: StructureConfig = StructureConfig()
) -> tuple[TableGrid, SpanReport]:
    """Merge unit-cell blocks claimed by spanning-cell detections.

    A span claims every unit cell it covers by at least ``span_overlap_tau``
    of the cell's area; the claim is widened to its enclosing rectangle.
    Spans are applied by descending score and a span touching a position
    already merged by an earlier span is dropped.
    """
    report = SpanReport()
    occ = grid.occupancy()
    cells = list(grid.cells)
    merged_positions: set[tuple[int, int]] = {
        (r, c)
        for cell in cells
        if cell.rowspan > 1 or cell.colspan > 1
        for r in range(cell.row, cell.row + cell.rowspan)
        for c in range(cell.col, cell.col + cell.colspan)
    }
    for span in _score_order(spans):
        claimed = []
        for r in range(grid.n_rows):
            for c in range(grid.n_cols):
                unit = grid.unit_bbox(r, c)
                area = unit.area()
                if area > 0 and intersection_area(unit, span.bbox) / area >= cfg.span_overlap_tau:
                    claimed.append((r, c))
        if not claimed:
            report.no_overlap += 1
            continue
        r0 = min(r for r, _ in claimed)
        r1 = max(r for r, _ in claimed)
        c0 = min(c for _, c in claimed)
        c1 = max(c for _, c in claimed)
        block = [(r, c) for r in range(r0, r1 + 1) for c in range(c0, c1 + 1)]
        if len(block) == 1:
            continue
        if any(p in merged_positions for p in block):
            report.conflicts += 1
            continue
        if len(block) != len(claimed):
            report.rectangularized += 1
        doomed = {occ[r][c] for r, c in block}
        bbox = BBox(
            min(grid.col_extents[c][0] for c in range(c0, c1 + 1)),
            min(grid.row_extents[r][0] for r in range(r0, r1 + 1)),
            max(grid.col_extents[c][1] for c in range(c0, c1 + 1)),
            max(grid.row_extents[r][1] for r in range(r0, r1 + 1)),
        )
        for k in doomed:
            cells[k] = None
        cells.append(Cell(r0, c0, r1 - r0 + 1, c1 - c0 + 1, bbox))
        new_index = len(cells) - 1
        for r, c in block:
            occ[r][c] = new_index
            merged_positions.add((r, c))
        report.merged += 1
    kept = sorted((c for c in cells if c is not None), key=lambda c: (c.row, c.col))
    out = TableGrid(grid.n_rows, grid.n_cols, list(grid.row_extents), list(grid.col_extents), kept)
    out.check_exact_cover()
    return out, report


def apply_spanning(
    grid: TableGrid, spans: Sequence[DetectionRecord], cfg: StructureConfig = StructureConfig()
) -> TableGrid:
    out, report = merge_spans(grid, spans, cfg)
    if report.no_overlap:
        log.warning("dropped %d spanning cell(s) covering no unit cell", report.no_overlap)
    if report.conflicts:
        log.warning("dropped %d spanning cell(s) conflicting with earlier merges", report.conflicts)
    if report.rectangularized:
        log.info("rectangularized %d non-rectangular span claim(s)", report.rectangularized)
    return out


def recognize_table(records: Sequence[DetectionRecord], cfg: StructureConfig = StructureConfig()) -> TableGrid:
    """Full pipeline for one image: filter, infer unit grid, merge spans."""
    grid = infer_grid(records, cfg)
    spans = filter_detections(records, cfg)[Category.TABLE_SPANNING_CELL]
    return apply_spanning(grid, spans, cfg)


def _bbox_text(b: BBox) -> str:
    return ",".join(f"{v:.2f}" for v in b.as_tuple())


def export_html(grid: TableGrid) -> str:
    """HTML table; each cell's text is its pixel box ``x_min,y_min,x_max,y_max``."""
    occ = grid.occupancy()
    lines = ["<table>"]
    for r in range(grid.n_rows):
        lines.append("  <tr>")
        for c in range(grid.n_cols):
            cell = grid.cells[occ[r][c]]
            if (cell.row, cell.col) != (r, c):
                continue
            attrs = ""
            if cell.rowspan > 1:
                attrs += f' rowspan="{cell.rowspan}"'
            if cell.colspan > 1:
                attrs += f' colspan="{cell.colspan}"'
            lines.append(f"    <td{attrs}>{html.escape(_bbox_text(cell.bbox))}</td>")
        lines.append("  </tr>")
    lines.append("</table>")
    return "\n".join(lines) + "\n"


def export_csv(grid: TableGrid) -> str:
    """One line per row; a merged cell's box repeats across its block."""
    occ = grid.occupancy()
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    for r in range(grid.n_rows):
        writer.writerow([_bbox_text(grid.cells[occ[r][c]].bbox) for c in range(grid.n_cols)])
    return buf.getvalue()


def export_json(grid: TableGrid) -> str:
    return json.dumps(grid.to_dict(), indent=2) + "\n"


def grid_from_json(text: str) -> TableGrid:
    return TableGrid.from_dict(json.loads(text))


def _boundaries(lo: float, hi: float, n: int, rng: np.random.Generator) -> list[float]:
    weights = rng.uniform(1.0, 2.0, size=n)
    edges = lo + np.round((hi - lo) * np.concatenate([[0.0], np.cumsum(weights)]) / weights.sum())
    edges[-1] = hi
    if np.any(np.diff(edges) <= 0):
        raise ValueError(f"frame too small for {n} divisions")
    return [float(e) for e in edges]


def synth_table(
    n_rows: int,
    n_cols: int,
    spans: Sequence[tuple[int, int, int, int]] = (),
    frame: Optional[BBox] = None,
    seed: Optional[int] = 0,
    jitter: float = 0.0,
    image_id: str = "synth",
) -> tuple[list[DetectionRecord], TableGrid]:
    """Perfect detections (score 1.0) for a generated table, plus its true grid.

    ``spans`` are blocks ``(row, col, rowspan, colspan)``. Row heights and
    column widths are drawn at random (boundaries on whole pixels) inside
    ``frame``; ``jitter`` moves every detected box edge by up to that many
    pixels. Records come out as table, rows, columns, spanning cells.
    """
    if n_rows < 1 or n_cols < 1:
        raise ValueError("need at least one row and one column")
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    if frame is None:
        frame = BBox(50.0, 50.0, 50.0 + 80.0 * n_cols, 50.0 + 30.0 * n_rows)
    owner: dict[tuple[int, int], int] = {}
    for k, (r, c, rs, cs) in enumerate(spans):
        if rs < 1 or cs < 1 or r < 0 or c < 0 or r + rs > n_rows or c + cs > n_cols:
            raise ValueError(f"span {k} {(r, c, rs, cs)} leaves the {n_rows}x{n_cols} lattice")
        for p in ((i, j) for i in range(r, r + rs) for j in range(c, c + cs)):
            if p in owner:
                raise ValueError(f"spans {owner[p]} and {k} overlap at {p}")
            owner[p] = k

    rng = np.random.default_rng(seed)
    ys = _boundaries(frame.y_min, frame.y_max, n_rows, rng)
    xs = _boundaries(frame.x_min, frame.x_max, n_cols, rng)
    row_ext = [(ys[i], ys[i + 1]) for i in range(n_rows)]
    col_ext = [(xs[j], xs[j + 1]) for j in range(n_cols)]

    def block_box(r, c, rs, cs):
        return BBox(xs[c], ys[r], xs[c + cs], ys[r + rs])

    boxes = [(Category.TABLE, frame)]
    boxes += [(Category.TABLE_ROW, BBox(frame.x_min, y0, frame.x_max, y1)) for y0, y1 in row_ext]
    boxes += [(Category.TABLE_COLUMN, BBox(x0, frame.y_min, x1, frame.y_max)) for x0, x1 in col_ext]
    boxes += [(Category.TABLE_SPANNING_CELL, block_box(*s)) for s in spans]

    records = []
    for cat, box in boxes:
        if jitter > 0:
            d = rng.uniform(-jitter, jitter, size=4)
            x0, y0, x1, y1 = (v + dv for v, dv in zip(box.as_tuple(), d))
            box = BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
        records.append(DetectionRecord(image_id, cat, box, 1.0))

    cells = [Cell(r, c, rs, cs, block_box(r, c, rs, cs)) for r, c, rs, cs in spans if rs * cs > 1]
    cells += [
        Cell(r, c, 1, 1, block_box(r, c, 1, 1))
        for r in range(n_rows)
        for c in range(n_cols)
        if (r, c) not in owner or spans[owner[(r, c)]][2] * spans[owner[(r, c)]][3] == 1
    ]
    cells.sort(key=lambda cell: (cell.row, cell.col))
    grid = TableGrid(n_rows, n_cols, row_ext, col_ext, cells)
    grid.check_exact_cover()
    return records, grid
