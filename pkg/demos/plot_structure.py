"""
From detections to a table grid
===============================

Rows and columns define the lattice; spanning-cell detections merge blocks.
"""

from tabstruct.structure import (
    export_csv,
    export_html,
    infer_grid,
    merge_spans,
    recognize_table,
    synth_table,
)
from tabstruct.ingest import Category

# a 4x4 table with a header spanning every column and a two-row label cell
records, truth = synth_table(4, 4, spans=[(0, 0, 1, 4), (1, 0, 2, 1)], seed=2, jitter=1.5)
for r in records[:3]:
    print(r.category.label, [round(float(v), 1) for v in r.bbox.as_tuple()])

grid = infer_grid(records)
print(f"lattice {grid.n_rows}x{grid.n_cols}, {len(grid.cells)} unit cells")

spans = [r for r in records if r.category is Category.TABLE_SPANNING_CELL]
merged, report = merge_spans(grid, spans)
print(f"merged {report.merged} span(s), {len(merged.cells)} cells remain")

recognized = recognize_table(records)
print("same logical structure as the truth:",
      [(c.row, c.col, c.rowspan, c.colspan) for c in recognized.cells]
      == [(c.row, c.col, c.rowspan, c.colspan) for c in truth.cells])

print(export_html(recognized))
print(export_csv(recognized))
