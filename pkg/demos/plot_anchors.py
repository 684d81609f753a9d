"""
Structure-aware anchors
=======================

Column anchors keep the level extent as their height and vary the width;
row anchors do the opposite. Typical anchors keep a constant area.
"""

import numpy as np

from tabstruct.anchors import (
    AnchorConfig,
    AnchorMode,
    expected_anchor_count,
    generate_anchors,
    generate_column_anchors,
    generate_typical_anchors,
    sample_proposals_size_prioritized,
)
from tabstruct.geometry import BBox, box_size

# one 32 px level on a 32x32 image: a single grid cell
cfg = AnchorConfig(32, 32, levels=((32, 32),), aspect_ratios=(0.5, 1, 2), clip_to_image=False)
cols = generate_column_anchors(cfg)
print("column anchor shapes (w, h):", list(zip(cols.widths().tolist(), cols.heights().tolist())))

typical = generate_typical_anchors(
    AnchorConfig(32, 32, mode=AnchorMode.TYPICAL, levels=((32, 32),), clip_to_image=False)
)
print("typical anchor shapes (w, h):", [(round(w, 2), round(h, 2)) for w, h in zip(typical.widths().tolist(), typical.heights().tolist())])

# a page-sized image with the default pyramid
page = AnchorConfig(600, 800)
everything = generate_anchors(page)
print(f"{len(everything)} anchors, formula says {2 * expected_anchor_count(page)} (columns + rows)")
for level in range(len(page.levels)):
    n = int(np.sum(everything.levels == level))
    print(f"  level {level}: {n}")

# size-prioritized sampling favours small proposals
rng = np.random.default_rng(0)
proposals = []
for x, y, w, h in rng.uniform([0, 0, 5, 5], [500, 500, 300, 300], size=(200, 4)):
    proposals.append((BBox(x, y, x + w, y + h), 1.0))
picked = sample_proposals_size_prioritized(proposals, k=20, gamma=1.0, seed=1)
mean_all = np.mean([box_size(b) for b, _ in proposals])
mean_picked = np.mean([box_size(b) for b, _ in picked])
print(f"mean size of all proposals {mean_all:.1f}, of the sample {mean_picked:.1f}")
