"""
COCO-style average precision
============================

Perturb a synthetic table's ground truth, add a few false positives and
score the result.
"""

import numpy as np

from tabstruct.evaluation import evaluate, match_detections
from tabstruct.geometry import BBox
from tabstruct.ingest import AnnotatedImage, DetectionRecord, GroundTruthObject
from tabstruct.structure import synth_table

rng = np.random.default_rng(3)
images, preds = [], []
for i in range(4):
    records, _ = synth_table(4, 5, [(0, 0, 1, 5)], seed=i, image_id=f"page{i}")
    images.append(AnnotatedImage(f"page{i}", 600, 400, [GroundTruthObject(r.category, r.bbox) for r in records]))
    for r in records:
        d = rng.normal(scale=4, size=4)
        x0, y0, x1, y1 = np.asarray(r.bbox.as_tuple()) + d
        box = BBox(min(x0, x1), min(y0, y1), max(x0, x1), max(y0, y1))
        preds.append(DetectionRecord(r.image_id, r.category, box, float(rng.uniform(0.5, 1.0))))
    # a stray column nowhere near the table
    preds.append(DetectionRecord(f"page{i}", records[-1].category, BBox(500, 300, 520, 390), 0.9))

report = evaluate(images, preds)
print(report.to_text())

# the matching behind one AP50 number
ms = match_detections(images[0], [p for p in preds if p.image_id == "page0"], 0.5)
tp = sum(m.gt_index is not None for m in ms.matches)
print(f"page0 at IoU 0.5: {tp} true positives out of {len(ms.matches)} predictions")
