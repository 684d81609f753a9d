"""
Streaming dataset statistics
============================

Write a small VOC annotation directory, then summarize it in one pass.
Shards can be summarized separately and merged.
"""

import tempfile
from pathlib import Path

from tabstruct.ingest import (
    AnnotatedImage,
    GroundTruthObject,
    dataset_stats,
    iter_voc_dir,
    to_voc_xml,
)
from tabstruct.structure import synth_table

tmp = Path(tempfile.mkdtemp())
for i in range(12):
    records, _ = synth_table(2 + i % 5, 3 + i % 4, seed=i, image_id=f"doc{i:02d}")
    image = AnnotatedImage(f"doc{i:02d}", 800, 600, [GroundTruthObject(r.category, r.bbox) for r in records])
    (tmp / f"doc{i:02d}.xml").write_text(to_voc_xml(image))

print((tmp / "doc00.xml").read_text()[:300], "...")

stats = dataset_stats(iter_voc_dir(str(tmp)))
print(stats.to_text())

images = list(iter_voc_dir(str(tmp), sort=True))
left, right = dataset_stats(images[:5]), dataset_stats(images[5:])
print("two shards merged equal one pass:", left.merge(right).to_json() == stats.to_json())
