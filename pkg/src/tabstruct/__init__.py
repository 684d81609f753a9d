"""Top-down table structure recognition toolkit.

Structure-aware anchor generation, the detection-difficulty cost-sensitive
loss, COCO-style AP evaluation, and table-grid inference from row, column
and spanning-cell detections.
"""

from .anchors import (
    AnchorConfig,
    AnchorMode,
    AnchorRole,
    AnchorSet,
    generate_anchors,
    generate_column_anchors,
    generate_row_anchors,
    generate_typical_anchors,
    sample_proposals_size_prioritized,
)
from .evaluation import APReport, evaluate, match_detections, pr_curve
from .geometry import BBox, SizeBucket, box_size, intersect, iou, iou_matrix, size_bucket
from .ingest import (
    AnnotatedImage,
    Category,
    DatasetStats,
    DetectionRecord,
    GroundTruthObject,
    ParseError,
    dataset_stats,
    parse_detections,
    parse_voc_xml,
    to_voc_xml,
)
from .loss import (
    BatchClassStats,
    ClassWeights,
    HardnessParams,
    class_hardness,
    class_weights,
    cost_sensitive_l1,
    cost_sensitive_l1_grad,
    loss_gradients,
    smooth_l1,
    weighted_cross_entropy,
    weighted_cross_entropy_grad,
)
from .structure import (
    Cell,
    NoStructureError,
    StructureConfig,
    TableGrid,
    apply_spanning,
    export_csv,
    export_html,
    export_json,
    infer_grid,
    nms,
    recognize_table,
    synth_table,
)

__version__ = "0.1.0"

__all__ = [
    "AnchorConfig",
    "AnchorMode",
    "AnchorRole",
    "AnchorSet",
    "AnnotatedImage",
    "apply_spanning",
    "APReport",
    "BatchClassStats",
    "BBox",
    "box_size",
    "Category",
    "Cell",
    "class_hardness",
    "class_weights",
    "ClassWeights",
    "cost_sensitive_l1",
    "cost_sensitive_l1_grad",
    "dataset_stats",
    "DatasetStats",
    "DetectionRecord",
    "evaluate",
    "export_csv",
    "export_html",
    "export_json",
    "generate_anchors",
    "generate_column_anchors",
    "generate_row_anchors",
    "generate_typical_anchors",
    "GroundTruthObject",
    "HardnessParams",
    "infer_grid",
    "intersect",
    "iou",
    "iou_matrix",
    "loss_gradients",
    "match_detections",
    "nms",
    "NoStructureError",
    "parse_detections",
    "parse_voc_xml",
    "ParseError",
    "pr_curve",
    "recognize_table",
    "sample_proposals_size_prioritized",
    "size_bucket",
    "SizeBucket",
    "smooth_l1",
    "StructureConfig",
    "synth_table",
    "TableGrid",
    "to_voc_xml",
    "weighted_cross_entropy",
    "weighted_cross_entropy_grad",
]
