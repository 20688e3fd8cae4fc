"""Query-level spatial-temporal graph detection toolkit.

Thin python surface over the C++ core: rotated-box geometry, graph node
selection, Hungarian assignment, the IoU regularizer, recall evaluation,
and the synthetic streaming pipeline (JSON in / JSON out).
"""

from stgd._core import (
    ValidationError,
    bev_corners,
    center_distance_bev,
    default_config,
    focal_term,
    giou_3d,
    gradcheck,
    hungarian,
    iou_3d,
    iou_bev,
    iou_regularizer,
    op_counter,
    recall_at,
    run,
    select_nodes,
    simulate,
    suppress_scores,
)

__all__ = [
    "ValidationError",
    "bev_corners",
    "center_distance_bev",
    "default_config",
    "focal_term",
    "giou_3d",
    "gradcheck",
    "hungarian",
    "iou_3d",
    "iou_bev",
    "iou_regularizer",
    "op_counter",
    "recall_at",
    "run",
    "select_nodes",
    "simulate",
    "suppress_scores",
]
