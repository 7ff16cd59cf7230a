"""Confidence prefiltering, score fusion, and greedy non-maximum suppression.

The pipeline treats the ranking score as pluggable: fusing relatedness into
detector confidence (fused = relatedness * confidence) makes suppression
query-aware, while an all-ones relatedness vector reduces it bit-for-bit to
plain confidence NMS.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import boxes_to_array, pairwise_iou
from .io import Detection


@dataclass(eq=False)
class ScoredDetection:
    """A detection carrying its relatedness and fused ranking score."""

    detection: Detection
    relatedness: float
    fused: float


def prefilter(detections: list[Detection], min_confidence: float) -> list[Detection]:
    """Drop detections with confidence below min_confidence, keeping order.

    A detection exactly at the threshold is kept.
    """
    if not np.isfinite(min_confidence) or not 0.0 <= min_confidence <= 1.0:
        raise ValueError(f"min_confidence must be in [0, 1], got {min_confidence!r}")
    return [d for d in detections if d.confidence >= min_confidence]


def fuse(detections: list[Detection], relatedness) -> list[ScoredDetection]:
    """Pair each detection with its relatedness and the product score."""
    rel = np.asarray(relatedness, dtype=np.float64).reshape(-1)
    if rel.shape[0] != len(detections):
        raise ValueError(
            f"got {rel.shape[0]} relatedness values for {len(detections)} detections")
    return [
        ScoredDetection(detection=d, relatedness=float(r), fused=float(r) * d.confidence)
        for d, r in zip(detections, rel)
    ]


def greedy_nms(scored: list[ScoredDetection], iou_threshold: float = 0.5) -> list[ScoredDetection]:
    """Greedy NMS on the fused score.

    Repeatedly keeps the highest-fused remaining detection and suppresses
    every remaining detection whose IoU with it strictly exceeds
    iou_threshold. Equal fused scores are broken by lower input index.

    Returns the kept detections in descending fused order.
    """
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must be in (0, 1), got {iou_threshold!r}")
    if not scored:
        return []
    fused = np.array([s.fused for s in scored], dtype=np.float64)
    indices = np.arange(len(scored))
    # lexsort: last key is primary, so sort by -fused, ties by input index
    order = np.lexsort((indices, -fused))
    boxes = boxes_to_array([s.detection.box for s in scored])[order]

    kept_positions = []
    alive = np.ones(len(scored), dtype=bool)
    for pos in range(len(scored)):
        if not alive[pos]:
            continue
        kept_positions.append(pos)
        overlaps = pairwise_iou(boxes[pos:pos + 1], boxes)[0]
        alive &= overlaps <= iou_threshold
        alive[pos] = False
    return [scored[order[pos]] for pos in kept_positions]


def top_n(scored: list[ScoredDetection], n: int) -> list[ScoredDetection]:
    """First n entries of an already-ranked list (all of them when n exceeds it)."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n!r}")
    return scored[:n]
