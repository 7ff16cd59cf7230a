"""
Boxes, overlap, and query-aware suppression
===========================================

Greedy NMS keeps the highest-scoring box and drops everything that overlaps
it too much. Which box "wins" depends entirely on the ranking score, so
fusing a query-relatedness signal into the score changes who survives.
"""

import numpy as np

from querynms import Box, Detection, fuse, greedy_nms, iou, prefilter, top_n

# Two heavily overlapping boxes and one off to the side.
a = Box(10, 10, 50, 50)
b = Box(14, 14, 54, 54)   # shifted copy of a
c = Box(80, 10, 120, 50)  # disjoint from both
print(f"iou(a, b) = {iou(a, b):.3f}   iou(a, c) = {iou(a, c):.3f}")

# Wrap them as detector outputs. The box the query cares about (a) got a
# low confidence; the duplicate and the distractor scored higher.
feature = np.zeros(4)  # features only matter once a scorer is involved
detections = [
    Detection(box=a, label="cat", confidence=0.25, feature=feature),
    Detection(box=b, label="cat", confidence=0.60, feature=feature),
    Detection(box=c, label="sofa", confidence=0.90, feature=feature),
]

# A confidence prefilter runs before any ranking; nothing here is that weak.
kept = prefilter(detections, min_confidence=0.05)
print(f"prefilter kept {len(kept)} of {len(detections)}")

# Confidence-only suppression: relatedness pinned at 1. The duplicate b
# outranks a, so a is suppressed and the query's box is gone.
confidence_only = greedy_nms(fuse(kept, [1.0, 1.0, 1.0]), iou_threshold=0.5)
print("\nconfidence-only survivors:")
for s in confidence_only:
    print(f"  {s.detection.label:5s} conf={s.detection.confidence:.2f} "
          f"fused={s.fused:.3f} box={s.detection.box.as_tuple()}")

# Now suppose a relatedness scorer judged a and b against the query "cat on
# the left" and liked a much more. The fused score r*c reranks the pair, a
# wins the duel, and b is suppressed instead.
relatedness = [0.95, 0.20, 0.10]
query_aware = greedy_nms(fuse(kept, relatedness), iou_threshold=0.5)
print("\nquery-aware survivors:")
for s in query_aware:
    print(f"  {s.detection.label:5s} conf={s.detection.confidence:.2f} "
          f"rel={s.relatedness:.2f} fused={s.fused:.3f}")

# The ranking only cares about relative order, so scaling every relatedness
# by a positive constant changes nothing.
scaled = greedy_nms(fuse(kept, np.multiply(relatedness, 37.0)), iou_threshold=0.5)
assert [s.detection for s in scaled] == [s.detection for s in query_aware]
print("\nscaling relatedness by 37 leaves the survivor order unchanged")

# A proposal budget is just a prefix of the ranked survivors.
print(f"top-1 under the query-aware ranking: "
      f"{top_n(query_aware, 1)[0].detection.label}")
