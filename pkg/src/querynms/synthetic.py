"""Synthetic fixtures: datasets where the right answers are known by design.

Two generators plus a micro-benchmark instance builder:

  * `separable_dataset` builds in-memory training samples whose relevant
    boxes carry one feature pattern and clutter the opposite pattern, with
    graded foreground overlaps for ranking-loss levels.
  * `adversarial_world` writes a full on-disk dataset (detections, queries,
    annotations, embeddings, lexicon) where every query-relevant object has
    LOWER detector confidence than the surrounding clutter. Confidence-only
    ranking buries the relevant boxes; a correct relatedness scorer digs
    them out. Topic codes are orthogonal sign vectors, so a box is
    query-relevant exactly when its topic word appears in the query.

Both are deterministic given their seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import Box
from .io import Detection
from .pseudo_gt import ForegroundSet, assign_targets
from .training import TrainSample

TOPIC_NOUNS = (
    "cat", "dog", "chair", "table", "car", "bus", "tree", "lamp",
    "cup", "plate", "bird", "fish", "sofa", "desk", "bike", "boat",
)


def _hadamard(n: int) -> np.ndarray:
    """Sylvester construction; n must be a power of two."""
    if n < 1 or n & (n - 1):
        raise ValueError(f"n must be a power of two, got {n}")
    h = np.ones((1, 1))
    while h.shape[0] < n:
        h = np.block([[h, h], [h, -h]])
    return h


def shifted_box(ref: Box, target_iou: float) -> Box:
    """A copy of `ref` shifted right so that IoU(ref, result) = target_iou.

    For a w-wide box shifted by dx, IoU = (w - dx) / (w + dx), so
    dx = w (1 - iou) / (1 + iou). Exact up to float rounding; callers should
    pick mid-bucket targets.
    """
    if not 0.0 < target_iou <= 1.0:
        raise ValueError(f"target_iou must be in (0, 1], got {target_iou!r}")
    w = ref.x2 - ref.x1
    dx = w * (1.0 - target_iou) / (1.0 + target_iou)
    return Box(ref.x1 + dx, ref.y1, ref.x2 + dx, ref.y2)


def separable_dataset(
    n_samples: int = 20,
    v: int = 16,
    q: int = 8,
    seed: int = 0,
    noise: float = 0.05,
) -> list[TrainSample]:
    """Linearly separable training samples with graded overlap levels.

    Each sample has one referent box, three relevant boxes at foreground
    overlaps ~{0.95, 0.75, 0.55} (levels 5, 3, 1) carrying pattern +code,
    and five disjoint clutter boxes carrying pattern -code (level 0).
    """
    rng = np.random.default_rng(seed)
    code = rng.choice([-1.0, 1.0], size=v)
    word_a = rng.choice([-1.0, 1.0], size=q)
    word_b = rng.choice([-1.0, 1.0], size=q)
    W = np.stack([word_a, word_b])
    referent = Box(20.0, 20.0, 40.0, 40.0)
    relevant_boxes = [shifted_box(referent, rho) for rho in (0.95, 0.75, 0.55)]
    clutter_boxes = [Box(60.0 + 25.0 * k, 60.0, 75.0 + 25.0 * k, 75.0) for k in range(5)]
    foreground = ForegroundSet(referent=referent)

    samples = []
    for _ in range(n_samples):
        detections = []
        for box in relevant_boxes:
            feature = code + rng.normal(0.0, noise, size=v)
            detections.append(Detection(box=box, label="relevant", confidence=0.5,
                                        feature=feature))
        for box in clutter_boxes:
            feature = -code + rng.normal(0.0, noise, size=v)
            detections.append(Detection(box=box, label="clutter", confidence=0.5,
                                        feature=feature))
        targets = assign_targets(detections, foreground)
        V = np.stack([d.feature for d in detections])
        samples.append(TrainSample(V=V, W=W.copy(), targets=targets))
    return samples


@dataclass
class WorldPaths:
    """File locations of a generated on-disk dataset."""

    detections: Path
    queries: Path
    annotations: Path
    embeddings: Path
    lexicon: Path


# Grid layout: 7x7 cells of CELL px; row 0 holds the relevant objects,
# rows 1..6 hold clutter. Boxes are inset so boxes in different cells
# never overlap.
CELL = 16.0
OBJECTS_PER_IMAGE = 6
QUERIES_PER_IMAGE = 5


def _cell_box(row: int, col: int, jx: float = 0.0, jy: float = 0.0) -> Box:
    x1 = CELL * col + 2.0 + jx
    y1 = CELL * row + 2.0 + jy
    return Box(x1, y1, x1 + 12.0, y1 + 12.0)


def adversarial_world(
    out_dir,
    n_queries: int = 200,
    v: int = 16,
    q: int = 16,
    seed: int = 0,
    noise: float = 0.05,
) -> WorldPaths:
    """Write a dataset where relevant objects always have low confidence.

    Every image holds 6 objects (confidence 0.10-0.30) of rotating topics,
    one jittered duplicate per object, ~40 high-confidence clutter boxes
    (0.40-0.90) of other topics, and 2 junk boxes below the usual
    confidence prefilter. Each query names one object as referent and a
    second as context ("<noun> near <noun>"). Word and feature topic codes
    are orthogonal sign vectors, so relevance is decided by the query, not
    by the feature alone: the same topic is relevant in one image and
    clutter in another.
    """
    n_topics = len(TOPIC_NOUNS)
    if v < n_topics or q < n_topics:
        raise ValueError(f"v and q must be >= {n_topics} to fit the topic codes")
    if n_queries < 1:
        raise ValueError("n_queries must be >= 1")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    word_codes = np.zeros((n_topics, q))
    word_codes[:, :n_topics] = _hadamard(n_topics)
    feature_codes = np.zeros((n_topics, v))
    feature_codes[:, :n_topics] = _hadamard(n_topics)

    n_images = -(-n_queries // QUERIES_PER_IMAGE)
    det_lines = []
    query_lines = []
    ann_lines = []
    queries_left = n_queries
    for img in range(n_images):
        image_id = f"img{img:04d}"
        topics = [(img + i) % n_topics for i in range(OBJECTS_PER_IMAGE)]
        other_topics = [t for t in range(n_topics) if t not in topics]

        object_boxes = []
        for i, topic in enumerate(topics):
            box = _cell_box(0, i)
            object_boxes.append(box)
            conf = float(rng.uniform(0.10, 0.30))
            feat = feature_codes[topic] + rng.normal(0.0, noise, size=v)
            det_lines.append({"image_id": image_id, "box": list(box.as_tuple()),
                              "label": TOPIC_NOUNS[topic], "confidence": round(conf, 6),
                              "feature": [round(x, 6) for x in feat]})
            dup = Box(box.x1 + 2.0, box.y1 + 2.0, box.x2 + 2.0, box.y2 + 2.0)
            feat = feature_codes[topic] + rng.normal(0.0, noise, size=v)
            det_lines.append({"image_id": image_id, "box": list(dup.as_tuple()),
                              "label": TOPIC_NOUNS[topic], "confidence": round(conf - 0.02, 6),
                              "feature": [round(x, 6) for x in feat]})
            ann_lines.append({"image_id": image_id, "box": list(box.as_tuple()),
                              "label": TOPIC_NOUNS[topic]})

        for row in range(1, 7):
            for col in range(7):
                if row == 6 and col >= 4:
                    continue
                topic = int(rng.choice(other_topics))
                jx, jy = rng.integers(0, 3, size=2)
                box = _cell_box(row, col, float(jx), float(jy))
                conf = float(rng.uniform(0.40, 0.90))
                feat = feature_codes[topic] + rng.normal(0.0, noise, size=v)
                det_lines.append({"image_id": image_id, "box": list(box.as_tuple()),
                                  "label": TOPIC_NOUNS[topic], "confidence": round(conf, 6),
                                  "feature": [round(x, 6) for x in feat]})
                ann_lines.append({"image_id": image_id, "box": list(box.as_tuple()),
                                  "label": TOPIC_NOUNS[topic]})
                if (row + col) % 5 == 0:
                    dup = Box(box.x1 + 1.0, box.y1 + 1.0, box.x2 + 1.0, box.y2 + 1.0)
                    feat = feature_codes[topic] + rng.normal(0.0, noise, size=v)
                    det_lines.append({"image_id": image_id, "box": list(dup.as_tuple()),
                                      "label": TOPIC_NOUNS[topic],
                                      "confidence": round(conf - 0.05, 6),
                                      "feature": [round(x, 6) for x in feat]})

        for k in range(2):
            box = _cell_box(6, 5 + k)
            feat = rng.normal(0.0, noise, size=v)
            det_lines.append({"image_id": image_id, "box": list(box.as_tuple()),
                              "label": "junk", "confidence": round(float(rng.uniform(0.01, 0.04)), 6),
                              "feature": [round(x, 6) for x in feat]})

        for i in range(QUERIES_PER_IMAGE):
            if queries_left == 0:
                break
            queries_left -= 1
            ref_topic = topics[i]
            ctx_topic = topics[i + 1]
            query_lines.append({
                "query_id": f"{image_id}-q{i}",
                "image_id": image_id,
                "tokens": [TOPIC_NOUNS[ref_topic], "near", TOPIC_NOUNS[ctx_topic]],
                "referent_box": list(object_boxes[i].as_tuple()),
            })

    paths = WorldPaths(
        detections=out_dir / "detections.jsonl",
        queries=out_dir / "queries.jsonl",
        annotations=out_dir / "annotations.jsonl",
        embeddings=out_dir / "embeddings.txt",
        lexicon=out_dir / "noun_lexicon.txt",
    )
    _write_jsonl(paths.detections, det_lines)
    _write_jsonl(paths.queries, query_lines)
    _write_jsonl(paths.annotations, ann_lines)
    with open(paths.embeddings, "w", encoding="utf-8") as fh:
        for topic, noun in enumerate(TOPIC_NOUNS):
            vec = " ".join(repr(float(x)) for x in word_codes[topic])
            fh.write(f"{noun} {vec}\n")
    with open(paths.lexicon, "w", encoding="utf-8") as fh:
        fh.write("\n".join(TOPIC_NOUNS) + "\n")
    return paths


def _write_jsonl(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def random_instance(n_boxes: int, v: int = 64, q: int = 32, n_words: int = 1, seed: int = 0):
    """One random scoring+suppression workload for benchmarking.

    Returns (detections, V, W): n_boxes random boxes with random confidences
    and features in a 400x400 image, plus an n_words query matrix.
    """
    rng = np.random.default_rng(seed)
    detections = []
    for _ in range(n_boxes):
        x1, y1 = rng.uniform(0.0, 360.0, size=2)
        w, h = rng.uniform(10.0, 40.0, size=2)
        detections.append(Detection(
            box=Box(float(x1), float(y1), float(x1 + w), float(y1 + h)),
            label="obj",
            confidence=float(rng.uniform(0.05, 1.0)),
            feature=rng.normal(0.0, 1.0, size=v),
        ))
    V = np.stack([d.feature for d in detections])
    W = rng.normal(0.0, 1.0, size=(n_words, q))
    return detections, V, W
