"""Foreground-set construction and per-box training targets.

A query's foreground is the referent box it names plus contextual objects:
annotated boxes whose label is semantically close to a noun in the query.
Closeness is cosine similarity between word embeddings, so contextual
objects need no extra human labeling. Externally supplied foreground
annotations can also be imported as-is.

Training targets are derived per box from its best IoU against the
foreground set; the overlap is additionally bucketed into coarse levels
used to pick ranking pairs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou
from .io import (
    Annotation,
    Detection,
    EmbeddingTable,
    SchemaError,
    iter_jsonl,
    normalize_tokens,
)

DEFAULT_SIMILARITY_THRESHOLD = 0.4

# Strict lower edges of the overlap buckets above the foreground cutoff.
_LEVEL_EDGES = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass
class ForegroundSet:
    """Foreground boxes for one (image, query) pair.

    provenance is "referent", "text_sim", or "wspg_import" depending on how
    the contextual part was produced ("referent" when it is empty). The set
    itself may be empty (no referent annotation, no contextual matches).
    """

    referent: Box | None = None
    contextual: list[Annotation] = field(default_factory=list)
    provenance: str = "referent"

    def all_boxes(self) -> list[Box]:
        ref = [] if self.referent is None else [self.referent]
        return ref + [a.box for a in self.contextual]


@dataclass
class BoxTarget:
    """Supervision for one detection against one foreground set."""

    fg_iou: float  # best IoU against any foreground box
    label: int     # 1 when fg_iou > 0.5, else 0
    level: int     # overlap bucket in 0..5; 0 iff label is 0


def overlap_level(fg_iou: float) -> int:
    """Bucket a foreground overlap into levels 0..5.

    Level k covers overlaps in (0.4 + 0.1k, 0.5 + 0.1k]; everything at or
    below 0.5 is level 0. Counting strictly-exceeded bucket edges avoids the
    float dust a ceil((iou - 0.5) / 0.1) would pick up.
    """
    return sum(1 for edge in _LEVEL_EDGES if fg_iou > edge)


def extract_nouns(tokens: list[str], lexicon: set[str]) -> list[str]:
    """Tokens that appear in the noun lexicon, deduplicated, query order."""
    seen = []
    for tok in tokens:
        if tok in lexicon and tok not in seen:
            seen.append(tok)
    return seen


def cosine(a, b) -> float:
    """Cosine similarity, defined as 0 when either vector has zero norm."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def label_embedding(label: str, table: EmbeddingTable) -> np.ndarray:
    """Embedding of a (possibly multiword) category label.

    Multiword labels average their token embeddings; unknown tokens fall
    back to the table's unk vector.
    """
    tokens = normalize_tokens(label)
    if not tokens:
        raise ValueError(f"label {label!r} has no usable tokens")
    return np.mean([table.vector(tok) for tok in tokens], axis=0)


def match_contextual(
    query_tokens: list[str],
    annotations: list[Annotation],
    table: EmbeddingTable,
    lexicon: set[str],
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> list[Annotation]:
    """Annotated boxes whose label is close to some noun in the query.

    An annotation is contextual when max over query nouns of the cosine
    between the noun embedding and the label embedding reaches the
    threshold (>=). Order of the input annotations is preserved.
    """
    nouns = extract_nouns(query_tokens, lexicon)
    if not nouns:
        return []
    noun_vecs = [table.vector(n) for n in nouns]
    matched = []
    for ann in annotations:
        lab = label_embedding(ann.label, table)
        best = max(cosine(nv, lab) for nv in noun_vecs)
        if best >= similarity_threshold:
            matched.append(ann)
    return matched


def build_foreground(
    referent: Box | None,
    query_tokens: list[str],
    annotations: list[Annotation],
    table: EmbeddingTable,
    lexicon: set[str],
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD,
) -> ForegroundSet:
    """Referent plus text-similarity contextual objects for one query."""
    contextual = match_contextual(
        query_tokens, annotations, table, lexicon, similarity_threshold)
    provenance = "text_sim" if contextual else "referent"
    return ForegroundSet(referent=referent, contextual=contextual, provenance=provenance)


def import_foreground(referent: Box | None, contextual: list[Annotation]) -> ForegroundSet:
    """Wrap an externally supplied contextual list verbatim (WSPG import)."""
    return ForegroundSet(referent=referent, contextual=list(contextual),
                         provenance="wspg_import" if contextual else "referent")


def assign_targets(detections: list[Detection], foreground: ForegroundSet) -> list[BoxTarget]:
    """Per-detection supervision against a foreground set, in input order.

    An empty foreground set yields (fg_iou=0, label=0, level=0) everywhere.
    """
    fg_boxes = foreground.all_boxes()
    targets = []
    for det in detections:
        best = max((iou(det.box, fg) for fg in fg_boxes), default=0.0)
        lvl = overlap_level(best)
        targets.append(BoxTarget(fg_iou=best, label=1 if best > 0.5 else 0, level=lvl))
    return targets


@dataclass
class ForegroundRecord:
    """One query's foreground set plus the matching per-detection targets.

    Targets are aligned with the query image's detections after the
    confidence prefilter recorded in the file header.
    """

    query_id: str
    image_id: str
    foreground: ForegroundSet
    targets: list[BoxTarget]


FOREGROUND_FORMAT = "querynms-foreground-v1"

PROVENANCES = ("referent", "text_sim", "wspg_import")


def write_foreground(path, records: list[ForegroundRecord], source: str,
                     similarity_threshold: float, min_confidence: float) -> None:
    """Write foreground records as JSONL behind a self-describing header line.

    The header pins the settings that shaped the records (pseudo-GT source,
    similarity threshold, confidence prefilter), so consumers can replay the
    same prefilter and stay index-aligned with the targets.
    """
    header = {
        "format": FOREGROUND_FORMAT,
        "source": source,
        "similarity_threshold": similarity_threshold,
        "min_confidence": min_confidence,
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for rec in records:
            ref = rec.foreground.referent
            fh.write(json.dumps({
                "query_id": rec.query_id,
                "image_id": rec.image_id,
                "referent": None if ref is None else list(ref.as_tuple()),
                "contextual": [
                    {"label": a.label, "box": list(a.box.as_tuple())}
                    for a in rec.foreground.contextual
                ],
                "provenance": rec.foreground.provenance,
                "targets": [
                    {"fg_iou": t.fg_iou, "label": t.label, "level": t.level}
                    for t in rec.targets
                ],
            }) + "\n")


def load_foreground(path) -> tuple[list[ForegroundRecord], dict]:
    """Read a foreground file; returns (records, header)."""
    rows = iter_jsonl(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise SchemaError(f"{path}: empty foreground file") from None
    if not isinstance(header, dict) or header.get("format") != FOREGROUND_FORMAT:
        raise SchemaError(f"{path}: not a {FOREGROUND_FORMAT} file")
    records = []
    for lineno, rec in rows:
        try:
            raw_ref = rec["referent"]
            referent = None if raw_ref is None else Box(*(float(c) for c in raw_ref))
            contextual = [
                Annotation(label=str(a["label"]), box=Box(*(float(c) for c in a["box"])))
                for a in rec["contextual"]
            ]
            provenance = rec["provenance"]
            if provenance not in PROVENANCES:
                raise SchemaError(f"unknown provenance {provenance!r}")
            targets = [
                BoxTarget(fg_iou=float(t["fg_iou"]), label=int(t["label"]),
                          level=int(t["level"]))
                for t in rec["targets"]
            ]
            records.append(ForegroundRecord(
                query_id=str(rec["query_id"]),
                image_id=str(rec["image_id"]),
                foreground=ForegroundSet(referent=referent, contextual=contextual,
                                         provenance=provenance),
                targets=targets,
            ))
        except KeyError as exc:
            raise SchemaError(f"{path}:{lineno}: missing field {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return records, header
