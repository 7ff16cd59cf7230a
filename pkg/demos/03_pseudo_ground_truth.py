"""
Foreground sets without extra labels
====================================

Training the scorer needs to know, per query, which boxes matter. The
referent box is annotated; the other mentioned objects usually are not.
Word-embedding similarity between query nouns and annotation labels fills
that gap: any annotated box whose label is close to a query noun joins the
foreground set.
"""

import numpy as np

from querynms import (
    Annotation,
    Box,
    Detection,
    EmbeddingTable,
    assign_targets,
    build_foreground,
    cosine,
    extract_nouns,
    overlap_level,
)

# A toy embedding table. "kitten" sits close to "cat"; "lamp" does not.
table = EmbeddingTable(dimension=3, vectors={
    "cat":    np.array([1.0, 0.0, 0.0]),
    "kitten": np.array([0.9, 0.1, 0.0]),
    "lamp":   np.array([0.0, 1.0, 0.0]),
    "rug":    np.array([0.3, 0.3, 0.9]),
})
for word in ("kitten", "lamp", "rug"):
    print(f"cosine(cat, {word}) = {cosine(table.vector('cat'), table.vector(word)):.3f}")

# The query mentions two nouns; only lexicon words count as nouns.
tokens = ["the", "cat", "next", "to", "the", "lamp"]
lexicon = {"cat", "lamp", "kitten", "rug"}
print("query nouns:", extract_nouns(tokens, lexicon))

# Image annotations: labels plus boxes. Matching happens label-to-noun.
annotations = [
    Annotation(label="kitten", box=Box(0, 0, 20, 20)),
    Annotation(label="lamp", box=Box(60, 0, 80, 30)),
    Annotation(label="rug", box=Box(0, 60, 90, 90)),
]
referent = Box(2, 2, 22, 22)

# At the default threshold 0.4, "kitten" matches "cat" and "lamp" matches
# itself; "rug" is close to neither noun.
fg = build_foreground(referent, tokens, annotations, table, lexicon)
print(f"\nforeground via {fg.provenance}: referent + "
      f"{[a.label for a in fg.contextual]}")

# Loosen the threshold and rug joins; tighten it past kitten's 0.994
# similarity and only the literal "lamp" match survives.
for threshold in (0.2, 0.4, 0.999):
    fg_t = build_foreground(referent, tokens, annotations, table, lexicon,
                            similarity_threshold=threshold)
    print(f"threshold {threshold}: contextual = {[a.label for a in fg_t.contextual]}")

# Targets grade each detection by its best overlap with the foreground.
# Above 0.5 the box counts as foreground (label 1); the surplus overlap is
# bucketed into levels 1..5 that later drive ranking-pair selection.
feature = np.zeros(2)
detections = [
    Detection(box=Box(2, 2, 22, 22), label="d", confidence=0.5, feature=feature),
    Detection(box=Box(8, 8, 28, 28), label="d", confidence=0.5, feature=feature),
    Detection(box=Box(40, 40, 55, 55), label="d", confidence=0.5, feature=feature),
]
print()
for det, target in zip(detections, assign_targets(detections, fg)):
    print(f"box {det.box.as_tuple()}: overlap {target.fg_iou:.3f} "
          f"-> label {target.label}, level {target.level}")

# The level function is a strict bucket count over 0.5..0.9.
print("\nlevels at exact overlaps:",
      {x: overlap_level(x) for x in (0.5, 0.55, 0.7, 0.9, 1.0)})
