"""
Recall study on an adversarial benchmark
========================================

The whole point of query-aware filtering is survival under a tight
proposal budget. This script builds a synthetic dataset engineered so
that confidence ranking fails: every queried object has low detector
confidence (0.10-0.30) while dozens of clutter boxes score 0.40-0.90.
Confidence-only NMS then fills a small budget with clutter. A scorer
trained on pseudo ground truth learns to rank by the query instead.
"""

import tempfile
from pathlib import Path

import numpy as np

from querynms import (
    QueryCase,
    TrainConfig,
    TrainSample,
    adversarial_world,
    assign_targets,
    build_foreground,
    compare,
    init_params,
    load_annotations,
    load_detections,
    load_embeddings,
    load_noun_lexicon,
    load_queries,
    lookup_words,
    prefilter,
    train,
    write_report_csv,
)

work = Path(tempfile.mkdtemp(prefix="recall_study_"))
world = adversarial_world(work / "world", n_queries=100, seed=0)

queries = load_queries(world.queries)
annotations = load_annotations(world.annotations)
table = load_embeddings(world.embeddings)
lexicon = load_noun_lexicon(world.lexicon)
detections = dict(load_detections(world.detections))

first = queries[0]
confs = sorted((d.confidence for d in detections[first.image_id]), reverse=True)
print(f"{len(queries)} queries over {len(detections)} images; query 0 asks "
      f"for {' '.join(first.tokens)!r}")
print(f"image {first.image_id}: {len(confs)} boxes, top confidences "
      f"{[round(c, 2) for c in confs[:5]]}, referent boxes sit at 0.10-0.30")

# Pseudo ground truth per query: the annotated referent plus any annotated
# object whose label is similar to a query noun. Targets grade every
# surviving detection against that foreground set.
samples, cases = [], []
for query in queries:
    fg = build_foreground(query.referent_box, query.tokens,
                          annotations.get(query.image_id, []), table, lexicon)
    dets = prefilter(detections[query.image_id], 0.05)
    samples.append(TrainSample(
        V=np.stack([d.feature for d in dets]),
        W=lookup_words(query.tokens, table),
        targets=assign_targets(dets, fg)))
    cases.append(QueryCase(query=query, detections=detections[query.image_id],
                           foreground=fg))

result = train(init_params(v=16, q=16, seed=0), samples,
               TrainConfig(epochs=30, lr=5e-3, batch_size=8, seed=0),
               loss_kind="binary_xe")
print(f"\ntrained 30 epochs of binary_xe; loss "
      f"{result.history[0].loss:.4f} -> {result.history[-1].loss:.4f}")

# Head-to-head comparison. Both methods run the same greedy NMS; the only
# difference is the score it suppresses on: raw confidence vs
# relatedness * confidence.
budgets = [1, 5, 10, 50, 100]
report = compare(cases, result.params, budgets, table=table)

print(f"\nreferent recall over {report.query_count} queries "
      f"({report.contextual_pair_count} contextual pairs):")
print(f"{'budget':>8} {'baseline':>10} {'query_aware':>12}")
for n in budgets:
    base = report.row("baseline", n)
    aware = report.row("query_aware", n)
    print(f"{n:>8} {base.referent_recall:>10.3f} {aware.referent_recall:>12.3f}")

# The gap collapses at large budgets: once the budget exceeds the number
# of surviving boxes, both methods keep everything and only the ordering
# inside the list differs.
base10 = report.row("baseline", 10)
aware10 = report.row("query_aware", 10)
print(f"\nat budget 10 the query-aware list also recovers contextual "
      f"objects: {aware10.contextual_recall:.3f} vs "
      f"{base10.contextual_recall:.3f} for confidence ranking")

# Reports are written as CSV with the run settings echoed in '#' comment
# lines, so numbers never get separated from the configuration that
# produced them.
report_path = work / "report.csv"
write_report_csv(report_path, report,
                 header_fields={"nms_iou": 0.5, "similarity_threshold": 0.4})
print(f"\nwrote {report_path}:")
print(report_path.read_text(), end="")
