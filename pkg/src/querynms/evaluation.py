"""Recall and precision analysis of filtered proposals.

The central question: after suppression keeps only the top-N proposals,
how often do the boxes a query actually cares about (its referent and its
contextual objects) survive? `compare` answers it for two pipelines that
differ only in ranking score: detector confidence alone versus confidence
fused with learned relatedness.

A box covers a target when their IoU strictly exceeds 0.5.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou
from .io import Detection, QueryRecord, ScorerParams, lookup_words
from .pseudo_gt import ForegroundSet
from .scorer import forward
from .suppression import greedy_nms, fuse, prefilter, top_n

COVER_IOU = 0.5

BASELINE = "baseline"
QUERY_AWARE = "query_aware"
METHODS = (BASELINE, QUERY_AWARE)


@dataclass(eq=False)
class QueryCase:
    """Everything needed to evaluate one query: its detections and targets."""

    query: QueryRecord
    detections: list[Detection]
    foreground: ForegroundSet


@dataclass
class MethodRecall:
    """Recall of one method at one proposal budget."""

    method: str
    budget: int
    referent_recall: float
    contextual_recall: float | None  # None when no contextual pairs exist


@dataclass
class RecallReport:
    """compare() output: recall rows plus the dataset counts behind them."""

    rows: list[MethodRecall] = field(default_factory=list)
    query_count: int = 0
    contextual_pair_count: int = 0

    def row(self, method: str, budget: int) -> MethodRecall:
        for r in self.rows:
            if r.method == method and r.budget == budget:
                return r
        raise KeyError(f"no row for method={method!r}, budget={budget}")


def _covered(target: Box, proposals: list[Box]) -> bool:
    return any(iou(p, target) > COVER_IOU for p in proposals)


def referent_recall(kept_boxes_per_query: list[list[Box]], referents: list[Box], n: int) -> float:
    """Fraction of queries whose referent is covered by some top-n proposal.

    Args:
        kept_boxes_per_query: per query, proposal boxes in ranked order.
        referents: one referent box per query.
        n: proposal budget.
    """
    if len(kept_boxes_per_query) != len(referents):
        raise ValueError("one referent per query required")
    if not referents:
        raise ValueError("referent_recall needs at least one query")
    hits = sum(
        1 for boxes, ref in zip(kept_boxes_per_query, referents) if _covered(ref, boxes[:n]))
    return hits / len(referents)


def contextual_recall(
    kept_boxes_per_query: list[list[Box]],
    contextual_per_query: list[list[Box]],
    n: int,
    average: str = "micro",
) -> float | None:
    """Recall of contextual boxes within the top-n proposals.

    "micro" (default) pools every (query, contextual box) pair; "macro"
    averages per-query recall over queries that have contextual boxes.
    Queries without contextual boxes contribute nothing; if no query has
    any, the metric is undefined and None is returned.
    """
    if average not in ("micro", "macro"):
        raise ValueError(f"average must be 'micro' or 'macro', got {average!r}")
    if len(kept_boxes_per_query) != len(contextual_per_query):
        raise ValueError("contextual lists must align with queries")
    covered = 0
    total = 0
    per_query = []
    for boxes, targets in zip(kept_boxes_per_query, contextual_per_query):
        if not targets:
            continue
        top = boxes[:n]
        hits = sum(1 for t in targets if _covered(t, top))
        covered += hits
        total += len(targets)
        per_query.append(hits / len(targets))
    if total == 0:
        return None
    if average == "micro":
        return covered / total
    return sum(per_query) / len(per_query)


def top1_hit(predictions: list[Box], referents: list[Box]) -> float:
    """Fraction of queries where the single prediction covers the referent."""
    if len(predictions) != len(referents):
        raise ValueError("one prediction per query required")
    if not referents:
        raise ValueError("top1_hit needs at least one query")
    hits = sum(1 for p, ref in zip(predictions, referents) if iou(p, ref) > COVER_IOU)
    return hits / len(referents)


def pr_at_x(ious: list[float], thresholds: list[float]) -> dict[float, float]:
    """For each threshold X, the fraction of samples with IoU strictly above X."""
    for x in thresholds:
        if not 0.0 < x < 1.0:
            raise ValueError(f"thresholds must lie in (0, 1), got {x!r}")
    if not ious:
        raise ValueError("pr_at_x needs at least one sample")
    return {x: sum(1 for v in ious if v > x) / len(ious) for x in thresholds}


def rank_detections(
    detections: list[Detection],
    params: ScorerParams | None,
    word_matrix,
    min_confidence: float = 0.05,
    nms_iou: float = 0.5,
):
    """One pipeline pass: prefilter, score, fuse, suppress.

    With params None the relatedness is 1.0 everywhere, which reduces the
    ranking to confidence-only NMS bit for bit. Returns the kept
    ScoredDetection list in ranked order.
    """
    kept_input = prefilter(detections, min_confidence)
    if params is None:
        rel = [1.0] * len(kept_input)
    elif kept_input:
        V = np.stack([d.feature for d in kept_input])
        rel = forward(params, V, word_matrix)[1].relatedness
    else:
        rel = []
    return greedy_nms(fuse(kept_input, rel), nms_iou)


def _case_boxes(case, params, table, min_confidence, nms_iou):
    word_matrix = None
    if params is not None:
        word_matrix = lookup_words(case.query.tokens, table)
    ranked = rank_detections(
        case.detections, params, word_matrix, min_confidence, nms_iou)
    return [s.detection.box for s in ranked]


def compare(
    cases: list[QueryCase],
    params: ScorerParams | None,
    budgets: list[int],
    table=None,
    min_confidence: float = 0.05,
    nms_iou: float = 0.5,
    average: str = "micro",
    methods: tuple[str, ...] = METHODS,
    threads: int = 1,
) -> RecallReport:
    """Recall of both pipelines over a dataset, at every proposal budget.

    Args:
        cases: evaluation instances; every query needs a referent box.
        params: trained scorer weights; None runs the confidence-only
            pipeline for both method labels (useful as a self-check).
        budgets: proposal budgets N to report.
        table: EmbeddingTable for query word lookup (required when params
            is given).
        min_confidence: confidence prefilter threshold.
        nms_iou: suppression overlap threshold.
        average: contextual recall averaging, "micro" or "macro".
        methods: which of ("baseline", "query_aware") to run.
        threads: parallel workers over queries; results are aggregated in
            input order so the report is identical for any thread count.
    """
    if not cases:
        raise ValueError("compare needs at least one query case")
    for case in cases:
        if case.query.referent_box is None:
            raise ValueError(f"query {case.query.query_id!r} has no referent box")
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if params is not None and table is None:
        raise ValueError("an embedding table is required to run the scorer")
    for n in budgets:
        if n < 0:
            raise ValueError(f"budgets must be >= 0, got {n!r}")

    referents = [case.query.referent_box for case in cases]
    contextual = [[a.box for a in case.foreground.contextual] for case in cases]
    report = RecallReport(
        query_count=len(cases),
        contextual_pair_count=sum(len(c) for c in contextual),
    )
    for method in methods:
        p = params if method == QUERY_AWARE else None

        def run(case, p=p):
            return _case_boxes(case, p, table, min_confidence, nms_iou)

        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                boxes_per_query = list(pool.map(run, cases))
        else:
            boxes_per_query = [run(case) for case in cases]
        for n in budgets:
            report.rows.append(MethodRecall(
                method=method,
                budget=n,
                referent_recall=referent_recall(boxes_per_query, referents, n),
                contextual_recall=contextual_recall(boxes_per_query, contextual, n, average),
            ))
    return report


def write_report_csv(path, report: RecallReport, header_fields: dict | None = None,
                     split: str = "all") -> None:
    """Write a recall report as CSV.

    Leading '#' comment lines echo the run's hyperparameters
    (header_fields), so every report records the settings that produced it.
    Undefined contextual recall is written as an empty cell.
    """
    lines = []
    for key, value in (header_fields or {}).items():
        lines.append(f"# {key}={value}")
    lines.append(f"# queries={report.query_count}"
                 f" contextual_pairs={report.contextual_pair_count}")
    lines.append("method,split,N,referent_recall,contextual_recall")
    for row in report.rows:
        ctx = "" if row.contextual_recall is None else repr(row.contextual_recall)
        lines.append(f"{row.method},{split},{row.budget},{row.referent_recall!r},{ctx}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def plot_recall_curves(path, report: RecallReport) -> None:
    """Plot referent recall vs proposal budget for every method (PNG/SVG)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for method in dict.fromkeys(r.method for r in report.rows):
        rows = sorted((r for r in report.rows if r.method == method),
                      key=lambda r: r.budget)
        ax.plot([r.budget for r in rows],
                [100.0 * r.referent_recall for r in rows],
                marker="o", label=method)
    ax.set_xlabel("proposal budget N")
    ax.set_ylabel("referent recall (%)")
    ax.set_ylim(0, 105)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
