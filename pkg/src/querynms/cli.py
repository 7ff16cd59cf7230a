"""Command-line pipeline: gen-gt, train, filter, eval, bench.

Every subcommand is deterministic given its flags and seed; rerunning a
command reproduces its output files byte for byte. Exit codes:

  0  success
  1  bench exceeded its time budget
  2  configuration error (bad flag values, inconsistent options)
  3  data error (missing or malformed input files)
  4  numerical abort (non-finite loss or score)
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .evaluation import (
    METHODS,
    QUERY_AWARE,
    QueryCase,
    compare,
    plot_recall_curves,
    write_report_csv,
)
from .io import (
    DataError,
    load_annotations,
    load_detections,
    load_embeddings,
    load_noun_lexicon,
    load_params,
    load_queries,
    lookup_words,
    save_params,
)
from .pseudo_gt import (
    DEFAULT_SIMILARITY_THRESHOLD,
    ForegroundRecord,
    assign_targets,
    build_foreground,
    import_foreground,
    load_foreground,
    write_foreground,
)
from .scorer import NumericalError, forward, init_params
from .suppression import fuse, greedy_nms, prefilter, top_n
from .synthetic import random_instance
from .training import (
    LOSS_KINDS,
    TrainConfig,
    TrainSample,
    train,
    write_loss_log,
)

EXIT_OK = 0
EXIT_OVER_BUDGET = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

DEFAULT_MIN_CONFIDENCE = 0.05
DEFAULT_NMS_IOU = 0.5
GT_SOURCES = ("text_sim", "wspg")


class ConfigError(Exception):
    """Flag values that cannot be used together or are out of range."""


@dataclass
class RunConfig:
    """Validated hyperparameters shared by the pipeline subcommands."""

    min_confidence: float = DEFAULT_MIN_CONFIDENCE
    similarity_threshold: float = DEFAULT_SIMILARITY_THRESHOLD
    nms_iou: float = DEFAULT_NMS_IOU
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_confidence <= 1.0:
            raise ConfigError(
                f"--min-confidence must be in [0, 1], got {self.min_confidence}")
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ConfigError(
                f"--similarity-threshold must be in [-1, 1], got {self.similarity_threshold}")
        if not 0.0 < self.nms_iou < 1.0:
            raise ConfigError(f"--nms-iou must be in (0, 1), got {self.nms_iou}")


def _require_files(*paths) -> None:
    for p in paths:
        if p is not None and not Path(p).is_file():
            raise FileNotFoundError(f"input file not found: {p}")


def _group_detections(path) -> dict:
    return dict(load_detections(path))


def _build_foregrounds(queries, annotations, table, lexicon, source, similarity_threshold):
    """One ForegroundSet per query, in query-file order."""
    out = []
    for query in queries:
        anns = annotations.get(query.image_id, [])
        if source == "wspg":
            fg = import_foreground(query.referent_box, anns)
        else:
            fg = build_foreground(query.referent_box, query.tokens, anns,
                                  table, lexicon, similarity_threshold)
        out.append(fg)
    return out


def cmd_gen_gt(args) -> int:
    cfg = RunConfig(min_confidence=args.min_confidence,
                    similarity_threshold=args.similarity_threshold)
    if args.gt_source == "text_sim" and (args.embeddings is None or args.lexicon is None):
        raise ConfigError("--gt-source text_sim requires --embeddings and --lexicon")
    _require_files(args.detections, args.queries, args.annotations,
                   args.embeddings, args.lexicon)
    queries = load_queries(args.queries)
    annotations = load_annotations(args.annotations)
    table = load_embeddings(args.embeddings) if args.embeddings else None
    lexicon = load_noun_lexicon(args.lexicon) if args.lexicon else None
    detections = _group_detections(args.detections)

    foregrounds = _build_foregrounds(queries, annotations, table, lexicon,
                                     args.gt_source, cfg.similarity_threshold)
    records = []
    for query, fg in zip(queries, foregrounds):
        dets = prefilter(detections.get(query.image_id, []), cfg.min_confidence)
        records.append(ForegroundRecord(
            query_id=query.query_id,
            image_id=query.image_id,
            foreground=fg,
            targets=assign_targets(dets, fg),
        ))
    write_foreground(args.output, records, args.gt_source,
                     cfg.similarity_threshold, cfg.min_confidence)
    print(f"wrote {len(records)} foreground records to {args.output}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = _train_config(args)
    _require_files(args.detections, args.queries, args.embeddings, args.foreground)
    records, header = load_foreground(args.foreground)
    min_confidence = float(header["min_confidence"])
    queries = {q.query_id: q for q in load_queries(args.queries)}
    table = load_embeddings(args.embeddings)
    detections = _group_detections(args.detections)

    v_dim = None
    samples = []
    for rec in records:
        if rec.query_id not in queries:
            raise DataError(f"foreground record {rec.query_id!r} has no query record")
        dets = prefilter(detections.get(rec.image_id, []), min_confidence)
        if len(dets) != len(rec.targets):
            raise DataError(
                f"query {rec.query_id!r}: {len(rec.targets)} targets for "
                f"{len(dets)} detections after the confidence prefilter; "
                "regenerate the foreground file for this dataset")
        if not dets:
            continue
        V = np.stack([d.feature for d in dets])
        v_dim = V.shape[1]
        W = lookup_words(queries[rec.query_id].tokens, table)
        samples.append(TrainSample(V=V, W=W, targets=rec.targets))
    if not samples:
        raise DataError("no trainable samples (every query had zero detections)")

    params = init_params(v=v_dim, q=table.dimension, seed=config.seed)
    result = train(params, samples, config, loss_kind=args.loss)
    save_params(result.params, args.params_out)
    if args.loss_log:
        write_loss_log(args.loss_log, result.history)
    final = result.history[-1].loss if result.history else float("nan")
    print(f"trained {len(samples)} samples for {config.epochs} epochs "
          f"(loss={args.loss}); final epoch loss {final:.6f}; "
          f"params -> {args.params_out}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    try:
        return TrainConfig(
            epochs=args.epochs,
            lr=args.lr,
            batch_size=args.batch_size,
            margin=args.margin,
            top_h=args.top_h,
            seed=args.seed,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _filter_one(query, detections, params, table, cfg, scale, budget):
    dets = detections.get(query.image_id, [])
    kept_input = prefilter(dets, cfg.min_confidence)
    if params is None:
        rel = np.ones(len(kept_input))
    elif kept_input:
        V = np.stack([d.feature for d in kept_input])
        W = lookup_words(query.tokens, table)
        rel = forward(params, V, W)[1].relatedness
    else:
        rel = np.zeros(0)
    if scale is not None:
        rel = rel * scale
    kept = greedy_nms(fuse(kept_input, rel), cfg.nms_iou)
    if budget is not None:
        kept = top_n(kept, budget)
    lines = []
    for rank, s in enumerate(kept):
        lines.append(json.dumps({
            "query_id": query.query_id,
            "image_id": query.image_id,
            "rank": rank,
            "box": list(s.detection.box.as_tuple()),
            "label": s.detection.label,
            "confidence": s.detection.confidence,
            "relatedness": s.relatedness,
            "fused": s.fused,
        }))
    return lines


def cmd_filter(args) -> int:
    cfg = RunConfig(min_confidence=args.min_confidence, nms_iou=args.nms_iou)
    if args.baseline and args.params:
        raise ConfigError("--baseline and --params are mutually exclusive")
    if not args.baseline and not args.params:
        raise ConfigError("either --params or --baseline is required")
    if args.scale_relatedness is not None and args.scale_relatedness <= 0:
        raise ConfigError("--scale-relatedness must be > 0")
    if args.top_n is not None and args.top_n < 0:
        raise ConfigError("--top-n must be >= 0")
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    needs_words = not args.baseline
    if needs_words and args.embeddings is None:
        raise ConfigError("--params requires --embeddings for query word lookup")
    _require_files(args.detections, args.queries, args.params, args.embeddings)

    queries = load_queries(args.queries)
    detections = _group_detections(args.detections)
    table = load_embeddings(args.embeddings) if needs_words else None
    params = None
    if args.params:
        feature_dims = {d.feature.shape[0] for dets in detections.values() for d in dets}
        expect = (feature_dims.pop(), table.dimension) if feature_dims else None
        params = load_params(args.params, expect_dims=expect)

    def run(query):
        return _filter_one(query, detections, params, table, cfg,
                           args.scale_relatedness, args.top_n)

    if args.threads > 1:
        with ThreadPoolExecutor(max_workers=args.threads) as pool:
            per_query = list(pool.map(run, queries))
    else:
        per_query = [run(q) for q in queries]

    with open(args.output, "w", encoding="utf-8") as fh:
        for lines in per_query:
            for line in lines:
                fh.write(line + "\n")
    total = sum(len(lines) for lines in per_query)
    print(f"wrote {total} survivors over {len(queries)} queries to {args.output}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = RunConfig(min_confidence=args.min_confidence,
                    similarity_threshold=args.similarity_threshold,
                    nms_iou=args.nms_iou)
    budgets = _parse_budgets(args.budgets)
    if args.method in ("both", QUERY_AWARE) and not args.params:
        raise ConfigError(f"--method {args.method} requires --params")
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    needs_table = args.gt_source == "text_sim" or args.method != "baseline"
    if needs_table and args.embeddings is None:
        raise ConfigError("this evaluation requires --embeddings")
    if args.gt_source == "text_sim" and args.lexicon is None:
        raise ConfigError("--gt-source text_sim requires --lexicon")
    _require_files(args.detections, args.queries, args.annotations,
                   args.embeddings, args.lexicon, args.params)

    queries = load_queries(args.queries)
    annotations = load_annotations(args.annotations)
    table = load_embeddings(args.embeddings) if args.embeddings else None
    lexicon = load_noun_lexicon(args.lexicon) if args.lexicon else None
    detections = _group_detections(args.detections)
    params = load_params(args.params) if args.params else None

    foregrounds = _build_foregrounds(queries, annotations, table, lexicon,
                                     args.gt_source, cfg.similarity_threshold)
    cases = [
        QueryCase(query=q, detections=detections.get(q.image_id, []), foreground=fg)
        for q, fg in zip(queries, foregrounds)
    ]
    methods = METHODS if args.method == "both" else (args.method,)
    report = compare(
        cases, params, budgets,
        table=table,
        min_confidence=cfg.min_confidence,
        nms_iou=cfg.nms_iou,
        average=args.average,
        methods=methods,
        threads=args.threads,
    )
    header = {
        "min_confidence": cfg.min_confidence,
        "similarity_threshold": cfg.similarity_threshold,
        "nms_iou": cfg.nms_iou,
        "gt_source": args.gt_source,
        "budgets": " ".join(str(n) for n in budgets),
        "average": args.average,
        "method": args.method,
    }
    write_report_csv(args.output, report, header_fields=header)
    if args.plot:
        plot_recall_curves(args.plot, report)
    for row in report.rows:
        ctx = "undefined" if row.contextual_recall is None else f"{row.contextual_recall:.4f}"
        print(f"{row.method} N={row.budget}: referent {row.referent_recall:.4f}, "
              f"contextual {ctx}")
    return EXIT_OK


def _parse_budgets(raw: str) -> list[int]:
    try:
        budgets = [int(p) for p in raw.split(",") if p.strip()]
    except ValueError as exc:
        raise ConfigError(f"--budgets must be comma-separated integers, got {raw!r}") from exc
    if not budgets or any(n < 0 for n in budgets):
        raise ConfigError(f"--budgets must contain non-negative integers, got {raw!r}")
    return budgets


def cmd_bench(args) -> int:
    if args.boxes < 1 or args.words < 1 or args.repeats < 1:
        raise ConfigError("--boxes, --words, and --repeats must all be >= 1")
    if args.budget_ms <= 0:
        raise ConfigError("--budget-ms must be > 0")
    detections, V, W = random_instance(args.boxes, v=args.v, q=args.q,
                                       n_words=args.words, seed=args.seed)
    params = init_params(v=args.v, q=args.q, seed=args.seed)

    def one_pass():
        rel = forward(params, V, W)[1].relatedness
        return greedy_nms(fuse(detections, rel), DEFAULT_NMS_IOU)

    for _ in range(3):
        one_pass()
    times_ms = []
    for _ in range(args.repeats):
        t0 = time.perf_counter()
        one_pass()
        times_ms.append(1000.0 * (time.perf_counter() - t0))
    median = float(np.median(times_ms))
    status = "ok" if median <= args.budget_ms else "over_budget"
    print(f"boxes={args.boxes} words={args.words} repeats={args.repeats} "
          f"median_ms={median:.3f} budget_ms={args.budget_ms} status={status}")
    return EXIT_OK if status == "ok" else EXIT_OVER_BUDGET


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="querynms",
        description="Query-aware proposal filtering: score, fuse, suppress, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common_inputs(p, annotations=False, embeddings=False, lexicon=False,
                          embeddings_required=False):
        p.add_argument("--detections", required=True, help="detections.jsonl")
        p.add_argument("--queries", required=True, help="queries.jsonl")
        if annotations:
            p.add_argument("--annotations", required=True, help="annotations.jsonl")
        if embeddings:
            p.add_argument("--embeddings", required=embeddings_required,
                           help="GloVe-format embeddings.txt")
        if lexicon:
            p.add_argument("--lexicon", help="noun lexicon, one word per line")

    p = sub.add_parser("gen-gt", help="build foreground sets and per-box targets")
    add_common_inputs(p, annotations=True, embeddings=True, lexicon=True)
    p.add_argument("--gt-source", choices=GT_SOURCES, default="text_sim",
                   help="contextual boxes from text similarity or imported verbatim")
    p.add_argument("--similarity-threshold", type=float,
                   default=DEFAULT_SIMILARITY_THRESHOLD,
                   help="minimum noun-label cosine for a contextual match")
    p.add_argument("--min-confidence", type=float, default=DEFAULT_MIN_CONFIDENCE,
                   help="confidence prefilter applied before target assignment")
    p.add_argument("--output", "-o", required=True, help="foreground.jsonl to write")
    p.set_defaults(func=cmd_gen_gt)

    p = sub.add_parser("train", help="train the relatedness scorer")
    add_common_inputs(p, embeddings=True, embeddings_required=True)
    p.add_argument("--foreground", required=True, help="foreground.jsonl from gen-gt")
    p.add_argument("--loss", choices=LOSS_KINDS, default="binary_xe")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--margin", type=float, default=0.1,
                   help="ranking margin between overlap levels")
    p.add_argument("--top-h", type=int, default=100,
                   help="negatives sampled per positive (10 suits small datasets)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--params-out", required=True, help="params JSON to write")
    p.add_argument("--loss-log", help="optional per-epoch loss CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("filter", help="rank and suppress detections per query")
    add_common_inputs(p, embeddings=True)
    p.add_argument("--params", help="trained scorer params JSON")
    p.add_argument("--baseline", action="store_true",
                   help="confidence-only ranking (relatedness fixed at 1)")
    p.add_argument("--min-confidence", type=float, default=DEFAULT_MIN_CONFIDENCE)
    p.add_argument("--nms-iou", type=float, default=DEFAULT_NMS_IOU)
    p.add_argument("--top-n", type=int, help="keep only the best N survivors")
    p.add_argument("--scale-relatedness", type=float,
                   help="debug: multiply relatedness by this factor before fusion")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--output", "-o", required=True, help="filtered JSONL to write")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("eval", help="recall comparison of baseline vs query-aware")
    add_common_inputs(p, annotations=True, embeddings=True, lexicon=True)
    p.add_argument("--params", help="trained scorer params JSON")
    p.add_argument("--method", choices=("both",) + METHODS, default="both")
    p.add_argument("--budgets", default="10,100",
                   help="comma-separated proposal budgets N")
    p.add_argument("--gt-source", choices=GT_SOURCES, default="text_sim")
    p.add_argument("--similarity-threshold", type=float,
                   default=DEFAULT_SIMILARITY_THRESHOLD)
    p.add_argument("--min-confidence", type=float, default=DEFAULT_MIN_CONFIDENCE)
    p.add_argument("--nms-iou", type=float, default=DEFAULT_NMS_IOU)
    p.add_argument("--average", choices=("micro", "macro"), default="micro",
                   help="contextual recall averaging")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--plot", help="optional recall-vs-N plot file (png/svg)")
    p.add_argument("--output", "-o", required=True, help="report CSV to write")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="time scoring + suppression throughput")
    p.add_argument("--boxes", type=int, default=300)
    p.add_argument("--words", type=int, default=1)
    p.add_argument("--v", type=int, default=64, help="visual feature dimension")
    p.add_argument("--q", type=int, default=32, help="word feature dimension")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--budget-ms", type=float, default=50.0,
                   help="exit 1 if the median pass exceeds this")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def console_main() -> None:
    sys.exit(main())


if __name__ == "__main__":
    console_main()
