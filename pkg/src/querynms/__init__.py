"""Query-aware proposal filtering.

Ranks detector proposals for a text query by fusing a learned
(proposal, query) relatedness score with detector confidence, runs greedy
NMS on the fused score so query-relevant boxes survive suppression, and
measures the effect as recall of the query's referent and contextual
objects under a proposal budget.
"""

from .geometry import Box, area, boxes_to_array, iou, pairwise_iou
from .io import (
    Annotation,
    DataError,
    Detection,
    EmbeddingTable,
    ParseError,
    QueryRecord,
    SchemaError,
    ScorerParams,
    load_annotations,
    load_detections,
    load_embeddings,
    load_noun_lexicon,
    load_params,
    load_queries,
    lookup_words,
    normalize_tokens,
    save_params,
)
from .scorer import (
    AttentionState,
    NumericalError,
    ScoreOutput,
    backward,
    forward,
    init_params,
)
from .suppression import ScoredDetection, fuse, greedy_nms, prefilter, top_n
from .pseudo_gt import (
    BoxTarget,
    ForegroundRecord,
    ForegroundSet,
    assign_targets,
    build_foreground,
    cosine,
    extract_nouns,
    import_foreground,
    label_embedding,
    load_foreground,
    match_contextual,
    overlap_level,
    write_foreground,
)
from .training import (
    AdamState,
    EpochStats,
    RankPair,
    TrainConfig,
    TrainResult,
    TrainSample,
    adam_step,
    binary_xe,
    binary_xe_grad,
    ranking_loss,
    ranking_loss_grad,
    sample_pairs,
    train,
    write_loss_log,
)
from .evaluation import (
    MethodRecall,
    QueryCase,
    RecallReport,
    compare,
    contextual_recall,
    plot_recall_curves,
    pr_at_x,
    rank_detections,
    referent_recall,
    top1_hit,
    write_report_csv,
)
from .synthetic import adversarial_world, random_instance, separable_dataset, shifted_box

__version__ = "0.1.0"

__all__ = [
    "Box", "area", "iou", "pairwise_iou", "boxes_to_array",
    "Detection", "QueryRecord", "Annotation", "EmbeddingTable", "ScorerParams",
    "DataError", "ParseError", "SchemaError", "NumericalError",
    "load_detections", "load_queries", "load_annotations", "load_embeddings",
    "load_noun_lexicon", "lookup_words", "normalize_tokens",
    "save_params", "load_params",
    "AttentionState", "ScoreOutput", "init_params", "forward", "backward",
    "ScoredDetection", "prefilter", "fuse", "greedy_nms", "top_n",
    "ForegroundSet", "ForegroundRecord", "BoxTarget",
    "extract_nouns", "cosine", "label_embedding", "match_contextual",
    "build_foreground", "import_foreground", "assign_targets", "overlap_level",
    "write_foreground", "load_foreground",
    "TrainConfig", "TrainSample", "TrainResult", "EpochStats", "RankPair",
    "AdamState", "adam_step", "binary_xe", "binary_xe_grad",
    "ranking_loss", "ranking_loss_grad", "sample_pairs", "train", "write_loss_log",
    "QueryCase", "RecallReport", "MethodRecall",
    "referent_recall", "contextual_recall", "top1_hit", "pr_at_x",
    "rank_detections", "compare", "write_report_csv", "plot_recall_curves",
    "separable_dataset", "adversarial_world", "random_instance", "shifted_box",
]
