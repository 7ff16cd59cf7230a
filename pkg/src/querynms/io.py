"""File ingestion and persistence.

Reads detection dumps, text queries, region annotations, GloVe-format word
embeddings, and a noun lexicon; saves and restores scorer parameters. All
loaders are deterministic and order-preserving, and every record is validated
on the way in so downstream code can assume the invariants hold.

File formats (one JSON object per line unless noted):
  detections.jsonl   {"image_id", "box": [x1,y1,x2,y2], "label", "confidence",
                      "feature": [float, ...]}
  queries.jsonl      {"query_id", "image_id", "tokens": [str, ...],
                      "referent_box": [x1,y1,x2,y2] | null}
  annotations.jsonl  {"image_id", "box": [x1,y1,x2,y2], "label"}
  embeddings.txt     GloVe text format: word then q floats, space-separated
  noun_lexicon.txt   one lowercase noun per line
  params.json        self-describing scorer parameters with a (v, q) header
"""

from __future__ import annotations

import json
import string
from dataclasses import dataclass, fields

import numpy as np

from .geometry import Box


class DataError(ValueError):
    """Input data could not be used."""


class ParseError(DataError):
    """A file could not be parsed at all (bad JSON, bad float, truncation)."""


class SchemaError(DataError):
    """A file parsed but violated the declared schema or an invariant."""


@dataclass(eq=False)
class Detection:
    """One detector output: box, class label, confidence, visual feature."""

    box: Box
    label: str
    confidence: float
    feature: np.ndarray

    def __post_init__(self):
        if not (0.0 <= self.confidence <= 1.0):
            raise SchemaError(f"confidence must be in [0, 1], got {self.confidence}")
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.feature.ndim != 1:
            raise SchemaError("feature must be a flat vector")
        if not np.all(np.isfinite(self.feature)):
            raise SchemaError("feature entries must be finite")


@dataclass
class QueryRecord:
    """A text query, tokenized and normalized, optionally with its referent box."""

    query_id: str
    image_id: str
    tokens: list[str]
    referent_box: Box | None = None

    def __post_init__(self):
        if not self.tokens:
            raise SchemaError(f"query {self.query_id!r} has no tokens after normalization")


@dataclass
class Annotation:
    """An annotated region: category label plus box."""

    label: str
    box: Box


DEFAULT_MAX_TOKENS = 20
UNK = "unk"


def normalize_tokens(tokens, max_tokens: int = DEFAULT_MAX_TOKENS) -> list[str]:
    """Lowercase, strip surrounding punctuation, drop empties, truncate the tail.

    Accepts a token list or a whole phrase as one string.
    """
    if isinstance(tokens, str):
        tokens = [tokens]
    out = []
    for token in tokens:
        for piece in str(token).lower().split():
            piece = piece.strip(string.punctuation)
            if piece:
                out.append(piece)
    return out[:max_tokens]


class EmbeddingTable:
    """Word to vector map with a reserved fallback entry for unknown words.

    The fallback vector is stored under ``"unk"`` and defaults to zeros, so
    out-of-vocabulary words never resemble any real word.
    """

    def __init__(self, dimension: int, vectors: dict[str, np.ndarray] | None = None):
        if dimension < 1:
            raise ValueError("embedding dimension must be positive")
        self.dimension = int(dimension)
        self._vectors: dict[str, np.ndarray] = {}
        for word, vec in (vectors or {}).items():
            self.add(word, vec)
        if UNK not in self._vectors:
            self._vectors[UNK] = np.zeros(self.dimension, dtype=np.float64)

    def add(self, word: str, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.dimension,):
            raise SchemaError(
                f"embedding for {word!r} has shape {vec.shape}, expected ({self.dimension},)"
            )
        if not np.all(np.isfinite(vec)):
            raise SchemaError(f"embedding for {word!r} has non-finite entries")
        self._vectors[word] = vec

    def __contains__(self, word: str) -> bool:
        return word in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def vector(self, word: str) -> np.ndarray:
        """Vector for `word`, falling back to the reserved unknown-word entry."""
        return self._vectors.get(word, self._vectors[UNK])


def lookup_words(tokens, table: EmbeddingTable) -> np.ndarray:
    """Stack per-token vectors into a (num_tokens, q) matrix, unk where absent."""
    return np.stack([table.vector(t) for t in tokens]).astype(np.float64)


def iter_jsonl(path):
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc


def _box_from_json(raw, path, lineno) -> Box:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise SchemaError(f"{path}:{lineno}: box must be [x1, y1, x2, y2]")
    try:
        return Box(*(float(c) for c in raw))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{path}:{lineno}: {exc}") from exc


def load_detections(path) -> list[tuple[str, list[Detection]]]:
    """Read detections.jsonl, grouped per image in first-appearance order.

    The feature dimension of the first record fixes the dataset's visual
    feature size; any later mismatch is a schema error naming the line.
    """
    groups: dict[str, list[Detection]] = {}
    feature_dim = None
    for lineno, rec in iter_jsonl(path):
        try:
            image_id = str(rec["image_id"])
            box = _box_from_json(rec["box"], path, lineno)
            det = Detection(
                box=box,
                label=str(rec["label"]),
                confidence=float(rec["confidence"]),
                feature=np.asarray(rec["feature"], dtype=np.float64),
            )
        except KeyError as exc:
            raise SchemaError(f"{path}:{lineno}: missing field {exc}") from exc
        except SchemaError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
        except (TypeError, ValueError) as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        if feature_dim is None:
            feature_dim = det.feature.shape[0]
        elif det.feature.shape[0] != feature_dim:
            raise SchemaError(
                f"{path}:{lineno}: feature dimension {det.feature.shape[0]} "
                f"does not match dataset dimension {feature_dim}"
            )
        groups.setdefault(image_id, []).append(det)
    return list(groups.items())


def load_queries(path, max_tokens: int = DEFAULT_MAX_TOKENS) -> list[QueryRecord]:
    """Read queries.jsonl; tokens are normalized and capped at `max_tokens`."""
    out = []
    for lineno, rec in iter_jsonl(path):
        try:
            referent = rec.get("referent_box")
            out.append(
                QueryRecord(
                    query_id=str(rec["query_id"]),
                    image_id=str(rec["image_id"]),
                    tokens=normalize_tokens(rec["tokens"], max_tokens),
                    referent_box=None if referent is None else _box_from_json(referent, path, lineno),
                )
            )
        except KeyError as exc:
            raise SchemaError(f"{path}:{lineno}: missing field {exc}") from exc
        except SchemaError as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    return out


def load_annotations(path) -> dict[str, list[Annotation]]:
    """Read annotations.jsonl into an image_id -> [Annotation] map."""
    out: dict[str, list[Annotation]] = {}
    for lineno, rec in iter_jsonl(path):
        try:
            image_id = str(rec["image_id"])
            ann = Annotation(label=str(rec["label"]), box=_box_from_json(rec["box"], path, lineno))
        except KeyError as exc:
            raise SchemaError(f"{path}:{lineno}: missing field {exc}") from exc
        out.setdefault(image_id, []).append(ann)
    return out


def load_embeddings(path) -> EmbeddingTable:
    """Read a GloVe-format text file: one word plus q floats per line."""
    table = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                if not line.strip():
                    continue
                raise ParseError(f"{path}:{lineno}: expected a word and its vector")
            word = parts[0]
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"{path}:{lineno}: bad float ({exc})") from exc
            if table is None:
                table = EmbeddingTable(dimension=vec.shape[0])
            try:
                table.add(word, vec)
            except SchemaError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from exc
    if table is None:
        raise SchemaError(f"{path}: embedding file is empty")
    return table


def load_noun_lexicon(path) -> set[str]:
    """Read one lowercase noun per line; blank lines ignored."""
    with open(path, "r", encoding="utf-8") as fh:
        return {line.strip().lower() for line in fh if line.strip()}


@dataclass(eq=False)
class ScorerParams:
    """All learnable weights of the relatedness computation graph.

    Layer roles:
      attn_w1/b1, attn_w2/b2   two-layer MLP projecting visual features for
                               the word-attention branch (v -> q -> q)
      sim_w/sim_b              FC scoring a [projected-visual; word] pair (2q -> 1)
      join_w1/b1, join_w2/b2   two-layer MLP projecting visual features for
                               the joint branch (v -> q -> q)
      out_w/out_b              FC mapping the joint feature to the score logit
    """

    attn_w1: np.ndarray
    attn_b1: np.ndarray
    attn_w2: np.ndarray
    attn_b2: np.ndarray
    sim_w: np.ndarray
    sim_b: np.ndarray
    join_w1: np.ndarray
    join_b1: np.ndarray
    join_w2: np.ndarray
    join_b2: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray

    def __post_init__(self):
        for name in self.field_names():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            setattr(self, name, arr)
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"parameter {name} has non-finite entries")
        v, q = self.dims
        expected = _param_shapes(v, q)
        for name in self.field_names():
            got = getattr(self, name).shape
            if got != expected[name]:
                raise SchemaError(
                    f"parameter {name} has shape {got}, expected {expected[name]} for (v={v}, q={q})"
                )

    @staticmethod
    def field_names() -> list[str]:
        return [f.name for f in fields(ScorerParams)]

    @property
    def dims(self) -> tuple[int, int]:
        """(visual dim v, query dim q) implied by the array shapes."""
        q, v = np.asarray(self.attn_w1).shape
        return v, q

    def to_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.field_names()}

    def copy(self) -> "ScorerParams":
        return ScorerParams(**{k: v.copy() for k, v in self.to_dict().items()})


def _param_shapes(v: int, q: int) -> dict[str, tuple[int, ...]]:
    return {
        "attn_w1": (q, v),
        "attn_b1": (q,),
        "attn_w2": (q, q),
        "attn_b2": (q,),
        "sim_w": (2 * q,),
        "sim_b": (),
        "join_w1": (q, v),
        "join_b1": (q,),
        "join_w2": (q, q),
        "join_b2": (q,),
        "out_w": (q,),
        "out_b": (),
    }


PARAMS_FORMAT = "querynms-scorer-params-v1"


def save_params(params: ScorerParams, path) -> None:
    """Write parameters as self-describing JSON; round-trips bit-exactly."""
    v, q = params.dims
    payload = {
        "format": PARAMS_FORMAT,
        "v": v,
        "q": q,
        "arrays": {name: arr.tolist() for name, arr in params.to_dict().items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, allow_nan=False)
        fh.write("\n")


def _reject_constant(token):
    raise ParseError(f"non-finite constant {token!r} in params file")


def load_params(path, expect_dims: tuple[int, int] | None = None) -> ScorerParams:
    """Read parameters saved by `save_params`, validating shapes against the header.

    `expect_dims` optionally asserts the (v, q) the caller's dataset requires.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid or truncated params file ({exc.msg})") from exc
    if not isinstance(payload, dict) or payload.get("format") != PARAMS_FORMAT:
        raise SchemaError(f"{path}: not a {PARAMS_FORMAT} file")
    try:
        v, q = int(payload["v"]), int(payload["q"])
        arrays = payload["arrays"]
        kwargs = {name: np.array(arrays[name], dtype=np.float64) for name in ScorerParams.field_names()}
    except KeyError as exc:
        raise SchemaError(f"{path}: missing field {exc}") from exc
    expected = _param_shapes(v, q)
    for name, arr in kwargs.items():
        if arr.shape != expected[name]:
            raise SchemaError(
                f"{path}: array {name} has shape {arr.shape}, "
                f"header (v={v}, q={q}) requires {expected[name]}"
            )
    if expect_dims is not None and (v, q) != tuple(expect_dims):
        raise SchemaError(
            f"{path}: params are for (v={v}, q={q}), dataset requires "
            f"(v={expect_dims[0]}, q={expect_dims[1]})"
        )
    return ScorerParams(**kwargs)
