"""Deterministic training of the relatedness scorer.

Two interchangeable losses drive the scorer (pick one per run):

  * "binary_xe": cross entropy between each box's relatedness and its
    0/1 label,
  * "ranking": a margin hinge pushing boxes with higher foreground overlap
    levels above boxes with strictly lower levels.

Ranking pairs are re-sampled every epoch from the current predictions
(hardest negatives first), so pair selection adapts as the scorer learns.
All randomness flows from integer seed sequences; a fixed config and
dataset reproduce bit-identical parameters and loss curves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .io import ScorerParams
from .pseudo_gt import BoxTarget
from .scorer import NumericalError, backward, forward

# Relatedness is clamped to this open interval inside the loss only, so the
# loss stays finite even for saturated sigmoids.
XE_CLAMP = 1e-7

LOSS_KINDS = ("binary_xe", "ranking")


@dataclass
class TrainConfig:
    """Hyperparameters for the training loop."""

    epochs: int = 10
    lr: float = 5e-3
    batch_size: int = 8
    margin: float = 0.1
    top_h: int = 100
    seed: int = 0
    frozen_fields: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs!r}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr!r}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size!r}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin!r}")
        if self.top_h < 1:
            raise ValueError(f"top_h must be >= 1, got {self.top_h!r}")
        valid = set(ScorerParams.field_names())
        for name in self.frozen_fields:
            if name not in valid:
                raise ValueError(f"unknown frozen field {name!r}")


@dataclass(eq=False)
class TrainSample:
    """One (image, query) training instance."""

    V: np.ndarray  # (|B|, v) visual features
    W: np.ndarray  # (|Q|, q) word features
    targets: list[BoxTarget]

    def __post_init__(self) -> None:
        self.V = np.asarray(self.V, dtype=np.float64)
        self.W = np.asarray(self.W, dtype=np.float64)
        if self.V.ndim != 2 or self.V.shape[0] < 1:
            raise ValueError(f"V must be a non-empty (|B|, v) matrix, got {self.V.shape}")
        if self.W.ndim != 2 or self.W.shape[0] < 1:
            raise ValueError(f"W must be a non-empty (|Q|, q) matrix, got {self.W.shape}")
        if len(self.targets) != self.V.shape[0]:
            raise ValueError(
                f"{len(self.targets)} targets for {self.V.shape[0]} boxes")


@dataclass(frozen=True)
class RankPair:
    """Indices of a (lower-level, higher-level) box pair within one sample."""

    neg_index: int
    pos_index: int


def binary_xe(relatedness, labels) -> float:
    """Mean binary cross entropy over boxes.

    Scores are clamped to [1e-7, 1 - 1e-7] inside the loss only.
    """
    r = np.asarray(relatedness, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if r.shape != y.shape:
        raise ValueError("relatedness and labels must have the same length")
    if r.shape[0] == 0:
        raise ValueError("binary_xe needs at least one box")
    rc = np.clip(r, XE_CLAMP, 1.0 - XE_CLAMP)
    return float(-np.mean(y * np.log(rc) + (1.0 - y) * np.log1p(-rc)))


def binary_xe_grad(relatedness, labels) -> np.ndarray:
    """d binary_xe / d relatedness; zero where the clamp is active."""
    r = np.asarray(relatedness, dtype=np.float64).reshape(-1)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if r.shape != y.shape:
        raise ValueError("relatedness and labels must have the same length")
    if r.shape[0] == 0:
        raise ValueError("binary_xe_grad needs at least one box")
    rc = np.clip(r, XE_CLAMP, 1.0 - XE_CLAMP)
    grad = -(y / rc - (1.0 - y) / (1.0 - rc)) / r.shape[0]
    inside = (r >= XE_CLAMP) & (r <= 1.0 - XE_CLAMP)
    return np.where(inside, grad, 0.0)


def sample_pairs(targets: list[BoxTarget], relatedness, top_h: int, seed) -> list[RankPair]:
    """Ranking pairs for one sample under the current predictions.

    For every box with overlap level >= 1 (a positive), the boxes with a
    strictly smaller level are ranked by predicted relatedness descending
    (hardest first; ties broken by a seeded random permutation) and the top
    top_h become its negatives. Pairs are emitted positives in input order,
    negatives in rank order.
    """
    r = np.asarray(relatedness, dtype=np.float64).reshape(-1)
    if r.shape[0] != len(targets):
        raise ValueError("relatedness length must match targets")
    if top_h < 1:
        raise ValueError(f"top_h must be >= 1, got {top_h!r}")
    n = len(targets)
    if n == 0:
        return []
    levels = np.array([t.level for t in targets], dtype=np.int64)
    perm = np.random.default_rng(seed).permutation(n)
    order = np.lexsort((perm, -r))
    pairs = []
    for pos in range(n):
        if levels[pos] < 1:
            continue
        taken = 0
        for neg in order:
            if levels[neg] >= levels[pos]:
                continue
            pairs.append(RankPair(neg_index=int(neg), pos_index=pos))
            taken += 1
            if taken == top_h:
                break
    return pairs


def ranking_loss(relatedness, pairs: list[RankPair], margin: float = 0.1) -> float:
    """Mean hinge max(0, r_neg - r_pos + margin) over pairs; 0 for no pairs."""
    if not pairs:
        return 0.0
    r = np.asarray(relatedness, dtype=np.float64).reshape(-1)
    neg = np.array([p.neg_index for p in pairs])
    pos = np.array([p.pos_index for p in pairs])
    return float(np.mean(np.maximum(0.0, r[neg] - r[pos] + margin)))


def ranking_loss_grad(relatedness, pairs: list[RankPair], margin: float = 0.1) -> np.ndarray:
    """d ranking_loss / d relatedness (zero vector for no pairs)."""
    r = np.asarray(relatedness, dtype=np.float64).reshape(-1)
    grad = np.zeros_like(r)
    if not pairs:
        return grad
    scale = 1.0 / len(pairs)
    for p in pairs:
        if r[p.neg_index] - r[p.pos_index] + margin > 0.0:
            grad[p.neg_index] += scale
            grad[p.pos_index] -= scale
    return grad


@dataclass(eq=False)
class AdamState:
    """First/second moment accumulators, one pair per parameter field."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params: ScorerParams) -> "AdamState":
        zeros = {name: np.zeros_like(getattr(params, name)) for name in params.field_names()}
        return cls(m=zeros, v={k: a.copy() for k, a in zeros.items()}, t=0)


def adam_step(
    params: ScorerParams,
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    frozen_fields: tuple[str, ...] = (),
) -> None:
    """One in-place Adam update with bias correction; frozen fields are skipped."""
    state.t += 1
    frozen = set(frozen_fields)
    for name in params.field_names():
        if name in frozen:
            continue
        g = grads[name]
        state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        m_hat = state.m[name] / (1.0 - beta1 ** state.t)
        v_hat = state.v[name] / (1.0 - beta2 ** state.t)
        arr = getattr(params, name)
        arr -= lr * m_hat / (np.sqrt(v_hat) + eps)


@dataclass
class EpochStats:
    """Mean loss over one epoch (the selected loss kind)."""

    epoch: int
    loss: float


@dataclass(eq=False)
class TrainResult:
    """Trained parameters plus the per-epoch loss history."""

    params: ScorerParams
    history: list[EpochStats] = field(default_factory=list)


def _sample_loss_and_grads(params, sample, config, loss_kind, pair_seed):
    scores = forward(params, sample.V, sample.W)[1].relatedness
    if loss_kind == "binary_xe":
        labels = [t.label for t in sample.targets]
        loss = binary_xe(scores, labels)
        d_r = binary_xe_grad(scores, labels)
    else:
        pairs = sample_pairs(sample.targets, scores, config.top_h, pair_seed)
        loss = ranking_loss(scores, pairs, config.margin)
        d_r = ranking_loss_grad(scores, pairs, config.margin)
    grads = backward(params, sample.V, sample.W, d_r)
    return loss, grads


def train(
    params: ScorerParams,
    samples: list[TrainSample],
    config: TrainConfig,
    loss_kind: str = "binary_xe",
) -> TrainResult:
    """Run the full training loop; the input params are never mutated.

    Each epoch shuffles the samples and applies one Adam step per batch on
    the batch mean gradient. Under the "ranking" loss, pairs are re-sampled
    from the current predictions every epoch. Zero epochs returns an
    untouched copy of the inputs.

    Raises:
        NumericalError: when a batch produces a non-finite loss or gradient,
            naming the epoch and batch.
        ValueError: for an unknown loss kind, or an empty sample list with
            epochs > 0.
    """
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {loss_kind!r}")
    params = params.copy()
    if config.epochs == 0:
        return TrainResult(params=params, history=[])
    if not samples:
        raise ValueError("train needs at least one sample")
    state = AdamState.for_params(params)
    history = []
    for epoch in range(config.epochs):
        epoch_rng = np.random.default_rng([config.seed, epoch])
        order = epoch_rng.permutation(len(samples))
        loss_sum = 0.0
        for batch_no, start in enumerate(range(0, len(order), config.batch_size)):
            batch = order[start:start + config.batch_size]
            acc = {name: np.zeros_like(getattr(params, name))
                   for name in params.field_names()}
            batch_loss = 0.0
            for idx in batch:
                sample = samples[int(idx)]
                loss, grads = _sample_loss_and_grads(
                    params, sample, config, loss_kind, [config.seed, epoch, int(idx)])
                loss_sum += loss
                batch_loss += loss
                for name in acc:
                    acc[name] += grads[name]
            scale = 1.0 / len(batch)
            for name in acc:
                acc[name] *= scale
            bad = not np.isfinite(batch_loss) or any(
                not np.isfinite(acc[name]).all() for name in acc)
            if bad:
                raise NumericalError(
                    f"non-finite loss or gradient in epoch {epoch}, batch {batch_no}")
            adam_step(params, acc, state, config.lr,
                      frozen_fields=config.frozen_fields)
        history.append(EpochStats(epoch=epoch, loss=loss_sum / len(samples)))
    return TrainResult(params=params, history=history)


def write_loss_log(path, history: list[EpochStats]) -> None:
    """Write the per-epoch loss history as CSV (epoch, loss)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for row in history:
            writer.writerow([row.epoch, repr(row.loss)])
