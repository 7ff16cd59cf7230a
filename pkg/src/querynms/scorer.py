"""Relatedness scoring between detected boxes and a text query.

Given per-box visual features V (|B| x v) and per-word query features
W (|Q| x q), each box gets a query summary via soft attention over the words,
and a relatedness probability from the L2-normalized elementwise product of
a second visual projection with that summary:

    va_i   = mlp_attn(v_i)                      (v -> q -> q, ReLU between)
    a_ij   = fc_sim([va_i ; w_j])
    alpha_i = softmax_j(a_i)
    pooled_i = sum_j alpha_ij * w_j
    vb_i   = mlp_join(v_i)                      (v -> q -> q, ReLU between)
    m_i    = l2norm(vb_i * pooled_i)
    r_i    = sigmoid(fc_out(m_i))

Both passes are plain numpy and fully deterministic; `backward` returns the
exact analytic gradient of every parameter for an upstream dL/dr vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .io import ScorerParams, _param_shapes

# Keeps the L2 normalization finite when the feature product is all zeros.
NORM_EPS = 1e-12


class NumericalError(ArithmeticError):
    """A forward pass or training step produced non-finite values."""


@dataclass(eq=False)
class AttentionState:
    """Per-box word attention: raw logits, normalized weights, pooled query."""

    logits: np.ndarray   # (|B|, |Q|)
    weights: np.ndarray  # (|B|, |Q|), rows sum to 1
    pooled: np.ndarray   # (|B|, q)


@dataclass(eq=False)
class ScoreOutput:
    """Per-box scoring results."""

    joint: np.ndarray        # (|B|, q), unit L2 norm up to the epsilon guard
    logits: np.ndarray       # (|B|,)
    relatedness: np.ndarray  # (|B|,), sigmoid of logits


def init_params(v: int = 64, q: int = 32, seed: int = 0) -> ScorerParams:
    """Seeded uniform initialization in [-1/sqrt(fan_in), +1/sqrt(fan_in)].

    The draw order is fixed (field declaration order) so a given seed always
    produces bit-identical parameters.
    """
    rng = np.random.default_rng(seed)
    fan_in = {
        "attn_w1": v, "attn_b1": v,
        "attn_w2": q, "attn_b2": q,
        "sim_w": 2 * q, "sim_b": 2 * q,
        "join_w1": v, "join_b1": v,
        "join_w2": q, "join_b2": q,
        "out_w": q, "out_b": q,
    }
    arrays = {}
    for name, shape in _param_shapes(v, q).items():
        bound = 1.0 / np.sqrt(fan_in[name])
        arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ScorerParams(**arrays)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    # max-subtraction for stability
    shifted = x - x.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def _check_shapes(params: ScorerParams, V: np.ndarray, W: np.ndarray) -> tuple[int, int]:
    v, q = params.dims
    if V.ndim != 2 or V.shape[1] != v:
        raise ValueError(f"V must be (|B|, {v}), got {V.shape}")
    if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] != q:
        raise ValueError(f"W must be (|Q| >= 1, {q}), got {W.shape}")
    return v, q


def _run(params: ScorerParams, V: np.ndarray, W: np.ndarray) -> dict:
    """Forward pass keeping every intermediate needed by the backward pass."""
    q = params.dims[1]
    pre_a = V @ params.attn_w1.T + params.attn_b1
    h_a = np.maximum(pre_a, 0.0)
    va = h_a @ params.attn_w2.T + params.attn_b2
    u, s = params.sim_w[:q], params.sim_w[q:]
    logits = (va @ u)[:, None] + (W @ s)[None, :] + float(params.sim_b)
    weights = _softmax_rows(logits)
    pooled = weights @ W
    pre_b = V @ params.join_w1.T + params.join_b1
    h_b = np.maximum(pre_b, 0.0)
    vb = h_b @ params.join_w2.T + params.join_b2
    prod = vb * pooled
    norm = np.sqrt(np.sum(prod * prod, axis=1) + NORM_EPS)
    joint = prod / norm[:, None]
    score_logits = joint @ params.out_w + float(params.out_b)
    relatedness = _sigmoid(score_logits)
    return {
        "pre_a": pre_a, "h_a": h_a, "va": va, "logits": logits, "weights": weights,
        "pooled": pooled, "pre_b": pre_b, "h_b": h_b, "vb": vb, "prod": prod,
        "norm": norm, "joint": joint, "score_logits": score_logits,
        "relatedness": relatedness,
    }


def forward(params: ScorerParams, V, W) -> tuple[AttentionState, ScoreOutput]:
    """Score every box in V against the query W.

    Args:
        params: scorer weights.
        V: (|B|, v) visual features; |B| may be zero.
        W: (|Q|, q) word features, |Q| >= 1.

    Returns:
        (AttentionState, ScoreOutput) with per-box rows in input order.

    Raises:
        NumericalError: if any per-box output is non-finite, naming the first
            offending box index.
    """
    V = np.asarray(V, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    _check_shapes(params, V, W)
    state = _run(params, V, W)
    per_box_ok = (
        np.isfinite(state["logits"]).all(axis=1)
        & np.isfinite(state["joint"]).all(axis=1)
        & np.isfinite(state["relatedness"])
    )
    if not per_box_ok.all():
        bad = int(np.argmin(per_box_ok))
        raise NumericalError(f"non-finite scorer output for box {bad}")
    attn = AttentionState(logits=state["logits"], weights=state["weights"], pooled=state["pooled"])
    out = ScoreOutput(joint=state["joint"], logits=state["score_logits"],
                      relatedness=state["relatedness"])
    return attn, out


def backward(params: ScorerParams, V, W, d_relatedness, *, return_input_grad: bool = False):
    """Exact analytic gradients of the scoring graph.

    Args:
        params: scorer weights.
        V, W: the same inputs given to `forward`.
        d_relatedness: (|B|,) upstream gradient dL/dr.
        return_input_grad: also return dL/dV.

    Returns:
        A dict mapping every parameter field name to its gradient array
        (same shapes as the parameters), or (grads, dV) when
        `return_input_grad` is set.
    """
    V = np.asarray(V, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    q = _check_shapes(params, V, W)[1]
    g = np.asarray(d_relatedness, dtype=np.float64).reshape(-1)
    if g.shape[0] != V.shape[0]:
        raise ValueError("d_relatedness length must match the number of boxes")
    st = _run(params, V, W)
    u, s = params.sim_w[:q], params.sim_w[q:]

    r = st["relatedness"]
    d_score_logits = g * r * (1.0 - r)
    d_out_w = st["joint"].T @ d_score_logits
    d_out_b = np.asarray(d_score_logits.sum())
    d_joint = d_score_logits[:, None] * params.out_w[None, :]

    # l2norm backward: joint = prod / norm with norm = sqrt(|prod|^2 + eps)
    dot = np.sum(st["prod"] * d_joint, axis=1)
    d_prod = d_joint / st["norm"][:, None] - st["prod"] * (dot / st["norm"] ** 3)[:, None]

    d_vb = d_prod * st["pooled"]
    d_pooled = d_prod * st["vb"]

    d_weights = d_pooled @ W.T
    # softmax backward, row-wise
    inner = np.sum(st["weights"] * d_weights, axis=1, keepdims=True)
    d_logits = st["weights"] * (d_weights - inner)

    row_sums = d_logits.sum(axis=1)
    col_sums = d_logits.sum(axis=0)
    d_va = row_sums[:, None] * u[None, :]
    d_sim_w = np.concatenate([st["va"].T @ row_sums, W.T @ col_sums])
    d_sim_b = np.asarray(d_logits.sum())

    d_attn_w2 = d_va.T @ st["h_a"]
    d_attn_b2 = d_va.sum(axis=0)
    d_pre_a = (d_va @ params.attn_w2) * (st["pre_a"] > 0.0)
    d_attn_w1 = d_pre_a.T @ V
    d_attn_b1 = d_pre_a.sum(axis=0)

    d_join_w2 = d_vb.T @ st["h_b"]
    d_join_b2 = d_vb.sum(axis=0)
    d_pre_b = (d_vb @ params.join_w2) * (st["pre_b"] > 0.0)
    d_join_w1 = d_pre_b.T @ V
    d_join_b1 = d_pre_b.sum(axis=0)

    grads = {
        "attn_w1": d_attn_w1, "attn_b1": d_attn_b1,
        "attn_w2": d_attn_w2, "attn_b2": d_attn_b2,
        "sim_w": d_sim_w, "sim_b": d_sim_b,
        "join_w1": d_join_w1, "join_b1": d_join_b1,
        "join_w2": d_join_w2, "join_b2": d_join_b2,
        "out_w": d_out_w, "out_b": d_out_b,
    }
    if return_input_grad:
        d_v = d_pre_a @ params.attn_w1 + d_pre_b @ params.join_w1
        return grads, d_v
    return grads
