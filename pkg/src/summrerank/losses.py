"""Training objective: quality-margin ranking loss + instance-weighted contrastive loss.

Each loss has a ``*_grad`` twin returning the value together with
analytic gradients with respect to its array inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .metrics import SentenceEmbedder, semantic_similarity


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0  # 0.1 is the documented setting for short extreme summaries
    phi: float | None = 0.9  # None disables instance weighting
    gamma1: float = 10.0
    gamma2: float = 0.1
    negatives: int = 4

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.phi is not None and not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("scale factors must be non-negative")
        if self.negatives < 0:
            raise ValueError("negatives must be non-negative")


@dataclass(frozen=True)
class RankedBatch:
    scores: np.ndarray
    qualities: np.ndarray

    def __init__(self, scores, qualities):
        s = np.asarray(scores, dtype=np.float64)
        q = np.asarray(qualities, dtype=np.float64)
        if s.shape != q.shape or s.ndim != 1:
            raise ValueError(f"scores {s.shape} and qualities {q.shape} must be equal-length vectors")
        if not np.all(np.isfinite(q)):
            raise ValueError("qualities must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "qualities", q)


def quality_order(qualities) -> np.ndarray:
    """Indices sorted by quality, best first; equal qualities keep input order."""
    return np.argsort(-np.asarray(qualities, dtype=np.float64), kind="stable")


def pair_margins(qualities, lam: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    """Required gaps ``lam * (M_i - M_j)`` for pairs i < j in quality order.

    Returns ``(order, margins)`` where ``margins[a, b]`` (a < b) is the margin
    between the a-th and b-th best candidates; the lower triangle is zero.
    """
    order = quality_order(qualities)
    q = np.asarray(qualities, dtype=np.float64)[order]
    margins = np.triu(lam * (q[:, None] - q[None, :]), k=1)
    return order, margins


def ranking_loss_grad(batch: RankedBatch, lam: float = 1.0) -> tuple[float, np.ndarray, np.ndarray]:
    """Sum over quality-ordered pairs of ``max(0, f_j - f_i + lam * (M_i - M_j))``.

    Returns ``(loss, d_loss/d_scores, d_loss/d_qualities)`` in input order.
    """
    order = quality_order(batch.qualities)
    total, g_s, g_q = _kernels.rank_hinge(
        np.ascontiguousarray(batch.scores[order]), np.ascontiguousarray(batch.qualities[order]), float(lam)
    )
    d_scores = np.empty_like(batch.scores)
    d_quals = np.empty_like(batch.qualities)
    d_scores[order] = g_s
    d_quals[order] = g_q
    return float(total), d_scores, d_quals


def ranking_loss(batch: RankedBatch, lam: float = 1.0) -> float:
    return ranking_loss_grad(batch, lam)[0]


def instance_weights(
    candidates: Sequence[str],
    reference: str,
    phi: float | None,
    embedder: SentenceEmbedder,
    similarities: Sequence[float] | None = None,
) -> np.ndarray:
    """1 where sentence similarity to the reference is at least ``phi``, else 0.

    ``phi=None`` disables weighting (all ones).  Precomputed ``similarities``
    skip the embedder.
    """
    if phi is None:
        return np.ones(len(candidates))
    if not 0.0 <= phi <= 1.0:
        raise ValueError("phi must lie in [0, 1]")
    if similarities is None:
        similarities = [semantic_similarity(c, reference, embedder) for c in candidates]
    return (np.asarray(similarities, dtype=np.float64) >= phi).astype(np.float64)


def contrastive_loss_grad(pos_scores, neg_scores, alphas) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean over all positives of ``alpha_i * -log(e^f_i / (e^f_i + sum_neg e^f_s))``.

    A zero weight removes the candidate's term (and its gradient) entirely;
    the average still divides by the full positive count.  Returns
    ``(loss, d/d pos_scores, d/d neg_scores)``.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)
    if a.shape != pos.shape:
        raise ValueError(f"alphas {a.shape} must match positives {pos.shape}")
    d_pos = np.zeros_like(pos)
    d_neg = np.zeros_like(neg)
    if pos.size == 0:
        return 0.0, d_pos, d_neg
    active = a != 0
    if not active.any():
        return 0.0, d_pos, d_neg
    p = pos[active]
    # logsumexp over {f_i} U negatives, per active positive
    peak = np.maximum(p, neg.max()) if neg.size else p
    e_pos = np.exp(p - peak)
    e_neg = np.exp(neg[None, :] - peak[:, None]) if neg.size else np.zeros((p.size, 0))
    z = e_pos + e_neg.sum(axis=1)
    terms = np.log(z) - (p - peak)
    w = a[active] / pos.size
    loss = float(w @ terms)
    d_pos[active] = w * (e_pos / z - 1.0)
    if neg.size:
        d_neg = (w[:, None] * e_neg / z[:, None]).sum(axis=0)
    return loss, d_pos, d_neg


def contrastive_loss(pos_scores, neg_scores, alphas) -> float:
    return contrastive_loss_grad(pos_scores, neg_scores, alphas)[0]


def combined_loss(rank_value: float, ctr_value: float, gamma1: float = 10.0, gamma2: float = 0.1) -> float:
    return gamma1 * rank_value + gamma2 * ctr_value


def combined_loss_grad(rank_value: float, ctr_value: float, gamma1: float = 10.0, gamma2: float = 0.1):
    """Value and partial derivatives ``(L, dL/d rank, dL/d ctr)``."""
    return combined_loss(rank_value, ctr_value, gamma1, gamma2), gamma1, gamma2


def pool_objective_grad(
    scores: np.ndarray,
    qualities: np.ndarray,
    neg_scores: np.ndarray,
    alphas: np.ndarray,
    config: LossConfig,
) -> tuple[dict[str, float], np.ndarray, np.ndarray]:
    """Combined objective for one pool, with gradients w.r.t. candidate and negative scores."""
    rank, g_rank, _ = ranking_loss_grad(RankedBatch(scores, qualities), config.lam)
    ctr, g_pos, g_neg = contrastive_loss_grad(scores, neg_scores, alphas)
    total = combined_loss(rank, ctr, config.gamma1, config.gamma2)
    d_scores = config.gamma1 * g_rank + config.gamma2 * g_pos
    d_neg = config.gamma2 * g_neg
    return {"rank_loss": rank, "ctr_loss": ctr, "combined": total}, d_scores, d_neg
