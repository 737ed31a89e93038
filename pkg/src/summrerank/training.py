"""Seeded optimization loop for the mean-pool re-ranker."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .encoder import GUARD_EPS, MeanPoolEncoder, backend_from_state, score_candidates, select_best, weighted_totals
from .losses import LossConfig, instance_weights, pool_objective_grad
from .metrics import HashedBagEmbedder, get_quality_metric, semantic_similarity
from .optim import make_optimizer
from .pool import CandidatePool, pool_qualities, pool_semantics, sample_negatives

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "summrerank-checkpoint"


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 4
    learning_rate: float = 2e-3
    optimizer: str = "adafactor"
    optimizer_args: dict = field(default_factory=dict)
    validate_every: int = 1000
    seed: int = 0
    dim: int = 32
    normalize: bool = False
    quality_metric: str = "rouge_avg"
    selection_metric: str = "semantic"
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.learning_rate <= 0 or self.validate_every < 1:
            raise ValueError("batch_size, learning_rate and validate_every must be positive")
        if self.selection_metric not in ("semantic", "lexical"):
            raise ValueError("selection_metric must be 'semantic' or 'lexical'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        loss = data.pop("loss", {}) or {}
        return cls(loss=LossConfig(**loss), **data)


@dataclass
class Checkpoint:
    model: Any
    config: TrainConfig
    step: int = 0
    history: list[dict] = field(default_factory=list)
    metrics: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": 1,
            "encoder": self.model.to_state(),
            "config": self.config.to_dict(),
            "step": self.step,
            "history": self.history,
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Checkpoint":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a checkpoint file")
        return cls(
            backend_from_state(data["encoder"]),
            TrainConfig.from_dict(data.get("config", {})),
            int(data.get("step", 0)),
            list(data.get("history", [])),
            dict(data.get("metrics", {})),
        )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    # repr-exact float serialization makes reloads bit-identical
    Path(path).write_text(json.dumps(ckpt.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> Checkpoint:
    return Checkpoint.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# corpus preparation
# ---------------------------------------------------------------------------


@dataclass
class PreparedPool:
    pool: CandidatePool
    qualities: np.ndarray
    similarities: np.ndarray  # sentence similarity of each candidate to the reference


def prepare_corpus(
    corpus: Sequence[CandidatePool],
    quality_metric: str = "rouge_avg",
    embedder=None,
    verify_cache: bool = True,
) -> list[PreparedPool]:
    """Qualities and reference similarities, computed once per corpus.

    Cached qualities are used verbatim; with ``verify_cache`` a mismatch with
    recomputation is logged.
    """
    metric = get_quality_metric(quality_metric)
    embedder = embedder or HashedBagEmbedder()
    out = []
    for pool in corpus:
        quals = pool_qualities(pool, metric)
        if verify_cache and pool.cached_quality is not None:
            fresh = np.array([metric(c, pool.reference) for c in pool.candidates])
            if not np.allclose(fresh, quals, atol=1e-6):
                logger.warning("pool %s: cached quality differs from recomputed %s", pool.id, quality_metric)
        sims = np.array([_safe_similarity(c, pool.reference, embedder) for c in pool.candidates])
        out.append(PreparedPool(pool, quals, sims))
    return out


def _safe_similarity(cand: str, ref: str, embedder) -> float:
    # an empty candidate has no embedding; it can never clear the threshold
    if not cand.strip():
        return -1.0
    return semantic_similarity(cand, ref, embedder)


def init_model(corpus: Sequence[CandidatePool], config: TrainConfig) -> MeanPoolEncoder:
    texts = []
    for pool in corpus:
        texts.extend(pool.document.sentences)
        texts.extend(pool.candidates)
    return MeanPoolEncoder.initialize(texts, dim=config.dim, seed=config.seed, normalize=config.normalize)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------


def pool_step(
    model: MeanPoolEncoder,
    prepared: PreparedPool,
    negatives: Sequence[str],
    config: LossConfig,
    grad_table: np.ndarray | None = None,
    scale: float = 1.0,
) -> dict[str, float]:
    """Objective of one pool; adds ``scale`` * gradient into ``grad_table`` if given."""
    pool = prepared.pool
    doc_seg = model.segments(pool.document.sentences)
    sum_seg = model.segments(list(pool.candidates) + list(negatives))
    doc = model.pool(doc_seg)
    summ = model.pool(sum_seg)
    sent_scores = summ @ doc.T
    totals, d_tot = weighted_totals(sent_scores, GUARD_EPS)
    m = pool.m
    alphas = instance_weights(pool.candidates, pool.reference, config.phi, None, prepared.similarities)
    parts, g_pos, g_neg = pool_objective_grad(totals[:m], prepared.qualities, totals[m:], alphas, config)
    if grad_table is not None:
        g_f = np.concatenate([g_pos, g_neg]) * scale
        g_scores = g_f[:, None] * d_tot
        model.pool_backward(sum_seg, summ, g_scores @ doc, grad_table)
        model.pool_backward(doc_seg, doc, g_scores.T @ summ, grad_table)
    return parts


def _negatives_for(corpus: Sequence[CandidatePool], anchor: str, count: int, rng) -> tuple[str, ...]:
    if count == 0:
        return ()
    return sample_negatives(corpus, anchor, count, rng).summaries


def corpus_objective(model, prepared: Sequence[PreparedPool], config: TrainConfig) -> dict[str, float]:
    """Mean objective over a corpus with negatives drawn from a fixed stream."""
    pools = [p.pool for p in prepared]
    rng = np.random.default_rng([config.seed, 0xE7A1])
    acc = {"rank_loss": 0.0, "ctr_loss": 0.0, "combined": 0.0}
    for pp in prepared:
        negs = _negatives_for(pools, pp.pool.id, config.loss.negatives, rng)
        parts = pool_step(model, pp, negs, config.loss)
        for k in acc:
            acc[k] += parts[k]
    n = max(1, len(prepared))
    return {k: v / n for k, v in acc.items()}


# ---------------------------------------------------------------------------
# validation and training
# ---------------------------------------------------------------------------


def validate(model_or_ckpt, pools: Sequence[CandidatePool], quality_metric: str = "rouge_avg", token_embedder=None) -> dict[str, float]:
    """Mean lexical and semantic quality of the selected candidate per pool."""
    if not pools:
        raise ValueError("validation set is empty")
    model = model_or_ckpt.model if isinstance(model_or_ckpt, Checkpoint) else model_or_ckpt
    metric = get_quality_metric(quality_metric)
    lex, sem = [], []
    for pool in pools:
        best = select_best(score_candidates(model, pool))
        lex.append(pool_qualities(pool, metric)[best])
        sem.append(pool_semantics(pool, token_embedder)[best])
    return {"lexical": float(np.mean(lex)), "semantic": float(np.mean(sem)), "n_pools": len(pools)}


def _check_finite(parts: dict, batch: Sequence[PreparedPool], step: int, grad: np.ndarray) -> None:
    if all(math.isfinite(v) for v in parts.values()) and np.all(np.isfinite(grad)):
        return
    diag = {
        "step": step,
        "losses": parts,
        "pools": [
            {"id": pp.pool.id, "candidates": list(pp.pool.candidates), "qualities": pp.qualities.tolist()}
            for pp in batch
        ],
    }
    raise NonFiniteLossError(f"non-finite loss at step {step}: {parts}", diag)


def train(
    corpus: Sequence[CandidatePool],
    config: TrainConfig = TrainConfig(),
    validation: Sequence[CandidatePool] | None = None,
    log: Callable[[dict], None] | None = None,
) -> Checkpoint:
    """Train a mean-pool re-ranker; returns the best checkpoint by validation.

    Without ``validation`` the final parameters are returned.  ``log`` receives
    one record per optimizer step.
    """
    pools = list(corpus)
    prepared = prepare_corpus(pools, config.quality_metric)
    model = init_model(pools, config)
    optimizer = make_optimizer(config.optimizer, config.learning_rate, **config.optimizer_args)
    ckpt = Checkpoint(model, config)
    ckpt.metrics["initial_objective"] = corpus_objective(model, prepared, config)["combined"]
    if config.epochs == 0 or not pools:
        ckpt.metrics["final_objective"] = ckpt.metrics["initial_objective"]
        return ckpt

    best_state: tuple[float, np.ndarray, int] | None = None
    step = 0

    def run_validation() -> float | None:
        nonlocal best_state
        if not validation:
            return None
        stats = validate(model, validation, config.quality_metric)
        value = stats[config.selection_metric]
        ckpt.history.append({"step": step, **stats})
        if best_state is None or value > best_state[0]:
            best_state = (value, model.table.copy(), step)
        return value

    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(len(prepared))
        for start in range(0, len(order), config.batch_size):
            batch = [prepared[i] for i in order[start : start + config.batch_size]]
            rng = np.random.default_rng([config.seed, epoch, start])
            grad = np.zeros_like(model.table)
            acc = {"rank_loss": 0.0, "ctr_loss": 0.0, "combined": 0.0}
            scale = 1.0 / len(batch)
            for pp in batch:
                negs = _negatives_for(pools, pp.pool.id, config.loss.negatives, rng)
                parts = pool_step(model, pp, negs, config.loss, grad, scale)
                for k in acc:
                    acc[k] += parts[k] * scale
            _check_finite(acc, batch, step, grad)
            optimizer.step(model.parameters, {"embeddings": grad})
            step += 1
            val = run_validation() if step % config.validate_every == 0 else None
            if log is not None:
                log({"step": step, **acc, "val_metric": val})
    if step % config.validate_every != 0:
        val = run_validation()
        if log is not None and val is not None:
            log({"step": step, "rank_loss": None, "ctr_loss": None, "combined": None, "val_metric": val})

    ckpt.step = step
    if best_state is not None:
        model.table[...] = best_state[1]
        ckpt.metrics["best_step"] = best_state[2]
        ckpt.metrics["best_val"] = best_state[0]
    ckpt.metrics["final_objective"] = corpus_objective(model, prepared, config)["combined"]
    return ckpt


def untrained_checkpoint(corpus: Sequence[CandidatePool], config: TrainConfig = TrainConfig()) -> Checkpoint:
    return train(corpus, replace(config, epochs=0))
