"""Ranking analyses over candidate pools.

All orderings are stable descending sorts, so ties keep the earlier
candidate first.  ``lexical`` quality is rouge_avg unless a sidecar supplies
it; ``semantic`` quality is the sidecar value when present, otherwise the
greedy token-matching stand-in (reports carry a ``semantic_source`` label).
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Iterable, Sequence

import numpy as np

from . import _kernels
from .encoder import score_candidates
from .metrics import rouge_avg
from .pool import CandidatePool, dedupe_candidates, false_positive_mask, pool_qualities, pool_semantics

logger = logging.getLogger(__name__)

TOP_K = (1, 3, 5)


def stable_desc(values) -> np.ndarray:
    return np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")


@dataclass(frozen=True)
class RankedPool:
    pool: CandidatePool
    order: np.ndarray
    lexical: np.ndarray
    semantic: np.ndarray

    def __post_init__(self):
        order = np.asarray(self.order, dtype=np.int64)
        if sorted(order.tolist()) != list(range(self.pool.m)):
            raise ValueError(f"order for pool {self.pool.id!r} is not a permutation of {self.pool.m} candidates")
        object.__setattr__(self, "order", order)


def qualities(pool: CandidatePool, token_embedder=None) -> tuple[np.ndarray, np.ndarray]:
    return pool_qualities(pool, rouge_avg), pool_semantics(pool, token_embedder)


def semantic_source(pools: Iterable[CandidatePool]) -> str:
    flags = {p.cached_semantic is not None for p in pools}
    if flags == {True}:
        return "sidecar"
    if flags == {False}:
        return "greedy-token-f1"
    return "mixed"


def ranked(pool: CandidatePool, order, token_embedder=None) -> RankedPool:
    lex, sem = qualities(pool, token_embedder)
    return RankedPool(pool, order, lex, sem)


def oracle_order(pool: CandidatePool, by: str = "lexical", token_embedder=None) -> RankedPool:
    lex, sem = qualities(pool, token_embedder)
    if by == "lexical":
        order = stable_desc(lex)
    elif by == "semantic":
        order = stable_desc(sem)
    else:
        raise ValueError(f"oracle must be 'lexical' or 'semantic', got {by!r}")
    return RankedPool(pool, order, lex, sem)


def model_order(model, pool: CandidatePool, token_embedder=None) -> RankedPool:
    return ranked(pool, stable_desc(score_candidates(model, pool)), token_embedder)


def z_statistic(lexical, semantic) -> int:
    """1-based rank, in lexical-descending order, of the semantically best candidate."""
    lex = np.asarray(lexical, dtype=np.float64)
    sem = np.asarray(semantic, dtype=np.float64)
    if lex.size == 0:
        raise ValueError("empty pool")
    if lex.shape != sem.shape:
        raise ValueError("lexical and semantic vectors differ in length")
    order = stable_desc(lex)
    # argmax picks the earliest maximum in sorted order
    return int(np.argmax(sem[order])) + 1


def z_distribution(zs: Sequence[int], m: int | None = None) -> dict[str, Any]:
    zs = np.asarray(zs, dtype=np.int64)
    m = int(m if m is not None else (zs.max() if zs.size else 1))
    counts = np.bincount(zs, minlength=m + 1)[1 : m + 1]
    n = max(1, zs.size)
    return {
        "counts": counts.tolist(),
        "percent": (100.0 * counts / n).tolist(),
        "share_z_gt_1": float((zs > 1).sum() / n) if zs.size else 0.0,
    }


def corpus_z_distribution(pools: Sequence[CandidatePool], token_embedder=None) -> dict[str, Any]:
    zs = []
    for pool in pools:
        lex, sem = qualities(pool, token_embedder)
        zs.append(z_statistic(lex, sem))
    m = max((p.m for p in pools), default=1)
    out = z_distribution(zs, m)
    out["z"] = zs
    return out


def topk_quality(ranked_pools: Sequence[RankedPool], k: int) -> tuple[float, float]:
    """(semantic@k, lexical@k): mean over pools of the mean quality of the top k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not ranked_pools:
        return 0.0, 0.0
    sem, lex = [], []
    for rp in ranked_pools:
        top = rp.order[:k]
        sem.append(rp.semantic[top].mean())
        lex.append(rp.lexical[top].mean())
    return float(np.mean(sem)), float(np.mean(lex))


@dataclass
class PairCounts:
    correct: int = 0
    lexical_wins: int = 0
    relevant: int = 0
    false_positive: int = 0
    total: int = 0

    def add(self, arr) -> None:
        self.correct += int(arr[0])
        self.lexical_wins += int(arr[1])
        self.relevant += int(arr[2])
        self.false_positive += int(arr[3])
        self.total += int(arr[4])

    def f1_fp(self) -> tuple[float, float]:
        p = self.correct / self.lexical_wins if self.lexical_wins else 0.0
        r = self.correct / self.relevant if self.relevant else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        fp = self.false_positive / self.total if self.total else 0.0
        return f1, fp


def pool_pair_counts(rp: RankedPool) -> np.ndarray:
    return _kernels.pair_counts(rp.order, np.ascontiguousarray(rp.lexical), np.ascontiguousarray(rp.semantic))


def pairwise_f1_fp(ranked_pools: Sequence[RankedPool]) -> tuple[float, float]:
    """Pairwise concordance F1 and false-positive rate over all ranked pairs.

    For every pair with ``a`` ranked above ``b``: it is *correct* when ``a``
    beats ``b`` strictly on both qualities, *relevant* when either candidate
    strictly dominates the other, and a *false positive* when ``a`` has
    strictly higher lexical but strictly lower semantic quality.  Precision
    divides correct pairs by pairs where the higher-ranked one wins lexically;
    recall divides by relevant pairs.  Counts are pooled over the corpus.
    """
    counts = PairCounts()
    for rp in ranked_pools:
        counts.add(pool_pair_counts(rp))
    return counts.f1_fp()


def identical_score_stats(pools: Sequence[CandidatePool], decimals: int = 4) -> float:
    """Share of pools (after dedupe) holding at least two equal rounded R-avg values."""
    if not pools:
        return 0.0
    hits = 0
    for pool in pools:
        pool = dedupe_candidates(pool)
        vals = np.round(np.array([rouge_avg(c, pool.reference) for c in pool.candidates]), decimals)
        if np.unique(vals).size < vals.size:
            hits += 1
    return hits / len(pools)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass
class RankingReport:
    n_pools: int
    z_histogram: list[int]
    z_share_gt_1: float
    bs_at_k: dict[str, float]
    r_at_k: dict[str, float]
    f1: float
    fp_rate: float
    identical_score_rate: float
    semantic_source: str
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def ranking_report(
    ranked_pools: Sequence[RankedPool],
    identical_rate: float | None = None,
) -> tuple[RankingReport, list[dict]]:
    """Report plus one row of per-pool statistics (for CSV emission)."""
    pools = [rp.pool for rp in ranked_pools]
    zs = [z_statistic(rp.lexical, rp.semantic) for rp in ranked_pools]
    m = max((p.m for p in pools), default=1)
    zd = z_distribution(zs, m)
    bs, rk = {}, {}
    for k in TOP_K:
        s, l = topk_quality(ranked_pools, k)
        bs[str(k)] = s
        rk[str(k)] = l
    counts = PairCounts()
    rows = []
    for rp, z in zip(ranked_pools, zs):
        arr = pool_pair_counts(rp)
        counts.add(arr)
        best = int(rp.order[0])
        rows.append(
            {
                "id": rp.pool.id,
                "m": rp.pool.m,
                "z": z,
                "selected": best,
                "selected_lexical": float(rp.lexical[best]),
                "selected_semantic": float(rp.semantic[best]),
                "pairs": int(arr[4]),
                "correct_pairs": int(arr[0]),
                "relevant_pairs": int(arr[2]),
                "false_positive_pairs": int(arr[3]),
            }
        )
    f1, fp = counts.f1_fp()
    if identical_rate is None:
        identical_rate = identical_score_stats(pools)
    report = RankingReport(
        n_pools=len(pools),
        z_histogram=zd["counts"],
        z_share_gt_1=zd["share_z_gt_1"],
        bs_at_k=bs,
        r_at_k=rk,
        f1=f1,
        fp_rate=fp,
        identical_score_rate=identical_rate,
        semantic_source=semantic_source(pools),
    )
    return report, rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return buf.getvalue()


def histogram_csv(counts: Sequence[int]) -> str:
    total = max(1, sum(counts))
    lines = ["z,count,percent"]
    lines += [f"{z},{c},{100.0 * c / total:.6f}" for z, c in enumerate(counts, start=1)]
    return "\n".join(lines) + "\n"


def report_json(report: RankingReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

_LOSS_KEYS = {"lam", "phi", "gamma1", "gamma2", "negatives"}


def _cell_config(base, cell: dict):
    loss_over = {k: v for k, v in cell.items() if k in _LOSS_KEYS}
    train_over = {k: v for k, v in cell.items() if k not in _LOSS_KEYS and k != "n_candidates"}
    return replace(base, loss=replace(base.loss, **loss_over), **train_over)


def expand_grid(grid: dict[str, Sequence[Any]]) -> list[dict]:
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def alpha_filter_rate(pools: Sequence[CandidatePool], phi: float | None, embedder=None) -> dict[str, float]:
    """Share of candidates (and of injected false positives) given weight 0."""
    from .training import prepare_corpus

    if phi is None:
        return {"filtered": 0.0, "false_positive_filtered": 0.0}
    prepared = prepare_corpus(pools, embedder=embedder, verify_cache=False)
    sims = np.concatenate([p.similarities for p in prepared])
    fp = np.concatenate([false_positive_mask(p.pool) for p in prepared])
    zero = sims < phi
    return {
        "filtered": float(zero.mean()) if zero.size else 0.0,
        "false_positive_filtered": float(zero[fp].mean()) if fp.any() else 0.0,
    }


def sweep(
    grid: Sequence[dict] | dict[str, Sequence[Any]],
    corpus: Sequence[CandidatePool],
    base_config=None,
    eval_corpus: Sequence[CandidatePool] | None = None,
) -> list[dict]:
    """Train and evaluate once per grid cell; failures become error rows.

    Recognized cell keys: loss settings (lam, phi, gamma1, gamma2, negatives),
    any TrainConfig field, and ``n_candidates`` (truncates every pool to its
    first n candidates, for training and evaluation alike).
    """
    from .training import TrainConfig, train

    cells = expand_grid(grid) if isinstance(grid, dict) else list(grid)
    base_config = base_config or TrainConfig()
    eval_corpus = list(eval_corpus) if eval_corpus is not None else list(corpus)
    rows = []
    for cell in cells:
        row: dict[str, Any] = {"cell": dict(cell)}
        try:
            cfg = _cell_config(base_config, cell)
            n = cell.get("n_candidates")
            train_pools = [p.truncate(n) for p in corpus] if n else list(corpus)
            test_pools = [p.truncate(n) for p in eval_corpus] if n else eval_corpus
            ckpt = train(train_pools, cfg)
            report, _ = ranking_report([model_order(ckpt.model, p) for p in test_pools])
            row["report"] = report.to_dict()
            row["pool_sizes"] = sorted({p.m for p in train_pools})
            row["alpha"] = alpha_filter_rate(train_pools, cfg.loss.phi)
            row["objective"] = dict(ckpt.metrics)
        except Exception as exc:  # one bad cell must not sink the grid
            logger.warning("sweep cell %s failed: %s", cell, exc)
            row["error"] = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def sweep_table(rows: Sequence[dict]) -> list[dict]:
    """Flatten sweep rows into CSV-friendly dicts."""
    flat = []
    for row in rows:
        rec = {f"cell.{k}": v for k, v in row["cell"].items()}
        if "error" in row:
            rec["error"] = row["error"]
        else:
            rep = row["report"]
            rec.update({f"bs@{k}": v for k, v in rep["bs_at_k"].items()})
            rec.update({f"r@{k}": v for k, v in rep["r_at_k"].items()})
            rec.update({"f1": rep["f1"], "fp_rate": rep["fp_rate"], "alpha_filtered": row["alpha"]["filtered"]})
            rec["error"] = ""
        flat.append(rec)
    return flat
