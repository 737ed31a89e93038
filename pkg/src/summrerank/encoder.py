"""Multi-vector scoring of a candidate summary against a document.

A document is encoded into one vector per sentence, a summary into a single
vector.  Each sentence score is an inner product with the summary vector and
the final similarity is the self-weighted sum

    f = sum_k w_k * s_k,   w_k = s_k / sum_j s_j,

i.e. ``sum(s**2) / sum(s)``.  When ``|sum(s)| < eps`` the weights fall back to
uniform (``f = mean(s)``) and a warning is logged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

import numpy as np

from . import _kernels
from .metrics import DEFAULT_TOKENIZER, Tokenizer, rouge_avg
from .pool import CandidatePool, Document

logger = logging.getLogger(__name__)

GUARD_EPS = 1e-8
ABLATION_MODES = ("first_cls", "average", "weighted")


@dataclass(frozen=True)
class MultiVectorEncoding:
    doc_vectors: np.ndarray  # (K, d)
    summary_vector: np.ndarray  # (d,)

    def __post_init__(self):
        if self.doc_vectors.ndim != 2 or self.summary_vector.ndim != 1:
            raise ValueError("doc_vectors must be (K, d) and summary_vector (d,)")
        if self.doc_vectors.shape[1] != self.summary_vector.shape[0]:
            raise ValueError(
                f"dimension mismatch: document {self.doc_vectors.shape[1]} vs summary {self.summary_vector.shape[0]}"
            )


@dataclass(frozen=True)
class SimilarityScore:
    per_sentence: np.ndarray
    weights: np.ndarray
    total: float
    guarded: bool = False


def sentence_scores(encoding: MultiVectorEncoding) -> np.ndarray:
    return encoding.doc_vectors @ encoding.summary_vector


def _as_encoding_scores(x) -> np.ndarray:
    if isinstance(x, MultiVectorEncoding):
        return sentence_scores(x)
    return np.asarray(x, dtype=np.float64)


def similarity(encoding, eps: float = GUARD_EPS) -> SimilarityScore:
    """Self-weighted similarity from an encoding or a vector of sentence scores."""
    scores = _as_encoding_scores(encoding)
    denom = float(scores.sum())
    if abs(denom) < eps:
        logger.warning("sentence scores sum to %.3g; using uniform weights", denom)
        weights = np.full(scores.shape, 1.0 / scores.size)
        guarded = True
    else:
        weights = scores / denom
        guarded = False
    return SimilarityScore(scores, weights, float(weights @ scores), guarded)


def weighted_totals(scores: np.ndarray, eps: float = GUARD_EPS) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise similarity and its gradient for a (n, K) score matrix.

    Returns ``(totals, d_totals/d_scores)``.
    """
    scores = np.asarray(scores, dtype=np.float64)
    denom = scores.sum(axis=1)
    guard = np.abs(denom) < eps
    if guard.any():
        logger.warning("%d score rows sum to ~0; using uniform weights", int(guard.sum()))
    safe = np.where(guard, 1.0, denom)
    totals = np.where(guard, scores.mean(axis=1), (scores**2).sum(axis=1) / safe)
    grad = (2.0 * scores - totals[:, None]) / safe[:, None]
    grad[guard] = 1.0 / scores.shape[1]
    return totals, grad


def similarity_grad(encoding: MultiVectorEncoding, eps: float = GUARD_EPS) -> tuple[float, np.ndarray, np.ndarray]:
    """Total similarity with gradients w.r.t. the summary and document vectors."""
    scores = sentence_scores(encoding)
    totals, g = weighted_totals(scores[None, :], eps)
    g = g[0]
    d_summary = g @ encoding.doc_vectors
    d_doc = np.outer(g, encoding.summary_vector)
    return float(totals[0]), d_summary, d_doc


def ablation_similarity(encoding, mode: str = "weighted") -> float:
    scores = _as_encoding_scores(encoding)
    if mode == "first_cls":
        return float(scores[0])
    if mode == "average":
        return float(scores.mean())
    if mode == "weighted":
        return similarity(scores).total
    raise ValueError(f"unknown ablation mode {mode!r}; expected one of {ABLATION_MODES}")


def select_best(totals: Sequence[float]) -> int:
    """Index of the highest total; the lowest index wins ties."""
    arr = np.asarray(totals, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("cannot select from an empty candidate list")
    return int(np.argmax(arr))


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------


class EncoderBackend(Protocol):
    name: str

    def encode_document(self, document: Document) -> np.ndarray: ...

    def encode_summary(self, text: str) -> np.ndarray: ...


@dataclass
class Segments:
    """Token ids of several texts in CSR layout."""

    tokens: np.ndarray
    offsets: np.ndarray

    @property
    def count(self) -> int:
        return self.offsets.size - 1


class MeanPoolEncoder:
    """Trainable desk-scale backend: per-segment mean of learned token embeddings.

    Each document sentence and each summary is one segment; its pooled vector
    stands in for the classification-token representation of a pretrained
    encoder.  Row 0 of the table is shared by out-of-vocabulary tokens.
    """

    name = "mean-pool"

    def __init__(
        self,
        vocab: Sequence[str],
        dim: int = 32,
        table: np.ndarray | None = None,
        normalize: bool = False,
        tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    ):
        self.vocab = list(vocab)
        self.index = {tok: i + 1 for i, tok in enumerate(self.vocab)}
        self.dim = dim
        self.normalize = normalize
        self.tokenizer = tokenizer
        if table is None:
            table = np.zeros((len(self.vocab) + 1, dim))
        if table.shape != (len(self.vocab) + 1, dim):
            raise ValueError(f"table shape {table.shape} does not match vocab/dim")
        self.table = np.ascontiguousarray(table, dtype=np.float64)

    @classmethod
    def initialize(
        cls,
        texts: Sequence[str],
        dim: int = 32,
        seed: int = 0,
        shared_scale: float = 2.0,
        token_scale: float = 1.0,
        normalize: bool = False,
        tokenizer: Tokenizer = DEFAULT_TOKENIZER,
    ) -> "MeanPoolEncoder":
        """Vocabulary from ``texts``; rows = shared offset + independent noise.

        The shared component keeps initial sentence scores positive, the way
        pretrained sentence representations are anisotropic.
        """
        vocab = sorted({t for text in texts for t in tokenizer(text)})
        rng = np.random.default_rng(seed)
        shared = rng.standard_normal(dim) * (shared_scale / np.sqrt(dim))
        noise = rng.standard_normal((len(vocab) + 1, dim)) * (token_scale / np.sqrt(dim))
        return cls(vocab, dim, shared[None, :] + noise, normalize, tokenizer)

    @property
    def parameters(self) -> dict[str, np.ndarray]:
        return {"embeddings": self.table}

    def segments(self, texts: Sequence[str]) -> Segments:
        ids: list[int] = []
        offsets = [0]
        for text in texts:
            ids.extend(self.index.get(t, 0) for t in self.tokenizer(text))
            offsets.append(len(ids))
        return Segments(np.asarray(ids, dtype=np.int64), np.asarray(offsets, dtype=np.int64))

    def pool(self, seg: Segments) -> np.ndarray:
        out = _kernels.mean_pool(self.table, seg.tokens, seg.offsets)
        if self.normalize:
            norms = np.linalg.norm(out, axis=1, keepdims=True)
            out = out / np.where(norms > 0, norms, 1.0)
        return out

    def pool_backward(self, seg: Segments, pooled: np.ndarray, grad: np.ndarray, grad_table: np.ndarray) -> None:
        """Accumulate d loss / d table into ``grad_table`` given d loss / d pooled."""
        if self.normalize:
            raw = _kernels.mean_pool(self.table, seg.tokens, seg.offsets)
            norms = np.linalg.norm(raw, axis=1, keepdims=True)
            norms = np.where(norms > 0, norms, 1.0)
            grad = (grad - pooled * (pooled * grad).sum(axis=1, keepdims=True)) / norms
        _kernels.mean_pool_backward(np.ascontiguousarray(grad), seg.tokens, seg.offsets, grad_table)

    def encode_document(self, document: Document) -> np.ndarray:
        return self.pool(self.segments(document.sentences))

    def encode_summary(self, text: str) -> np.ndarray:
        return self.pool(self.segments([text]))[0]

    def encode_summaries(self, texts: Sequence[str]) -> np.ndarray:
        return self.pool(self.segments(texts))

    def encode(self, document: Document, text: str) -> MultiVectorEncoding:
        return MultiVectorEncoding(self.encode_document(document), self.encode_summary(text))

    def to_state(self) -> dict:
        return {
            "backend": self.name,
            "dim": self.dim,
            "normalize": self.normalize,
            "lowercase": self.tokenizer.lowercase,
            "stem": self.tokenizer.stem,
            "vocab": self.vocab,
            "params": {"embeddings": self.table.tolist()},
        }

    @classmethod
    def from_state(cls, state: dict) -> "MeanPoolEncoder":
        return cls(
            state["vocab"],
            int(state["dim"]),
            np.asarray(state["params"]["embeddings"], dtype=np.float64),
            bool(state.get("normalize", False)),
            Tokenizer(bool(state.get("lowercase", True)), bool(state.get("stem", False))),
        )


class OracleScorer:
    """Scores each candidate by its lexical quality against the reference.

    Not a document encoder: it reads the reference, so it is only meaningful
    as an upper bound or for pipeline tests.
    """

    name = "oracle"

    def __init__(self, metric=rouge_avg):
        self.metric = metric

    def score_pool(self, pool: CandidatePool) -> np.ndarray:
        if pool.cached_quality is not None:
            return np.asarray(pool.cached_quality, dtype=np.float64)
        return np.array([self.metric(c, pool.reference) for c in pool.candidates])

    def to_state(self) -> dict:
        return {"backend": self.name}

    @classmethod
    def from_state(cls, state: dict) -> "OracleScorer":
        return cls()


BACKENDS = {MeanPoolEncoder.name: MeanPoolEncoder, OracleScorer.name: OracleScorer}


def backend_from_state(state: dict):
    try:
        return BACKENDS[state["backend"]].from_state(state)
    except KeyError:
        raise ValueError(f"unknown encoder backend {state.get('backend')!r}") from None


def score_candidates(model, pool: CandidatePool, eps: float = GUARD_EPS) -> np.ndarray:
    """Similarity of every candidate in ``pool``; the document is encoded once."""
    if hasattr(model, "score_pool"):
        return model.score_pool(pool)
    doc = model.encode_document(pool.document)
    if hasattr(model, "encode_summaries"):
        summaries = model.encode_summaries(pool.candidates)
    else:
        summaries = np.stack([model.encode_summary(c) for c in pool.candidates])
    totals, _ = weighted_totals(summaries @ doc.T, eps)
    return totals
