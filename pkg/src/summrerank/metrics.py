"""Lexical and semantic quality metrics for candidate summaries.

ROUGE-N / ROUGE-L F1 with clipped n-gram counting, the mean of the three
(``rouge_avg``), the ranking-loss cost ``1 - M``, and two embedding-based
similarities: sentence-level cosine (used for instance weighting) and a
greedy token-matching F1 in the style of BERTScore (used as the semantic
evaluation stand-in).  The embedders shipped here are deterministic hashed
models; anything exposing the same ``embed`` method can be plugged in.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Protocol, Sequence

import numpy as np

from . import _kernels

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class DegenerateEmbeddingError(ValueError):
    """Raised when an embedder returns a zero (or non-finite) vector."""


@dataclass(frozen=True)
class Tokenizer:
    """Lowercase and split on anything that is not a word character."""

    lowercase: bool = True
    stem: bool = False

    def __call__(self, text: str) -> tuple[str, ...]:
        if self.lowercase:
            text = text.lower()
        tokens = _TOKEN_RE.findall(text)
        if self.stem:
            stemmer = _porter()
            tokens = [stemmer.stem(t) for t in tokens]
        return tuple(tokens)


def _porter():
    try:
        from nltk.stem.porter import PorterStemmer
    except ImportError as exc:  # pragma: no cover - optional extra
        raise ImportError(
            "stemming needs nltk: pip install 'summrerank[stem]'"
        ) from exc
    return PorterStemmer()


DEFAULT_TOKENIZER = Tokenizer()

TokenSequence = Sequence[str]


def as_tokens(text: str | TokenSequence, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> tuple[str, ...]:
    if isinstance(text, str):
        return tokenizer(text)
    return tuple(text)


@dataclass(frozen=True)
class MetricScore:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_pr(cls, precision: float, recall: float) -> "MetricScore":
        denom = precision + recall
        f1 = 2.0 * precision * recall / denom if denom > 0 else 0.0
        return cls(precision, recall, f1)


ZERO = MetricScore(0.0, 0.0, 0.0)


def _ngrams(tokens: tuple[str, ...], n: int) -> Counter:
    return Counter(tokens[i : i + n] for i in range(len(tokens) - n + 1))


def rouge_n(candidate, reference, n: int = 1, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> MetricScore:
    """Clipped n-gram overlap between ``candidate`` and ``reference``.

    Accepts raw strings (tokenized with ``tokenizer``) or token sequences.
    Returns all zeros when either side has no n-grams.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand = _ngrams(as_tokens(candidate, tokenizer), n)
    ref = _ngrams(as_tokens(reference, tokenizer), n)
    n_cand = sum(cand.values())
    n_ref = sum(ref.values())
    if n_cand == 0 or n_ref == 0:
        return ZERO
    overlap = sum((cand & ref).values())
    return MetricScore.from_pr(overlap / n_cand, overlap / n_ref)


def _encode_pair(a: tuple[str, ...], b: tuple[str, ...]) -> tuple[np.ndarray, np.ndarray]:
    ids: dict[str, int] = {}
    ea = np.array([ids.setdefault(t, len(ids)) for t in a], dtype=np.int64)
    eb = np.array([ids.setdefault(t, len(ids)) for t in b], dtype=np.int64)
    return ea, eb


def lcs_length(a: TokenSequence, b: TokenSequence) -> int:
    ea, eb = _encode_pair(tuple(a), tuple(b))
    return int(_kernels.lcs_length(ea, eb))


def rouge_l(candidate, reference, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> MetricScore:
    cand = as_tokens(candidate, tokenizer)
    ref = as_tokens(reference, tokenizer)
    if not cand or not ref:
        return ZERO
    lcs = lcs_length(cand, ref)
    return MetricScore.from_pr(lcs / len(cand), lcs / len(ref))


def rouge_avg(candidate, reference, tokenizer: Tokenizer = DEFAULT_TOKENIZER) -> float:
    """Mean of ROUGE-1, ROUGE-2 and ROUGE-L F1."""
    cand = as_tokens(candidate, tokenizer)
    ref = as_tokens(reference, tokenizer)
    return (rouge_n(cand, ref, 1).f1 + rouge_n(cand, ref, 2).f1 + rouge_l(cand, ref).f1) / 3.0


QualityFn = Callable[[str, str], float]


def cost(candidate, reference, metric: QualityFn = rouge_avg) -> float:
    """Ranking-loss margin unit: ``1 - M(candidate, reference)``, M clamped to [0, 1]."""
    m = float(metric(candidate, reference))
    return 1.0 - min(1.0, max(0.0, m))


QUALITY_METRICS: dict[str, QualityFn] = {
    "rouge_avg": rouge_avg,
    "rouge1": lambda c, r: rouge_n(c, r, 1).f1,
    "rouge2": lambda c, r: rouge_n(c, r, 2).f1,
    "rougeL": lambda c, r: rouge_l(c, r).f1,
}


def get_quality_metric(name: str) -> QualityFn:
    try:
        return QUALITY_METRICS[name]
    except KeyError:
        raise ValueError(f"unknown quality metric {name!r}; choose from {sorted(QUALITY_METRICS)}") from None


# ---------------------------------------------------------------------------
# embedders
# ---------------------------------------------------------------------------


class SentenceEmbedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class TokenEmbedder(Protocol):
    dim: int

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray: ...


def _stable_hash(token: str, salt: str = "") -> int:
    digest = hashlib.blake2b((salt + token).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


class HashedBagEmbedder:
    """Signed feature hashing of token counts, L2-normalized.

    Deterministic across processes (uses blake2b, not ``hash``).  An empty
    text maps to the zero vector, which ``semantic_similarity`` rejects.
    """

    def __init__(self, dim: int = 256, tokenizer: Tokenizer = DEFAULT_TOKENIZER):
        self.dim = dim
        self.tokenizer = tokenizer
        self._cache: dict[str, tuple[int, float]] = {}

    def _slot(self, token: str) -> tuple[int, float]:
        slot = self._cache.get(token)
        if slot is None:
            h = _stable_hash(token, "bag:")
            slot = (h % self.dim, 1.0 if (h >> 32) & 1 else -1.0)
            self._cache[token] = slot
        return slot

    def embed(self, text: str | TokenSequence) -> np.ndarray:
        vec = np.zeros(self.dim)
        for tok in as_tokens(text, self.tokenizer):
            idx, sign = self._slot(tok)
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec


class HashedTokenEmbedder:
    """Each token maps to a fixed pseudo-random unit vector seeded by its hash."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def vector(self, token: str) -> np.ndarray:
        v = self._cache.get(token)
        if v is None:
            rng = np.random.default_rng(_stable_hash(token, "tok:"))
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            self._cache[token] = v
        return v

    def embed_tokens(self, tokens: Sequence[str]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.vector(t) for t in tokens])


def semantic_similarity(a: str, b: str, embedder: SentenceEmbedder) -> float:
    """Cosine similarity of two texts under ``embedder`` (inner product of unit vectors)."""
    va = np.asarray(embedder.embed(a), dtype=np.float64)
    vb = np.asarray(embedder.embed(b), dtype=np.float64)
    norms = []
    for text, v in ((a, va), (b, vb)):
        norm = float(np.linalg.norm(v))
        if not math.isfinite(norm) or norm == 0.0:
            raise DegenerateEmbeddingError(f"embedder returned a degenerate vector for {text[:40]!r}")
        norms.append(norm)
    return float(np.clip((va @ vb) / (norms[0] * norms[1]), -1.0, 1.0))


def greedy_semantic_f1(
    candidate,
    reference,
    token_embedder: TokenEmbedder,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> MetricScore:
    """Greedy max-cosine token matching, BERTScore style (no idf, no baseline rescale)."""
    cand = as_tokens(candidate, tokenizer)
    ref = as_tokens(reference, tokenizer)
    if not cand or not ref:
        return ZERO
    sim = token_embedder.embed_tokens(cand) @ token_embedder.embed_tokens(ref).T
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    # cosines can be negative; the score contract is [0, 1]
    return MetricScore.from_pr(min(1.0, max(0.0, precision)), min(1.0, max(0.0, recall)))
