"""Documents, candidate pools, JSONL ingestion, negatives and synthetic corpora."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .metrics import HashedBagEmbedder, HashedTokenEmbedder, greedy_semantic_f1, rouge_avg, semantic_similarity

_SENT_SPLIT = re.compile(r"(?<=[.!?])\s+")


class PoolFormatError(ValueError):
    """A pools or scores file does not follow the JSONL schema."""

    def __init__(self, message: str, line: int | None = None, field_name: str | None = None):
        self.line = line
        self.field = field_name
        where = f"line {line}" if line is not None else "record"
        if field_name:
            where += f", field {field_name!r}"
        super().__init__(f"{where}: {message}")


def split_sentences(text: str) -> list[str]:
    parts = [p.strip() for p in _SENT_SPLIT.split(text.strip())]
    return [p for p in parts if p] or [text.strip()]


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    sentences: tuple[str, ...]

    def __post_init__(self):
        if not self.sentences:
            raise ValueError(f"document {self.id!r} has no sentences")

    @classmethod
    def from_text(cls, doc_id: str, text: str, sentences: Sequence[str] | None = None) -> "Document":
        sents = tuple(sentences) if sentences else tuple(split_sentences(text))
        return cls(doc_id, text, sents)


@dataclass(frozen=True)
class CandidatePool:
    document: Document
    reference: str
    candidates: tuple[str, ...]
    cached_quality: tuple[float, ...] | None = None
    cached_semantic: tuple[float, ...] | None = None
    meta: dict[str, Any] | None = field(default=None, compare=False)

    def __post_init__(self):
        if len(self.candidates) < 1:
            raise ValueError(f"pool {self.id!r} has no candidates")
        for name in ("cached_quality", "cached_semantic"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != len(self.candidates):
                raise ValueError(f"pool {self.id!r}: {name} has length {len(arr)}, expected {len(self.candidates)}")

    @property
    def id(self) -> str:
        return self.document.id

    @property
    def m(self) -> int:
        return len(self.candidates)

    def with_scores(self, quality=None, semantic=None) -> "CandidatePool":
        return replace(
            self,
            cached_quality=tuple(float(q) for q in quality) if quality is not None else self.cached_quality,
            cached_semantic=tuple(float(s) for s in semantic) if semantic is not None else self.cached_semantic,
        )

    def truncate(self, n: int) -> "CandidatePool":
        """Keep the first ``n`` candidates (and the matching cache entries)."""
        cut = lambda arr: None if arr is None else arr[:n]
        meta = self.meta
        if meta:
            meta = {k: (v[:n] if isinstance(v, list) and len(v) == self.m else v) for k, v in meta.items()}
        return replace(
            self,
            candidates=self.candidates[:n],
            cached_quality=cut(self.cached_quality),
            cached_semantic=cut(self.cached_semantic),
            meta=meta,
        )

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "id": self.id,
            "document": self.document.text,
            "sentences": list(self.document.sentences),
            "reference": self.reference,
            "candidates": list(self.candidates),
        }
        if self.meta:
            rec["meta"] = self.meta
        return rec


@dataclass(frozen=True)
class NegativeSet:
    summaries: tuple[str, ...]
    sources: tuple[str, ...]


# ---------------------------------------------------------------------------
# JSONL io
# ---------------------------------------------------------------------------


def _require(rec: dict, key: str, kind, line: int):
    if key not in rec:
        raise PoolFormatError("missing required field", line, key)
    val = rec[key]
    if not isinstance(val, kind):
        raise PoolFormatError(f"expected {getattr(kind, '__name__', kind)}, got {type(val).__name__}", line, key)
    return val


def _str_list(rec: dict, key: str, line: int) -> list[str]:
    val = _require(rec, key, list, line)
    if not all(isinstance(x, str) for x in val):
        raise PoolFormatError("all entries must be strings", line, key)
    return val


def pool_from_record(rec: Any, line: int | None = None) -> CandidatePool:
    if not isinstance(rec, dict):
        raise PoolFormatError("record must be a JSON object", line)
    doc_id = _require(rec, "id", str, line)
    text = _require(rec, "document", str, line)
    reference = _require(rec, "reference", str, line)
    candidates = _str_list(rec, "candidates", line)
    if not candidates:
        raise PoolFormatError("must contain at least one candidate", line, "candidates")
    sentences = _str_list(rec, "sentences", line) if rec.get("sentences") is not None else None
    quality = rec.get("quality")
    semantic = rec.get("semantic")
    for key, arr in (("quality", quality), ("semantic", semantic)):
        if arr is not None and (not isinstance(arr, list) or len(arr) != len(candidates)):
            raise PoolFormatError(f"must be a list of {len(candidates)} numbers", line, key)
    meta = rec.get("meta")
    try:
        return CandidatePool(
            Document.from_text(doc_id, text, sentences),
            reference,
            tuple(candidates),
            tuple(map(float, quality)) if quality is not None else None,
            tuple(map(float, semantic)) if semantic is not None else None,
            meta if isinstance(meta, dict) else None,
        )
    except (TypeError, ValueError) as exc:
        raise PoolFormatError(str(exc), line) from exc


def _read_jsonl(path) -> Iterator[tuple[int, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                yield lineno, json.loads(raw)
            except json.JSONDecodeError as exc:
                raise PoolFormatError(f"invalid JSON ({exc.msg})", lineno) from exc


def load_pools(path, format: str = "jsonl") -> Iterator[CandidatePool]:
    """Stream pools from a JSONL file, validating each record.

    Raises :class:`PoolFormatError` naming the line (and field) of the first
    malformed record, or the line of a repeated document id.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported pools format {format!r}")
    seen: set[str] = set()
    for lineno, rec in _read_jsonl(path):
        pool = pool_from_record(rec, lineno)
        if pool.id in seen:
            raise PoolFormatError(f"duplicate document id {pool.id!r}", lineno, "id")
        seen.add(pool.id)
        yield pool


def write_pools(pools: Iterable[CandidatePool], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pool in pools:
            fh.write(json.dumps(pool.to_record(), ensure_ascii=False) + "\n")


def load_scores(path) -> dict[str, dict[str, list[float]]]:
    out: dict[str, dict[str, list[float]]] = {}
    for lineno, rec in _read_jsonl(path):
        if not isinstance(rec, dict):
            raise PoolFormatError("record must be a JSON object", lineno)
        doc_id = _require(rec, "id", str, lineno)
        entry = {}
        for key in ("quality", "semantic"):
            if rec.get(key) is not None:
                vals = _require(rec, key, list, lineno)
                if not all(isinstance(v, (int, float)) for v in vals):
                    raise PoolFormatError("entries must be numbers", lineno, key)
                entry[key] = [float(v) for v in vals]
        out[doc_id] = entry
    return out


def attach_scores(pools: Iterable[CandidatePool], scores: dict[str, dict[str, list[float]]]) -> list[CandidatePool]:
    out = []
    for pool in pools:
        entry = scores.get(pool.id)
        if entry is None:
            out.append(pool)
            continue
        try:
            out.append(pool.with_scores(entry.get("quality"), entry.get("semantic")))
        except ValueError as exc:
            raise PoolFormatError(str(exc), field_name="scores") from exc
    return out


def write_scores(pools: Iterable[CandidatePool], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pool in pools:
            rec: dict[str, Any] = {"id": pool.id}
            if pool.cached_quality is not None:
                rec["quality"] = list(pool.cached_quality)
            if pool.cached_semantic is not None:
                rec["semantic"] = list(pool.cached_semantic)
            fh.write(json.dumps(rec) + "\n")


# ---------------------------------------------------------------------------
# pool operations
# ---------------------------------------------------------------------------


def dedupe_candidates(pool: CandidatePool) -> CandidatePool:
    """Drop exact duplicate candidate texts, keeping first occurrences in order."""
    keep: list[int] = []
    seen: set[str] = set()
    for i, cand in enumerate(pool.candidates):
        if cand not in seen:
            seen.add(cand)
            keep.append(i)
    if len(keep) == pool.m:
        return pool
    pick = lambda arr: None if arr is None else tuple(arr[i] for i in keep)
    meta = pool.meta
    if meta:
        meta = {k: ([v[i] for i in keep] if isinstance(v, list) and len(v) == pool.m else v) for k, v in meta.items()}
    return replace(
        pool,
        candidates=pick(pool.candidates),
        cached_quality=pick(pool.cached_quality),
        cached_semantic=pick(pool.cached_semantic),
        meta=meta,
    )


def sample_negatives(corpus: Sequence[CandidatePool], anchor_id: str, count: int, rng_seed) -> NegativeSet:
    """Uniformly sample ``count`` candidates from pools other than ``anchor_id``.

    ``rng_seed`` may be an int or a ``numpy.random.Generator``.
    """
    if count < 0:
        raise ValueError("count must be non-negative")
    if count == 0:
        return NegativeSet((), ())
    sizes = np.array([0 if p.id == anchor_id else p.m for p in corpus], dtype=np.int64)
    total = int(sizes.sum())
    if total < count:
        raise ValueError(f"only {total} candidates outside {anchor_id!r}, need {count}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    flat = np.sort(rng.choice(total, size=count, replace=False))
    bounds = np.cumsum(sizes)
    pool_idx = np.searchsorted(bounds, flat, side="right")
    starts = bounds - sizes
    summaries, sources = [], []
    for pi, fi in zip(pool_idx, flat):
        pool = corpus[pi]
        summaries.append(pool.candidates[fi - starts[pi]])
        sources.append(pool.id)
    return NegativeSet(tuple(summaries), tuple(sources))


def pool_qualities(pool: CandidatePool, metric=rouge_avg) -> np.ndarray:
    if pool.cached_quality is not None:
        return np.asarray(pool.cached_quality, dtype=np.float64)
    return np.array([metric(c, pool.reference) for c in pool.candidates])


_DEFAULT_TOKEN_EMBEDDER = HashedTokenEmbedder()


def pool_semantics(pool: CandidatePool, token_embedder=None) -> np.ndarray:
    """Sidecar semantic scores when present, else the greedy token-matching F1."""
    if pool.cached_semantic is not None:
        return np.asarray(pool.cached_semantic, dtype=np.float64)
    emb = token_embedder or _DEFAULT_TOKEN_EMBEDDER
    return np.array([greedy_semantic_f1(c, pool.reference, emb).f1 for c in pool.candidates])


# ---------------------------------------------------------------------------
# synthetic corpora
# ---------------------------------------------------------------------------


@dataclass
class SyntheticSpec:
    """Knobs of the synthetic generator; the defaults give desk-scale pools."""

    vocab_content: int = 800
    vocab_filler: int = 80
    min_sentences: int = 3
    max_sentences: int = 6
    content_per_sentence: int = 6
    filler_per_sentence: int = 6
    reference_length: tuple[int, int] = (10, 16)
    deletion_share: float = 0.25


def _corrupt(tokens: list[str], rate: float, fillers: Sequence[str], share_delete: float, rng) -> list[str]:
    n = len(tokens)
    k = int(round(rate * n))
    if k == 0:
        return list(tokens)
    hit = set(rng.choice(n, size=k, replace=False).tolist())
    out = []
    for i, tok in enumerate(tokens):
        if i not in hit:
            out.append(tok)
        elif rng.random() >= share_delete:
            out.append(fillers[rng.integers(len(fillers))])
    return out


def _shuffle_locally(tokens: list[str], swaps: int, rng) -> list[str]:
    out = list(tokens)
    if len(out) < 2:
        return out
    for _ in range(swaps):
        i = int(rng.integers(len(out) - 1))
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def _make_document(idx: int, spec: SyntheticSpec, rng):
    content = [f"w{j:04d}" for j in rng.choice(spec.vocab_content, size=40, replace=False)]
    fillers = [f"f{j:03d}" for j in rng.choice(spec.vocab_filler, size=12, replace=False)]
    k = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
    sentences, salient = [], []
    for s in range(k):
        words = [content[j] for j in rng.choice(len(content), size=spec.content_per_sentence, replace=False)]
        salient.extend(words)
        words += [fillers[j] for j in rng.integers(len(fillers), size=spec.filler_per_sentence)]
        rng.shuffle(words)
        sentences.append(" ".join(words) + ".")
    lo, hi = spec.reference_length
    ref_len = int(rng.integers(lo, hi + 1))
    # the reference draws salient words in document order (lead-biased)
    seen, ref = set(), []
    for w in salient:
        if w not in seen:
            seen.add(w)
            ref.append(w)
    ref = ref[:ref_len]
    return sentences, ref, fillers


def generate_synthetic_corpus(
    n_docs: int,
    m_candidates: int = 8,
    noise_levels: Sequence[float] | None = None,
    seed: int = 0,
    false_positives: int = 0,
    spec: SyntheticSpec | None = None,
    id_prefix: str = "syn",
    max_attempts: int = 10,
) -> list[CandidatePool]:
    """Pools whose candidates are progressively corrupted copies of the reference.

    Candidate ``i`` of each pool drops or replaces ``round(noise_levels[i] * n)``
    reference tokens with filler words drawn from the document, so lexical
    quality goes down with the noise level by construction.  Replacement words
    never occur in the reference, so rate 1.0 gives rouge 0.

    With ``false_positives > 0`` the last that many noise slots are swapped for
    pairs of injected candidates: an in-order copy with heavy filler
    substitution (high ROUGE, sentence similarity below 0.9) and a locally
    reordered copy of the reference (lower ROUGE-2/L, high similarity).  The
    ``meta`` field of each pool marks noise levels and the injected false
    positives.  Candidate order is shuffled within each pool.
    """
    spec = spec or SyntheticSpec()
    if noise_levels is None:
        noise_levels = np.linspace(0.0, 0.7, m_candidates).tolist()
    noise_levels = [float(x) for x in noise_levels]
    if len(noise_levels) != m_candidates:
        raise ValueError("need one noise level per candidate")
    if any(b <= a for a, b in zip(noise_levels, noise_levels[1:])):
        raise ValueError("noise levels must be strictly increasing")
    if 2 * false_positives > m_candidates:
        raise ValueError("too many false positives for the pool size")

    embedder = HashedBagEmbedder()
    for attempt in range(max_attempts):
        rng = np.random.default_rng([seed, attempt])
        pools = []
        n_plain = m_candidates - 2 * false_positives
        for d in range(n_docs):
            sentences, ref, fillers = _make_document(d, spec, rng)
            reference = " ".join(ref)
            cands, levels, kinds = [], [], []
            for level in noise_levels[:n_plain]:
                cands.append(" ".join(_corrupt(ref, level, fillers, spec.deletion_share, rng)))
                levels.append(level)
                kinds.append("corrupt")
            for _ in range(false_positives):
                for _try in range(50):
                    fp = " ".join(_corrupt(ref, 0.25, fillers, 0.0, rng))
                    if semantic_similarity(fp, reference, embedder) < 0.9:
                        break
                else:
                    raise RuntimeError("could not build a false positive below similarity 0.9")
                para = " ".join(_shuffle_locally(ref, max(2, len(ref) // 2), rng))
                cands += [fp, para]
                levels += [0.25, 0.0]
                kinds += ["false_positive", "paraphrase"]
            perm = rng.permutation(len(cands))
            doc_id = f"{id_prefix}-{d:05d}"
            pools.append(
                CandidatePool(
                    Document(doc_id, " ".join(sentences), tuple(sentences)),
                    reference,
                    tuple(cands[i] for i in perm),
                    meta={"noise": [levels[i] for i in perm], "kind": [kinds[i] for i in perm]},
                )
            )
        if _levels_monotone(pools, noise_levels[:n_plain]):
            return pools
    raise RuntimeError("synthetic corpus failed the monotone-quality check")


def _levels_monotone(pools: Sequence[CandidatePool], levels: Sequence[float]) -> bool:
    by_level: dict[float, list[float]] = {lvl: [] for lvl in levels}
    for pool in pools:
        for cand, lvl, kind in zip(pool.candidates, pool.meta["noise"], pool.meta["kind"]):
            if kind == "corrupt":
                by_level[lvl].append(rouge_avg(cand, pool.reference))
    means = [float(np.mean(by_level[lvl])) for lvl in levels]
    return all(b < a for a, b in zip(means, means[1:]))


def false_positive_mask(pool: CandidatePool) -> np.ndarray:
    """Boolean mask of injected false positives (all False for non-synthetic pools)."""
    kinds = (pool.meta or {}).get("kind")
    if kinds is None:
        return np.zeros(pool.m, dtype=bool)
    return np.array([k == "false_positive" for k in kinds])
