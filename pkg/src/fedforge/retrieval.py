"""Knowledge tools for planning agents.

A small local corpus (FL literature abstracts) is indexed twice: an inverted
lexical index scored with Okapi BM25 and an embedding index scored by cosine.
First-stage candidates from both are merged with reciprocal-rank fusion and
the head of the fused list goes through a pluggable reranker. The corpus is
deliberately small, so every search is an exact, exhaustive scan - no ANN
structures.

Scoring:
    idf(t)      = ln(1 + (N - df + 0.5) / (df + 0.5))
    bm25(D, Q)  = sum over q in Q of idf(q) * tf * (k1 + 1)
                  / (tf + k1 * (1 - b + b * |D| / avgdl))
    rrf(d)      = sum over result lists L containing d of 1 / (k_rrf + rank_L(d))

Defaults k1=1.2, b=0.75, k_rrf=60 are the usual community values and are
config-exposed.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import re
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Protocol

from .errors import DuplicateIdError, RetrievalError

logger = logging.getLogger(__name__)

BM25_K1 = 1.2
BM25_B = 0.75
RRF_K = 60
DEFAULT_K_EACH = 20
DEFAULT_N_FINAL = 5

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class CorpusDoc:
    doc_id: str
    title: str
    body: str
    source: str = "note"  # "arxiv-abstract" | "note"
    token_count: int = 0

    def __post_init__(self):
        if not self.body:
            raise RetrievalError(f"doc {self.doc_id}: body must be non-empty")
        if self.token_count == 0:
            object.__setattr__(self, "token_count", len(tokenize(self.body)))


@dataclass(frozen=True)
class RankedHit:
    doc_id: str
    score: float
    stage: str  # bm25 | vector | fused | reranked
    rank: int


@dataclass(frozen=True)
class IngestStats:
    doc_count: int
    avg_doc_length: float


class HashingEmbedder:
    """Deterministic bag-of-hashed-tokens embedder (test / offline default).

    Each token hashes to one signed coordinate; the sum is L2-normalized, so
    identical texts embed identically and cosine similarity is well defined.
    """

    def __init__(self, dimension: int = 64):
        self.dimension = dimension

    def embed(self, text: str) -> list[float]:
        tokens = tokenize(text) or ["<empty>"]
        vec = [0.0] * self.dimension
        for token in tokens:
            digest = hashlib.sha1(token.encode("utf-8")).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dimension
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[bucket] += sign
        norm = math.sqrt(sum(x * x for x in vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return [x / norm for x in vec]


class Reranker(Protocol):
    def rerank(self, query: str, hits: list[RankedHit]) -> list[RankedHit]: ...


class IdentityReranker:
    """Keeps the fused order; stands in for a hosted rerank model."""

    def rerank(self, query: str, hits: list[RankedHit]) -> list[RankedHit]:
        return [
            RankedHit(h.doc_id, h.score, "reranked", i + 1) for i, h in enumerate(hits)
        ]


class CorpusIndex:
    """Dual lexical + vector index over an in-memory corpus."""

    def __init__(self, embedder: HashingEmbedder | None = None,
                 reranker: Reranker | None = None,
                 k1: float = BM25_K1, b: float = BM25_B, rrf_k: int = RRF_K):
        self.embedder = embedder or HashingEmbedder()
        self.reranker = reranker or IdentityReranker()
        self.k1 = k1
        self.b = b
        self.rrf_k = rrf_k
        self.docs: dict[str, CorpusDoc] = {}
        self._postings: dict[str, dict[str, int]] = {}  # term -> doc_id -> tf
        self._doc_len: dict[str, int] = {}
        self._vectors: dict[str, list[float]] = {}
        self._avgdl = 0.0
        self._write_lock = threading.Lock()

    # -- ingest ----------------------------------------------------------

    def ingest(self, docs: list[CorpusDoc]) -> IngestStats:
        with self._write_lock:
            for doc in docs:
                if doc.doc_id in self.docs:
                    raise DuplicateIdError(f"doc id already ingested: {doc.doc_id}")
                tokens = tokenize(doc.body)
                self.docs[doc.doc_id] = doc
                self._doc_len[doc.doc_id] = len(tokens)
                for token in tokens:
                    self._postings.setdefault(token, {}).setdefault(doc.doc_id, 0)
                    self._postings[token][doc.doc_id] += 1
                self._vectors[doc.doc_id] = self.embedder.embed(doc.body)
            n = len(self.docs)
            self._avgdl = (sum(self._doc_len.values()) / n) if n else 0.0
            return IngestStats(doc_count=n, avg_doc_length=self._avgdl)

    @property
    def avgdl(self) -> float:
        return self._avgdl

    # -- first-stage searches ---------------------------------------------

    def _idf(self, term: str) -> float:
        df = len(self._postings.get(term, {}))
        n = len(self.docs)
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def bm25_score(self, query: str, doc_id: str) -> float:
        score = 0.0
        dl = self._doc_len[doc_id]
        for term in tokenize(query):
            tf = self._postings.get(term, {}).get(doc_id, 0)
            if tf == 0:
                continue
            norm = self.k1 * (1.0 - self.b + self.b * dl / self._avgdl)
            score += self._idf(term) * tf * (self.k1 + 1.0) / (tf + norm)
        return score

    def bm25_search(self, query: str, k: int) -> list[RankedHit]:
        if not self.docs:
            return []
        candidates: set[str] = set()
        for term in tokenize(query):
            candidates.update(self._postings.get(term, {}))
        scored = sorted(
            ((self.bm25_score(query, doc_id), doc_id) for doc_id in candidates),
            key=lambda pair: (-pair[0], pair[1]),
        )
        return [
            RankedHit(doc_id, score, "bm25", i + 1)
            for i, (score, doc_id) in enumerate(scored[:k])
        ]

    def vector_search(self, query: str, k: int) -> list[RankedHit]:
        if not self.docs:
            return []
        qvec = self.embedder.embed(query)
        scored = sorted(
            (
                (sum(a * b for a, b in zip(qvec, vec)), doc_id)
                for doc_id, vec in self._vectors.items()
            ),
            key=lambda pair: (-pair[0], pair[1]),
        )
        return [
            RankedHit(doc_id, score, "vector", i + 1)
            for i, (score, doc_id) in enumerate(scored[:k])
        ]

    # -- fusion + rerank ---------------------------------------------------

    def fuse(self, lists: list[list[RankedHit]]) -> list[RankedHit]:
        rrf: dict[str, float] = {}
        for hits in lists:
            for hit in hits:
                rrf[hit.doc_id] = rrf.get(hit.doc_id, 0.0) + 1.0 / (self.rrf_k + hit.rank)
        ordered = sorted(rrf.items(), key=lambda item: (-item[1], item[0]))
        return [RankedHit(doc_id, score, "fused", i + 1) for i, (doc_id, score) in enumerate(ordered)]

    def hybrid_retrieve(self, query: str, k_each: int = DEFAULT_K_EACH,
                        n_final: int = DEFAULT_N_FINAL) -> list[RankedHit]:
        fused = self.fuse([self.bm25_search(query, k_each), self.vector_search(query, k_each)])
        return self.reranker.rerank(query, fused[:n_final])

    # -- corpus loading ----------------------------------------------------

    @staticmethod
    def load_corpus_file(path: str | Path) -> list[CorpusDoc]:
        docs = []
        for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RetrievalError(f"corpus line {i + 1} is not valid JSON: {exc}") from exc
            docs.append(
                CorpusDoc(
                    doc_id=raw["doc_id"],
                    title=raw.get("title", ""),
                    body=raw["body"],
                    source=raw.get("source", "arxiv-abstract"),
                )
            )
        return docs


def shipped_corpus_path() -> Path:
    return Path(str(resources.files("fedforge").joinpath("assets/corpus/fl_abstracts.jsonl")))


def build_default_index() -> CorpusIndex:
    index = CorpusIndex()
    index.ingest(CorpusIndex.load_corpus_file(shipped_corpus_path()))
    return index


class StubWebSearch:
    """Canned web-search fixtures keyed by query; offline default."""

    def __init__(self, fixtures: dict[str, str] | None = None):
        self.fixtures = fixtures or {}

    def search(self, query: str, context: str) -> str:
        if query in self.fixtures:
            return self.fixtures[query]
        return f"No indexed results for: {query}"


def web_search(provider, query: str, context: str = "") -> str:
    """Tool boundary: provider failures degrade to a sentinel observation so
    the agent loop keeps going instead of crashing."""
    try:
        return provider.search(query, context)
    except Exception as exc:  # provider-specific transports vary
        logger.warning("web search failed: %s", exc)
        return "search-unavailable"


def make_tools(index: CorpusIndex, provider=None) -> dict[str, Callable[[dict[str, str]], str]]:
    """Tool executors exposed to the gateway under their wire names."""
    provider = provider or StubWebSearch()

    def _search_docs(args: dict[str, str]) -> str:
        hits = index.hybrid_retrieve(args.get("query", ""))
        if not hits:
            return "no matching documents"
        lines = []
        for hit in hits:
            doc = index.docs[hit.doc_id]
            lines.append(f"[{hit.doc_id}] {doc.title}: {doc.body}")
        return "\n".join(lines)

    def _web_search(args: dict[str, str]) -> str:
        return web_search(provider, args.get("query", ""), args.get("context", ""))

    return {"search_docs": _search_docs, "web_search": _web_search}
