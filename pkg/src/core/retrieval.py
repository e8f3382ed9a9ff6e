# src/core/retrieval.py - Passive title/alias activation and active hybrid BM25 + dense retrieval

import logging
import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Optional, TypeVar

import ahocorasick
import numpy as np
from rank_bm25 import BM25

from ..models.ontology import Hyperedge, HyperedgeKind, HyperedgeSummary, Lifecycle
from ..models.retrieval import (
    HyperedgeDetails, RankedCandidate, RetrievalConfig, RetrievalResult, SearchRequest,
)
from .embedding import Embedder, HashingEmbedder, tokenize
from .errors import EmbeddingError, RetiredHyperedge, UnknownEntity
from .ontology import OntologySnapshot

logger = logging.getLogger(__name__)

AuditHook = Callable[[str, dict], None]
T = TypeVar("T")


def visible_hyperedges(snapshot: OntologySnapshot, kinds: Optional[Iterable[HyperedgeKind]] = None,
                       tenant: Optional[str] = None) -> list[Hyperedge]:
    """Approved hyperedges a principal of `tenant` may see: global ones plus its own tenant's."""
    return [
        he for he in snapshot.approved_hyperedges(kinds)
        if he.is_global or (tenant is not None and he.tenant == tenant)
    ]


# --- Passive activation ---

@dataclass(frozen=True)
class Match:
    start: int
    end: int  # exclusive
    pattern: str
    hyperedge_id: str


def _is_word_char(ch: str) -> bool:
    return ch.isalnum() or ch == "_"


def whole_token(text: str, start: int, end: int) -> bool:
    """True when text[start:end] is not glued to word characters on either side."""
    if start > 0 and _is_word_char(text[start]) and _is_word_char(text[start - 1]):
        return False
    if end < len(text) and _is_word_char(text[end - 1]) and _is_word_char(text[end]):
        return False
    return True


class TitleMatcher:
    """Aho-Corasick automaton over case-folded titles and aliases of approved hyperedges."""

    def __init__(self, hyperedges: Iterable[Hyperedge]):
        self.patterns: dict[str, str] = {}
        self.summaries: dict[str, HyperedgeSummary] = {}
        for he in sorted(hyperedges, key=lambda h: h.id):
            if he.lifecycle != Lifecycle.APPROVED:
                continue
            self.summaries[he.id] = he.summary()
            for form in he.surface_forms():
                key = form.casefold()
                if key and key not in self.patterns:
                    self.patterns[key] = he.id
        self.automaton = ahocorasick.Automaton()
        for key in sorted(self.patterns):
            self.automaton.add_word(key, (key, self.patterns[key]))
        if self.patterns:
            self.automaton.make_automaton()

    def find(self, text: str) -> list[Match]:
        if not self.patterns:
            return []
        folded = text.casefold()
        matches = []
        for end_index, (pattern, he_id) in self.automaton.iter(folded):
            start = end_index - len(pattern) + 1
            if whole_token(folded, start, end_index + 1):
                matches.append(Match(start, end_index + 1, pattern, he_id))
        matches.sort(key=lambda m: (m.start, -(m.end - m.start), m.hyperedge_id))
        return matches


def build_matcher(snapshot: OntologySnapshot, kinds: Optional[Iterable[HyperedgeKind]] = None,
                  tenant: Optional[str] = None) -> TitleMatcher:
    return TitleMatcher(visible_hyperedges(snapshot, kinds, tenant))


def passive_activate(query_text: str, matcher: TitleMatcher) -> list[HyperedgeSummary]:
    """Summaries of matched hyperedges, deduplicated, in order of first occurrence."""
    seen: list[str] = []
    for match in matcher.find(query_text):
        if match.hyperedge_id not in seen:
            seen.append(match.hyperedge_id)
    return [matcher.summaries[he_id] for he_id in seen]


# --- Sparse scoring ---

@dataclass(frozen=True)
class CorpusStats:
    doc_count: int
    avgdl: float
    doc_freq: dict[str, int]

    def idf(self, term: str) -> float:
        n = self.doc_freq.get(term, 0)
        return math.log(1.0 + (self.doc_count - n + 0.5) / (n + 0.5))


def bm25_score(query_terms: list[str], document_terms: list[str], corpus_stats: CorpusStats,
               k1: float = 1.2, b: float = 0.75) -> float:
    """Okapi BM25 with the non-negative idf variant log(1 + (N - n + 0.5) / (n + 0.5))."""
    if not document_terms:
        return 0.0
    counts: dict[str, int] = {}
    for term in document_terms:
        counts[term] = counts.get(term, 0) + 1
    length_ratio = len(document_terms) / corpus_stats.avgdl if corpus_stats.avgdl else 1.0
    score = 0.0
    for term in query_terms:
        tf = counts.get(term, 0)
        if tf == 0:
            continue
        score += corpus_stats.idf(term) * tf * (k1 + 1) / (tf + k1 * (1 - b + b * length_ratio))
    return score


class OkapiIndex(BM25):
    """rank_bm25 bookkeeping (doc frequencies, lengths) with the non-negative idf and our scorer."""

    def __init__(self, corpus: list[list[str]], k1: float = 1.2, b: float = 0.75):
        self.k1 = k1
        self.b = b
        self.documents = corpus
        super().__init__(corpus)

    def _calc_idf(self, nd):
        self.nd = dict(nd)
        for word, freq in nd.items():
            self.idf[word] = math.log(1.0 + (self.corpus_size - freq + 0.5) / (freq + 0.5))

    def stats(self) -> CorpusStats:
        return CorpusStats(doc_count=self.corpus_size, avgdl=self.avgdl, doc_freq=self.nd)

    def get_scores(self, query):
        stats = self.stats()
        return np.array([bm25_score(query, doc, stats, self.k1, self.b) for doc in self.documents])

    def get_batch_scores(self, query, doc_ids):
        stats = self.stats()
        return [bm25_score(query, self.documents[i], stats, self.k1, self.b) for i in doc_ids]


def normalize_sparse(raw: np.ndarray) -> np.ndarray:
    """Per-query min-max to [0, 1]; an all-equal pool maps to 0.5."""
    if raw.size == 0:
        return raw
    low, high = float(raw.min()), float(raw.max())
    if high - low == 0:
        return np.full(raw.shape, 0.5)
    return (raw - low) / (high - low)


# --- Active retrieval ---

class HyperedgeIndex:
    """Sparse and dense views over the summary corpus of one snapshot; immutable once built."""

    def __init__(self, hyperedges: list[Hyperedge], embedder: Embedder, config: RetrievalConfig):
        self.config = config
        self.embedder = embedder
        self.summaries = [he.summary() for he in sorted(hyperedges, key=lambda h: h.id)]
        self.texts = [s.summary_text() for s in self.summaries]
        self.tokens = [tokenize(t) for t in self.texts]
        self.sparse = OkapiIndex(self.tokens, config.k1, config.b) if self.summaries else None
        self._dense: Optional[np.ndarray] = None
        self._dense_error: Optional[str] = None

    def dense_matrix(self) -> np.ndarray:
        if self._dense is None:
            self._dense = self.embedder.embed_many(self.texts)
        return self._dense

    def retrieve(self, request: SearchRequest, config: Optional[RetrievalConfig] = None) -> RetrievalResult:
        config = config or self.config
        if not self.summaries:
            return RetrievalResult()
        query_terms = tokenize(request.text)
        if config.k1 != self.config.k1 or config.b != self.config.b:
            sparse_raw = OkapiIndex(self.tokens, config.k1, config.b).get_scores(query_terms)
        else:
            sparse_raw = self.sparse.get_scores(query_terms)
        sparse = normalize_sparse(sparse_raw)

        degraded, warning = False, None
        try:
            query_vector = self.embedder.embed(request.text)
            dense = np.clip(self.dense_matrix() @ query_vector, 0.0, 1.0)
            composite = config.alpha * dense + (1 - config.alpha) * sparse
        except EmbeddingError as e:
            logger.warning(f"Active Retrieval (Session: {request.session_id}): embedder failed, sparse only: {e}")
            degraded, warning = True, f"dense embedder unavailable ({e.message}); ranking is sparse-only"
            dense = np.zeros(len(self.summaries))
            composite = sparse

        candidates = [
            RankedCandidate(
                summary=summary,
                dense_score=float(dense[i]),
                sparse_score_raw=float(sparse_raw[i]),
                sparse_score=float(sparse[i]),
                composite=float(min(1.0, max(0.0, composite[i]))),
            )
            for i, summary in enumerate(self.summaries)
        ]
        kept = [c for c in candidates if c.composite >= config.tau]
        kept.sort(key=lambda c: (-c.composite, c.summary.title))
        logger.info(f"Active Retrieval (Session: {request.session_id}): {len(kept)} of {len(candidates)} above tau={config.tau}")
        return RetrievalResult(candidates=kept[:config.top_k], degraded=degraded, warning=warning)


def active_retrieve(request: SearchRequest, config: RetrievalConfig, snapshot: OntologySnapshot,
                    embedder: Optional[Embedder] = None, kinds: Optional[Iterable[HyperedgeKind]] = None,
                    tenant: Optional[str] = None) -> list[RankedCandidate]:
    index = HyperedgeIndex(visible_hyperedges(snapshot, kinds, tenant), embedder or HashingEmbedder(), config)
    return index.retrieve(request, config).candidates


def read_details(snapshot: OntologySnapshot, hyperedge_id: str, audit: Optional[AuditHook] = None) -> HyperedgeDetails:
    """Lazy load of the full soft-axiom text; every read is audited."""
    he = snapshot.hyperedges.get(hyperedge_id)
    if he is None:
        raise UnknownEntity(f"Unknown hyperedge '{hyperedge_id}'")
    if he.lifecycle == Lifecycle.RETIRED:
        raise RetiredHyperedge(f"Hyperedge '{hyperedge_id}' is retired", {"hyperedge_id": hyperedge_id})
    details = HyperedgeDetails(
        id=he.id, title=he.title, semantic_details=he.semantic_details, attachments=list(he.attachments),
        related_hyperedges=list(he.related_hyperedges), member_nodes=list(he.member_nodes),
    )
    if audit is not None:
        audit("detail_read", {"hyperedge_id": he.id})
    return details


class Retriever:
    """Matcher and index cache for the current snapshot, shared by concurrent sessions."""

    def __init__(self, embedder: Optional[Embedder] = None, config: Optional[RetrievalConfig] = None):
        self.embedder = embedder or HashingEmbedder()
        self.config = config or RetrievalConfig()
        self._lock = threading.Lock()
        self._digest: Optional[str] = None
        self._matchers: dict[tuple, TitleMatcher] = {}
        self._indexes: dict[tuple, HyperedgeIndex] = {}

    @staticmethod
    def _key(kinds, tenant) -> tuple:
        kind_key = tuple(sorted(k.value for k in kinds)) if kinds is not None else None
        return (kind_key, tenant)

    def _cached(self, cache: dict, snapshot: OntologySnapshot, kinds, tenant, build: Callable[[], T]) -> T:
        digest = snapshot.digest()
        key = self._key(kinds, tenant)
        with self._lock:
            if digest != self._digest:
                # only the latest snapshot is cached; older entries are dropped together
                if self._digest is not None:
                    logger.info(f"Retrieval Cache: snapshot changed, dropping "
                                f"{len(self._matchers) + len(self._indexes)} entries")
                self._matchers.clear()
                self._indexes.clear()
                self._digest = digest
            if key not in cache:
                cache[key] = build()
            return cache[key]

    def matcher(self, snapshot: OntologySnapshot, kinds=None, tenant=None) -> TitleMatcher:
        return self._cached(self._matchers, snapshot, kinds, tenant,
                            lambda: build_matcher(snapshot, kinds, tenant))

    def index(self, snapshot: OntologySnapshot, kinds=None, tenant=None) -> HyperedgeIndex:
        return self._cached(self._indexes, snapshot, kinds, tenant,
                            lambda: HyperedgeIndex(visible_hyperedges(snapshot, kinds, tenant), self.embedder,
                                                   self.config))

    def cached_entries(self) -> int:
        with self._lock:
            return len(self._matchers) + len(self._indexes)

    def search(self, snapshot: OntologySnapshot, request: SearchRequest, kinds=None, tenant=None) -> RetrievalResult:
        return self.index(snapshot, kinds, tenant).retrieve(request)
