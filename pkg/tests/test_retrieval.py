# tests/test_retrieval.py - Passive title activation and active hybrid retrieval

import math
import random

import httpx
import numpy as np
import pytest

from src.core.embedding import HashingEmbedder, HttpEmbedder, tokenize
from src.core.errors import EmbeddingError, RetiredHyperedge, UnknownEntity
from src.core.ontology import mutate
from src.core.retrieval import (
    HyperedgeIndex,
    OkapiIndex,
    Retriever,
    TitleMatcher,
    active_retrieve,
    bm25_score,
    build_matcher,
    normalize_sparse,
    passive_activate,
    read_details,
    visible_hyperedges,
)
from src.models.ontology import Change, Hyperedge, HyperedgeKind, Lifecycle
from src.models.retrieval import RetrievalConfig, SearchRequest
from tests.conftest import CUSTOMER, mini_hyperedges


class FailingEmbedder:
    dimension = 8

    def embed(self, text):
        raise EmbeddingError("provider down")

    def embed_many(self, texts):
        raise EmbeddingError("provider down")


# --- Passive activation ---

def naive_matches(text: str, hyperedges: list[Hyperedge]) -> set[tuple[int, int, str]]:
    folded = text.casefold()
    found = set()
    for he in hyperedges:
        if he.lifecycle != Lifecycle.APPROVED:
            continue
        for form in he.surface_forms():
            pattern = form.casefold()
            for i in range(len(folded) - len(pattern) + 1):
                if folded[i:i + len(pattern)] != pattern:
                    continue
                j = i + len(pattern)
                glued_left = i > 0 and (folded[i - 1].isalnum() or folded[i - 1] == "_") and (
                    pattern[0].isalnum() or pattern[0] == "_")
                glued_right = j < len(folded) and (folded[j].isalnum() or folded[j] == "_") and (
                    pattern[-1].isalnum() or pattern[-1] == "_")
                if not glued_left and not glued_right:
                    found.add((i, j, he.id))
    return found


def test_matcher_agrees_with_naive_scan():
    hyperedges = mini_hyperedges()
    matcher = TitleMatcher(hyperedges)
    words = ["customer", "order", "book", "books", "procurement", "trace", "regional", "backlog",
             "supplier", "scorecard", "the", "x", "Order", "BOOK", "_"]
    separators = [" ", " ", ", ", "-", "", "?", "\n"]
    rng = random.Random(3)
    for _ in range(200):
        text = "".join(rng.choice(words) + rng.choice(separators) for _ in range(rng.randrange(1, 12)))
        got = {(m.start, m.end, m.hyperedge_id) for m in matcher.find(text)}
        assert got == naive_matches(text, hyperedges), text


def test_matches_are_case_insensitive_and_whole_token():
    matcher = TitleMatcher(mini_hyperedges())
    assert [m.hyperedge_id for m in matcher.find("What is in the ORDER BOOK today?")] == ["hyperedge:order_book"]
    assert matcher.find("reorder bookings") == []


def test_drafts_are_never_matched():
    matcher = TitleMatcher(mini_hyperedges())
    assert matcher.find("supplier scorecard") == []


def test_passive_activate_dedupes_in_order():
    matcher = TitleMatcher(mini_hyperedges())
    summaries = passive_activate("Procurement trace of the order book, then the order book again", matcher)
    assert [s.id for s in summaries] == ["hyperedge:procurement_trace", "hyperedge:order_book"]
    assert not hasattr(summaries[0], "semantic_details")


def test_matcher_respects_tenant_and_kind(mini_store):
    snapshot = mini_store.snapshot
    assert build_matcher(snapshot).find("regional backlog") == []
    assert build_matcher(snapshot, tenant="north").find("regional backlog")
    declarative = build_matcher(snapshot, kinds=[HyperedgeKind.DECLARATIVE])
    assert declarative.find("procurement trace") == []


def test_empty_matcher():
    assert TitleMatcher([]).find("anything") == []


# --- Sparse scoring ---

def hand_bm25(query, doc, corpus, k1=1.2, b=0.75):
    n_docs = len(corpus)
    avgdl = sum(len(d) for d in corpus) / n_docs
    score = 0.0
    for term in query:
        tf = doc.count(term)
        if not tf:
            continue
        df = sum(1 for d in corpus if term in d)
        idf = math.log(1 + (n_docs - df + 0.5) / (df + 0.5))
        score += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(doc) / avgdl))
    return score


def test_bm25_matches_formula():
    corpus = [tokenize(t) for t in [
        "contract fulfillment blocked by missing delivery request",
        "delivery request approval chain",
        "supplier rating and purchase order",
        "delivery delivery delivery",
    ]]
    index = OkapiIndex(corpus)
    for query in (["delivery"], ["delivery", "request"], ["supplier", "missing"], ["absent"]):
        scores = index.get_scores(query)
        for doc, score in zip(corpus, scores):
            assert score == pytest.approx(hand_bm25(query, doc, corpus), abs=1e-9)
            assert bm25_score(query, doc, index.stats()) == pytest.approx(score, abs=1e-9)


def test_common_term_idf_stays_positive():
    corpus = [["delivery"], ["delivery"], ["delivery", "order"]]
    assert OkapiIndex(corpus).get_scores(["delivery"]).min() > 0


def test_normalize_sparse():
    assert normalize_sparse(np.array([2.0, 4.0, 3.0])).tolist() == [0.0, 1.0, 0.5]
    assert normalize_sparse(np.array([1.5, 1.5])).tolist() == [0.5, 0.5]
    assert normalize_sparse(np.array([])).size == 0


# --- Active retrieval ---

def approved(snapshot):
    return visible_hyperedges(snapshot)


def test_alpha_zero_is_pure_sparse(mini_store):
    index = HyperedgeIndex(approved(mini_store.snapshot), HashingEmbedder(), RetrievalConfig(alpha=0.0, tau=0.0))
    result = index.retrieve(SearchRequest(text="sales order procurement receipts"))
    assert result.candidates
    for c in result.candidates:
        assert c.composite == pytest.approx(c.sparse_score)


def test_alpha_one_is_pure_dense(mini_store):
    index = HyperedgeIndex(approved(mini_store.snapshot), HashingEmbedder(), RetrievalConfig(alpha=1.0, tau=0.0))
    result = index.retrieve(SearchRequest(text="customers and their sales orders"))
    for c in result.candidates:
        assert c.composite == pytest.approx(c.dense_score)
    assert result.candidates[0].summary.id == "hyperedge:order_book"


def test_threshold_and_ordering(mini_store):
    config = RetrievalConfig(alpha=0.5, tau=0.35)
    candidates = active_retrieve(SearchRequest(text="how is a sales order sourced and received"), config,
                                 mini_store.snapshot)
    assert candidates[0].summary.id == "hyperedge:procurement_trace"
    assert all(c.composite >= 0.35 for c in candidates)
    composites = [c.composite for c in candidates]
    assert composites == sorted(composites, reverse=True)


def test_top_k_caps_results(mini_store):
    config = RetrievalConfig(tau=0.0, top_k=1)
    assert len(active_retrieve(SearchRequest(text="orders"), config, mini_store.snapshot)) == 1


def test_embedder_failure_degrades_to_sparse(mini_store):
    index = HyperedgeIndex(approved(mini_store.snapshot), FailingEmbedder(), RetrievalConfig(tau=0.0))
    result = index.retrieve(SearchRequest(text="procurement trace"))
    assert result.degraded
    assert "sparse-only" in result.warning
    assert all(c.dense_score == 0.0 for c in result.candidates)


def test_no_visible_hyperedges():
    index = HyperedgeIndex([], HashingEmbedder(), RetrievalConfig())
    assert index.retrieve(SearchRequest(text="anything")).candidates == []


def test_retriever_caches_per_snapshot(mini_store):
    retriever = Retriever()
    first = retriever.index(mini_store.snapshot)
    assert retriever.index(mini_store.snapshot) is first
    mutate(mini_store, Change(op="update", entity="hyperedge", entity_id="hyperedge:order_book",
                              payload={"description": "Customer order lines."}))
    assert retriever.index(mini_store.snapshot) is not first


def test_retriever_keeps_only_the_current_snapshot(mini_store):
    retriever = Retriever()
    for round_no in range(5):
        retriever.matcher(mini_store.snapshot)
        retriever.index(mini_store.snapshot)
        retriever.index(mini_store.snapshot, tenant="north")
        assert retriever.cached_entries() == 3
        mutate(mini_store, Change(op="update", entity="hyperedge", entity_id="hyperedge:order_book",
                                  payload={"description": f"Customer order lines, revision {round_no}."}))
    retriever.matcher(mini_store.snapshot)
    assert retriever.cached_entries() == 1


# --- Detail loading ---

def test_read_details_is_audited(mini_store):
    events = []
    details = read_details(mini_store.snapshot, "hyperedge:procurement_trace", lambda kind, data: events.append(
        (kind, data)))
    assert "case-folded so_ref" in details.semantic_details
    assert events == [("detail_read", {"hyperedge_id": "hyperedge:procurement_trace"})]


def test_read_details_unknown(mini_store):
    with pytest.raises(UnknownEntity):
        read_details(mini_store.snapshot, "hyperedge:ghost")


def test_read_details_retired(mini_store):
    mutate(mini_store, Change(op="retire", entity="hyperedge", entity_id="hyperedge:order_book"))
    with pytest.raises(RetiredHyperedge):
        read_details(mini_store.snapshot, "hyperedge:order_book")
    assert CUSTOMER not in {m for he in visible_hyperedges(mini_store.snapshot) for m in he.member_nodes}


# --- Embedder ---

def test_hashing_embedder_is_unit_and_order_invariant():
    embedder = HashingEmbedder(64)
    a, b = embedder.embed("order book customer"), embedder.embed("customer book order")
    assert np.allclose(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert embedder.embed("").tolist()[0] == 1.0


def http_embedder(body) -> HttpEmbedder:
    transport = httpx.MockTransport(lambda request: httpx.Response(200, json=body))
    return HttpEmbedder("http://embed.test/v1/embeddings", 3, 5.0, transport=transport)


def test_http_embedder_reads_openai_style_replies():
    matrix = http_embedder({"data": [{"embedding": [3.0, 0.0, 4.0]}]}).embed_many(["a"])
    assert matrix.tolist() == [[0.6, 0.0, 0.8]]


@pytest.mark.parametrize("body", [
    {"data": [{"vector": [1.0, 0.0, 0.0]}]},
    {"data": [{"embedding": [1.0, 0.0]}, {"embedding": [1.0, 0.0, 0.0]}]},
    {"embeddings": [["x", "y", "z"]]},
    {"data": [None]},
])
def test_http_embedder_malformed_body_is_an_embedding_error(body):
    with pytest.raises(EmbeddingError):
        http_embedder(body).embed_many(["a", "b"])
