"""Retrieval: BM25 vs a hand-rolled oracle, exhaustive cosine, RRF fusion."""

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedforge.errors import DuplicateIdError
from fedforge.retrieval import (
    BM25_B,
    BM25_K1,
    RRF_K,
    CorpusDoc,
    CorpusIndex,
    HashingEmbedder,
    StubWebSearch,
    build_default_index,
    make_tools,
    tokenize,
    web_search,
)


# -- independent oracles (no index structures, pure recomputation) ---------

def oracle_bm25(corpus: dict[str, str], query: str, k1=BM25_K1, b=BM25_B) -> dict[str, float]:
    docs = {doc_id: tokenize(body) for doc_id, body in corpus.items()}
    n = len(docs)
    avgdl = sum(len(t) for t in docs.values()) / n
    scores = {}
    for doc_id, tokens in docs.items():
        score = 0.0
        for term in tokenize(query):
            tf = tokens.count(term)
            if not tf:
                continue
            df = sum(1 for t in docs.values() if term in t)
            idf = math.log(1.0 + (n - df + 0.5) / (df + 0.5))
            score += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len(tokens) / avgdl))
        scores[doc_id] = score
    return scores


def oracle_cosine(index: CorpusIndex, query: str) -> list[tuple[float, str]]:
    qvec = index.embedder.embed(query)
    out = []
    for doc_id, doc in index.docs.items():
        dvec = index.embedder.embed(doc.body)
        out.append((sum(a * b for a, b in zip(qvec, dvec)), doc_id))
    return sorted(out, key=lambda p: (-p[0], p[1]))


def oracle_rrf(lists: list[list[str]], k=RRF_K) -> list[str]:
    scores: dict[str, float] = {}
    for ranked in lists:
        for i, doc_id in enumerate(ranked, 1):
            scores[doc_id] = scores.get(doc_id, 0.0) + 1.0 / (k + i)
    return [d for d, _ in sorted(scores.items(), key=lambda p: (-p[1], p[0]))]


def build_index(corpus: dict[str, str]) -> CorpusIndex:
    index = CorpusIndex()
    index.ingest([CorpusDoc(doc_id=i, title=i, body=b) for i, b in corpus.items()])
    return index


TINY = {
    "d1": "federated averaging",
    "d2": "continual learning replay",
    "d3": "federated continual distillation",
}


class TestIngest:
    def test_stats(self):
        index = build_index(TINY)
        assert len(index.docs) == 3
        assert index.avgdl == pytest.approx((2 + 3 + 3) / 3)

    def test_duplicate_id(self):
        index = build_index(TINY)
        with pytest.raises(DuplicateIdError):
            index.ingest([CorpusDoc(doc_id="d1", title="", body="x")])

    def test_empty_index_searches_empty(self):
        index = CorpusIndex()
        assert index.ingest([]).doc_count == 0
        assert index.bm25_search("anything", 5) == []
        assert index.vector_search("anything", 5) == []


class TestBM25:
    def test_tiny_corpus_matches_hand_computation(self):
        # Hand-derived with k1=1.2, b=0.75: d3 carries both query terms.
        index = build_index(TINY)
        hits = index.bm25_search("federated continual", 3)
        assert [h.doc_id for h in hits] == ["d3", "d1", "d2"]
        expected = oracle_bm25(TINY, "federated continual")
        for hit in hits:
            assert hit.score == pytest.approx(expected[hit.doc_id], abs=1e-12)

    def test_no_corpus_term(self):
        assert build_index(TINY).bm25_search("quantum", 5) == []

    def test_k_larger_than_corpus(self):
        hits = build_index(TINY).bm25_search("federated", 10)
        assert [h.rank for h in hits] == list(range(1, len(hits) + 1))

    def test_ten_doc_corpus_matches_oracle_to_1e9(self):
        rng = random.Random(7)
        vocab = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta"]
        corpus = {
            f"doc{i:02d}": " ".join(rng.choices(vocab, k=rng.randint(3, 30)))
            for i in range(10)
        }
        index = build_index(corpus)
        for query in ("alpha", "beta gamma", "delta delta epsilon", "theta alpha zeta"):
            expected = oracle_bm25(corpus, query)
            hits = index.bm25_search(query, 10)
            for hit in hits:
                assert abs(hit.score - expected[hit.doc_id]) < 1e-9
            ranked = sorted((d for d in corpus if expected[d] > 0),
                            key=lambda d: (-expected[d], d))
            assert [h.doc_id for h in hits] == ranked

    @settings(max_examples=60, deadline=None)
    @given(st.data())
    def test_single_term_monotonicity(self, data):
        # Adding one more occurrence of the query term to a doc never lowers
        # that doc's score for the single-term query.
        vocab = ["a", "b", "c", "d"]
        n_docs = data.draw(st.integers(2, 6))
        bodies = [
            " ".join(data.draw(st.lists(st.sampled_from(vocab), min_size=1, max_size=12)))
            for _ in range(n_docs)
        ]
        target = data.draw(st.integers(0, n_docs - 1))
        term = data.draw(st.sampled_from(vocab))
        corpus = {f"d{i}": body for i, body in enumerate(bodies)}
        grown = dict(corpus)
        grown[f"d{target}"] = corpus[f"d{target}"] + " " + term
        before = oracle_bm25(corpus, term).get(f"d{target}", 0.0)
        after_index = build_index(grown)
        after = after_index.bm25_score(term, f"d{target}")
        assert after >= before - 1e-12


class TestVectorSearch:
    def test_identical_text_scores_one(self):
        index = build_index(TINY)
        hits = index.vector_search(TINY["d2"], 3)
        assert hits[0].doc_id == "d2"
        assert hits[0].score == pytest.approx(1.0, abs=1e-9)

    def test_matches_exhaustive_cosine_scan(self):
        rng = random.Random(11)
        vocab = [f"w{i}" for i in range(40)]
        corpus = {
            f"d{i:02d}": " ".join(rng.choices(vocab, k=rng.randint(2, 25)))
            for i in range(64)
        }
        index = build_index(corpus)
        for query in ("w1 w2 w3", "w10", "w5 w5 w20 w39"):
            expected = oracle_cosine(index, query)
            hits = index.vector_search(query, 64)
            assert [h.doc_id for h in hits] == [d for _, d in expected]
            for hit, (score, _) in zip(hits, expected):
                assert hit.score == pytest.approx(score, abs=1e-12)

    def test_embedder_unit_norm(self):
        embedder = HashingEmbedder()
        for text in ("a", "a b c", "federated learning systems", "!!!"):
            vec = embedder.embed(text)
            norm = math.sqrt(sum(x * x for x in vec))
            assert norm == pytest.approx(1.0, abs=1e-6)


class TestHybrid:
    def test_doc_topping_both_stages_is_fused_first(self):
        index = build_index(TINY)
        hits = index.hybrid_retrieve("federated continual distillation", 3, 3)
        assert hits[0].doc_id == "d3"
        assert hits[0].stage == "reranked"

    def test_candidate_pool_is_union(self):
        index = build_index({
            "a1": "apple apple apple",
            "a2": "apple banana",
            "b1": "cherry cherry",
            "b2": "cherry date",
        })
        bm = index.bm25_search("apple", 2)
        vec = index.vector_search("cherry date", 2)
        fused = index.fuse([bm, vec])
        assert len({h.doc_id for h in fused}) == len({h.doc_id for h in bm}
                                                     | {h.doc_id for h in vec})

    def test_fused_order_equals_direct_rrf(self):
        rng = random.Random(3)
        vocab = ["red", "green", "blue", "cyan", "teal"]
        corpus = {f"d{i}": " ".join(rng.choices(vocab, k=rng.randint(2, 9)))
                  for i in range(5)}
        index = build_index(corpus)
        query = "red blue"
        bm = index.bm25_search(query, 5)
        vec = index.vector_search(query, 5)
        expected = oracle_rrf([[h.doc_id for h in bm], [h.doc_id for h in vec]])
        fused = index.fuse([bm, vec])
        assert [h.doc_id for h in fused] == expected

    @settings(max_examples=40, deadline=None)
    @given(st.permutations(["d1", "d2", "d3", "d4"]), st.permutations(["d2", "d4", "d5"]))
    def test_fusion_stable_under_input_permutation(self, list_a, list_b):
        index = CorpusIndex()
        from fedforge.retrieval import RankedHit

        hits_a = [RankedHit(d, 1.0 / (i + 1), "bm25", i + 1) for i, d in enumerate(list_a)]
        hits_b = [RankedHit(d, 1.0 / (i + 1), "vector", i + 1) for i, d in enumerate(list_b)]
        order1 = [h.doc_id for h in index.fuse([hits_a, hits_b])]
        order2 = [h.doc_id for h in index.fuse([hits_b, hits_a])]
        assert order1 == order2

    def test_rank_and_score_invariants_hold_everywhere(self):
        index = build_default_index()
        for query in ("federated averaging", "continual forgetting replay", "rerank"):
            for hits in (index.bm25_search(query, 5), index.vector_search(query, 5),
                         index.hybrid_retrieve(query, 10, 5)):
                assert [h.rank for h in hits] == list(range(1, len(hits) + 1))
                assert all(a.score >= b.score for a, b in zip(hits, hits[1:]))


class TestShippedCorpus:
    def test_loads_and_searches(self):
        index = build_default_index()
        assert len(index.docs) >= 10
        hits = index.hybrid_retrieve("federated averaging communication", 10, 5)
        assert hits and hits[0].stage == "reranked"

    def test_search_docs_tool_returns_titles(self):
        tools = make_tools(build_default_index())
        out = tools["search_docs"]({"query": "catastrophic forgetting continual"})
        assert "forgetting" in out.lower()


class TestWebSearch:
    def test_stub_fixture(self):
        provider = StubWebSearch({"fedprox": "FedProx handles stragglers."})
        assert web_search(provider, "fedprox") == "FedProx handles stragglers."

    def test_transport_error_degrades_to_sentinel(self):
        class Broken:
            def search(self, query, context):
                raise ConnectionError("down")

        assert web_search(Broken(), "anything") == "search-unavailable"

    def test_tool_wiring(self):
        tools = make_tools(build_default_index(), StubWebSearch({"q": "hit"}))
        assert tools["web_search"]({"query": "q", "context": ""}) == "hit"
