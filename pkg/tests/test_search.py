import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmltk import search
from xmltk.corpus import Article, LabelEntry, LabelVocabulary
from xmltk.features import tokenize
from xmltk.search import KnnConfig, NeighborScore

K1, B = 1.2, 0.75


def brute_bm25(docs_fields, query, weights):
    """Dense re-evaluation of the weighted per-field BM25 sum, one document at a time."""
    n = len(docs_fields)
    out = []
    for d in range(n):
        total = 0.0
        for name, w in weights.items():
            lens = [len(df[name]) for df in docs_fields]
            avg = sum(lens) / n
            if avg == 0:
                continue
            for t in set(query):
                df = sum(1 for x in docs_fields if t in x[name])
                tf = docs_fields[d][name].count(t)
                if tf == 0:
                    continue
                idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
                total += w * idf * tf * (K1 + 1) / (tf + K1 * (1 - B + B * lens[d] / avg))
        out.append(total)
    return out


@pytest.fixture
def hand_corpus(tiny_vocab):
    arts = [
        Article("d1", "Adult care", "adult adult patients in care homes", frozenset({"D1"})),
        Article("d2", "Child care", "care of the child at home", frozenset({"D2"})),
        Article("d3", "Hospital", "hospital beds and adult wards", frozenset({"D1", "D3"})),
    ]
    return arts, search.build_index(arts, tiny_vocab)


def _fields(arts, vocab):
    return [{"abstract": tokenize(a.abstract), "title": tokenize(a.title),
             "label_text": [t for c in sorted(a.gold_labels) for t in tokenize(vocab.label_text(c))]}
            for a in arts]


def test_label_text_field(tiny_vocab):
    idx = search.build_index([Article("x", "", "", frozenset({"D1"}))], tiny_vocab)
    assert set(idx.fields["label_text"].postings) == {"adulto", "adult"}


def test_absent_term_has_no_postings(hand_corpus):
    _, idx = hand_corpus
    assert "zebra" not in idx.fields["abstract"].postings
    assert idx.fields["abstract"].df("zebra") == 0


def test_doc_lengths_equal_hand_counts(hand_corpus):
    _, idx = hand_corpus
    assert idx.fields["abstract"].lengths.tolist() == [6, 6, 5]
    assert idx.fields["title"].lengths.tolist() == [2, 2, 1]
    assert idx.fields["label_text"].lengths.tolist() == [2, 3, 3]
    assert idx.fields["abstract"].avglen == pytest.approx(17 / 3, abs=1e-9)


def test_postings_sorted(hand_corpus):
    _, idx = hand_corpus
    for f in idx.fields.values():
        for docs, _ in f.postings.values():
            assert np.all(np.diff(docs) > 0)


@pytest.mark.parametrize("query", ["adult care", "child home hospital", "adult adult beds", "zebra", "adulto kid"])
def test_bm25_matches_formula(hand_corpus, tiny_vocab, query):
    arts, idx = hand_corpus
    w = KnnConfig().field_weights
    want = brute_bm25(_fields(arts, tiny_vocab), tokenize(query), w)
    for a, s in zip(arts, want):
        assert search.bm25_score(idx, tokenize(query), a.id, w) == pytest.approx(s, abs=1e-9)


def test_single_doc_hand_value():
    v = LabelVocabulary([LabelEntry("X", "x", ())])
    idx = search.build_index([Article("only", "", "aa aa bb", frozenset())], v)
    idf = math.log(1 + 0.5 / 1.5)
    # tf 2, length equals average length
    want = idf * 2 * (K1 + 1) / (2 + K1)
    assert search.bm25_score(idx, ["aa"], "only", {"abstract": 1.0}) == pytest.approx(want, abs=1e-12)
    assert search.bm25_score(idx, ["cc"], "only", {"abstract": 1.0}) == 0.0


def test_title_weight_is_linear(hand_corpus):
    _, idx = hand_corpus
    q = tokenize("adult care")
    t1 = search.bm25_score(idx, q, "d1", {"title": 1.0})
    t2 = search.bm25_score(idx, q, "d1", {"title": 2.0})
    both = search.bm25_score(idx, q, "d1", {"title": 2.0, "abstract": 1.0})
    assert t2 == pytest.approx(2 * t1, abs=1e-12)
    assert both - search.bm25_score(idx, q, "d1", {"title": 1.0, "abstract": 1.0}) == pytest.approx(t1, abs=1e-12)


def test_aggregation_two_neighbours():
    neigh = [NeighborScore("a", 1.0, {"D1": 1.0}), NeighborScore("b", 0.5, {"D1": 1.0, "D2": 1.0})]
    s = search.aggregate(neigh)
    assert s["D1"] == 1.0
    assert s["D2"] == 0.5 / 1.5
    assert "D3" not in s


def test_aggregation_matches_direct_sum(hand_corpus):
    arts, idx = hand_corpus
    cfg = KnnConfig(k=3)
    q = Article("q", "adult", "care of adult patients", frozenset())
    neigh = search.neighbours(idx, q, cfg)
    total = sum(n.alpha for n in neigh)
    got = search.knn_labels(idx, q, cfg)
    for c in ("D1", "D2", "D3"):
        direct = sum(n.alpha * n.beta.get(c, 0.0) for n in neigh) / total
        assert got.get(c, 0.0) == direct
    assert neigh[0].alpha == 1.0


def test_defaults_and_validation():
    cfg = KnnConfig()
    assert (cfg.k, cfg.label_threshold) == (40, 0.24)
    with pytest.raises(ValueError):
        KnnConfig(k=0)
    with pytest.raises(ValueError):
        KnnConfig(field_weights={"body": 1.0})


def test_threshold_rules(hand_corpus):
    _, idx = hand_corpus
    q = Article("q", "adult", "adult hospital", frozenset())
    scores = search.knn_labels(idx, q, KnnConfig(k=3))
    assert all(0.0 <= v <= 1.0 for v in scores.values())
    assert search.predict(idx, q, KnnConfig(k=3, label_threshold=1.01)) == set()
    prev = set()
    for t in (0.9, 0.5, 0.24, 0.1, 0.0):
        cur = search.predict(idx, q, KnnConfig(k=3, label_threshold=t))
        assert prev <= cur
        prev = cur
    assert scores["D1"] > 0.24 and "D1" in search.predict(idx, q, KnnConfig(k=3))


def test_unknown_gold_label_rejected(tiny_vocab):
    with pytest.raises(ValueError, match="ZZ"):
        search.build_index([Article("x", "", "", frozenset({"ZZ"}))], tiny_vocab)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), max_size=40), st.integers(1, 50))
def test_heap_top_k_equals_sort(values, k):
    s = np.array(values)
    order = sorted((i for i in range(len(values)) if values[i] > 0), key=lambda i: (-values[i], i))[:k]
    assert [i for i, _ in search.top_k(s, k)] == order


_vocab5 = LabelVocabulary([LabelEntry(f"L{i}", f"lab{i}", ()) for i in range(5)])


@st.composite
def corpora(draw):
    n = draw(st.integers(2, 8))
    words = [f"w{i}" for i in range(12)]
    docs = []
    for i in range(n):
        toks = draw(st.lists(st.sampled_from(words), min_size=1, max_size=10))
        docs.append(Article(f"doc{i}", "", " ".join(toks) + f" uniq{i}",
                            draw(st.frozensets(st.sampled_from(_vocab5.codes[:-1]), max_size=3))))
    return docs


@settings(max_examples=60, deadline=None)
@given(corpora(), st.integers(1, 10))
def test_knn_score_properties(docs, k):
    idx = search.build_index(docs, _vocab5)
    cfg = KnnConfig(k=k)
    for q in docs:
        neigh = search.neighbours(idx, q, cfg)
        scores = search.aggregate(neigh)
        for c, v in scores.items():
            assert 0.0 <= v <= 1.0 + 1e-12
            every = all(c in idx.golds[idx.doc_index(n.doc_id)] for n in neigh)
            assert (abs(v - 1.0) <= 1e-12) == every


@settings(max_examples=60, deadline=None)
@given(corpora())
def test_self_query_ranks_self_first(docs):
    idx = search.build_index(docs, _vocab5)
    texts = Counter(a.text for a in docs)
    for q in docs:
        if texts[q.text] > 1:
            continue
        assert search.neighbours(idx, q, KnnConfig(k=1))[0].doc_id == q.id


@settings(max_examples=40, deadline=None)
@given(corpora(), st.lists(st.sampled_from([f"w{i}" for i in range(14)]), max_size=6))
def test_index_matches_brute_force(docs, query):
    idx = search.build_index(docs, _vocab5)
    w = KnnConfig().field_weights
    want = brute_bm25(_fields(docs, _vocab5), query, w)
    np.testing.assert_allclose(idx.scores(query, w), want, rtol=0, atol=1e-9)


def test_save_load_round_trip(tmp_path, hand_corpus):
    arts, idx = hand_corpus
    search.save(idx, tmp_path / "i.idx")
    back = search.load(tmp_path / "i.idx")
    q = Article("q", "adult", "care of adult patients", frozenset())
    assert search.knn_labels(back, q, KnnConfig(k=3)) == search.knn_labels(idx, q, KnnConfig(k=3))
    search.save(back, tmp_path / "j.idx")
    assert (tmp_path / "i.idx").read_bytes() == (tmp_path / "j.idx").read_bytes()


def test_k_larger_than_corpus_is_clamped(hand_corpus, caplog):
    _, idx = hand_corpus
    q = Article("q", "", "adult", frozenset())
    assert len(search.neighbours(idx, q, KnnConfig(k=40))) <= 3
    assert "clamping" in caplog.text
