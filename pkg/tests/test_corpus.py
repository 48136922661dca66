import json
import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xmltk import corpus
from xmltk.corpus import Article, CorpusError, STOP_CODE


def _write(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_articles_maps_fields(tmp_path):
    p = _write(tmp_path / "a.jsonl", ['{"id":"a1","title":"t","abstractText":"x","decsCodes":["D1"]}'])
    (a,) = corpus.load_articles(p)
    assert a == Article("a1", "t", "x", frozenset({"D1"}))


def test_missing_codes_gives_empty_gold(tmp_path):
    p = _write(tmp_path / "a.jsonl", ['{"id":"a1","title":"t","abstractText":"x"}'])
    assert corpus.load_articles(p)[0].gold_labels == frozenset()


def test_duplicate_id_rejected(tmp_path):
    p = _write(tmp_path / "a.jsonl", ['{"id":"a1","title":"t"}', '{"id":"a1","title":"u"}'])
    with pytest.raises(CorpusError, match="duplicate article id 'a1'"):
        corpus.load_articles(p)


def test_malformed_line_names_line_number(tmp_path):
    p = _write(tmp_path / "a.jsonl", ['{"id":"a1"}', "{not json"])
    with pytest.raises(CorpusError, match="line 2"):
        corpus.load_articles(p)


def test_load_vocabulary_row(tmp_path):
    p = _write(tmp_path / "v.tsv", ["D1\tadulto\tadult person|grown-up", "D2\tniño\t"])
    v = corpus.load_vocabulary(p)
    assert v["D1"].descriptor == "adulto"
    assert v["D1"].synonyms == ("adult person", "grown-up")
    assert v["D2"].synonyms == ()
    assert len(v) == 3
    assert v.codes[-1] == STOP_CODE == v.stop_label
    assert v.stop_index == 2


def test_empty_descriptor_warns(tmp_path, caplog):
    p = _write(tmp_path / "v.tsv", ["D9\t\t"])
    with caplog.at_level(logging.WARNING):
        v = corpus.load_vocabulary(p)
    assert v["D9"].descriptor == "D9"
    assert "empty descriptor" in caplog.text


def test_duplicate_code_rejected(tmp_path):
    p = _write(tmp_path / "v.tsv", ["D1\ta\t", "D1\tb\t"])
    with pytest.raises(CorpusError, match="duplicate label code"):
        corpus.load_vocabulary(p)


def test_count_frequencies(tiny_vocab, tiny_articles):
    v = corpus.count_frequencies(tiny_vocab, tiny_articles)
    assert v.frequency == {"D1": 1, "D2": 1, "D3": 2, STOP_CODE: 0}
    extra = tiny_articles + [Article("a4", "", "", frozenset({"D3"}))]
    assert corpus.count_frequencies(tiny_vocab, extra).frequency["D3"] == 3


def test_unused_label_has_zero_frequency(tiny_vocab):
    v = corpus.count_frequencies(tiny_vocab, [Article("x", "", "", frozenset({"D1"}))])
    assert v.frequency["D2"] == 0


def test_unknown_label_rejected(tiny_vocab):
    with pytest.raises(CorpusError, match="ZZ"):
        corpus.count_frequencies(tiny_vocab, [Article("x", "", "", frozenset({"ZZ"}))])


def test_mean_labels_matches_hand_count(tiny_articles):
    assert corpus.mean_labels_per_article(tiny_articles) == pytest.approx(4 / 3)


def test_split_95_5_repeatable():
    arts = [Article(f"a{i}", "", "", frozenset()) for i in range(100)]
    s1 = corpus.split(arts, 0.05, 7)
    s2 = corpus.split(arts, 0.05, 7)
    assert (len(s1.train), len(s1.holdout)) == (95, 5)
    assert [a.id for a in s1.holdout] == [a.id for a in s2.holdout]


def test_split_rounding_on_three():
    arts = [Article(f"a{i}", "", "", frozenset()) for i in range(3)]
    s = corpus.split(arts, 0.5, 0)
    assert (len(s.train), len(s.holdout)) == (2, 1)


def test_split_rejects_bad_fraction():
    arts = [Article(f"a{i}", "", "", frozenset()) for i in range(3)]
    for f in (0.0, 1.0, -0.1):
        with pytest.raises(CorpusError):
            corpus.split(arts, f, 0)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(2, 400), frac=st.floats(0.01, 0.99), seed=st.integers(0, 10**6))
def test_split_is_partition(n, frac, seed):
    arts = [Article(f"a{i}", "", "", frozenset()) for i in range(n)]
    s = corpus.split(arts, frac, seed)
    ids_t = {a.id for a in s.train}
    ids_h = {a.id for a in s.holdout}
    assert not ids_t & ids_h
    assert ids_t | ids_h == {a.id for a in arts}
    assert len(s.holdout) == corpus.holdout_size(n, frac)


def test_split_fraction_within_half_percent():
    arts = [Article(f"a{i}", "", "", frozenset()) for i in range(5000)]
    s = corpus.split(arts, 0.05, 3)
    assert abs(len(s.holdout) / 5000 - 0.05) <= 0.005


_text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=40)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(_text, _text, st.frozensets(st.sampled_from(["D1", "D2", "D3"]))), max_size=8))
def test_round_trip(tmp_path_factory, rows):
    arts = [Article(f"id{i}", t, a, g) for i, (t, a, g) in enumerate(rows)]
    p = tmp_path_factory.mktemp("rt") / "a.jsonl"
    corpus.save_articles(arts, p)
    assert corpus.load_articles(p) == arts


def test_vocabulary_round_trip(tmp_path, tiny_vocab):
    corpus.save_vocabulary(tiny_vocab, tmp_path / "v.tsv")
    back = corpus.load_vocabulary(tmp_path / "v.tsv")
    assert back.codes == tiny_vocab.codes
    assert [back[c] for c in back.codes[:-1]] == [tiny_vocab[c] for c in tiny_vocab.codes[:-1]]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.frozensets(st.sampled_from(["D1", "D2", "D3"])), max_size=30))
def test_frequency_matches_brute_force(tiny_vocab, golds):
    arts = [Article(f"a{i}", "", "", g) for i, g in enumerate(golds)]
    v = corpus.count_frequencies(tiny_vocab, arts)
    for c in ("D1", "D2", "D3"):
        assert v.frequency[c] == sum(1 for g in golds if c in g)


def test_article_json_uses_distribution_field_names():
    d = corpus.article_to_json(Article("a", "t", "x", frozenset({"B", "A"})))
    assert json.dumps(d, sort_keys=True) == '{"abstractText": "x", "decsCodes": ["A", "B"], "id": "a", "title": "t"}'
