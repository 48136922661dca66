"""Inverted-index BM25 search with k-nearest-neighbour label propagation.

Each indexed article contributes three fields: abstract tokens, title
tokens, and the descriptors plus synonyms of its gold labels. Label scores
for a query are the normalized, similarity-weighted vote of its ``k`` most
similar indexed articles.
"""

from __future__ import annotations

import heapq
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ._binio import read_container, write_container
from .corpus import Article, LabelVocabulary
from .features import tokenize

logger = logging.getLogger(__name__)

FIELDS = ("abstract", "title", "label_text")
MAGIC = b"XMLTKBMI"
VERSION = 1


@dataclass
class KnnConfig:
    k: int = 40
    label_threshold: float = 0.24
    field_weights: dict = field(default_factory=lambda: {"abstract": 1.0, "title": 1.0, "label_text": 0.5})

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        unknown = set(self.field_weights) - set(FIELDS)
        if unknown:
            raise ValueError(f"unknown fields {sorted(unknown)}")
        if any(w < 0 for w in self.field_weights.values()):
            raise ValueError("field weights must be non-negative")
        if not any(w > 0 for w in self.field_weights.values()):
            raise ValueError("at least one field weight must be positive")


@dataclass
class NeighborScore:
    doc_id: str
    alpha: float
    beta: dict  # label -> 0/1 membership


class _FieldIndex:
    def __init__(self, postings: dict, lengths: np.ndarray):
        self.postings = postings  # term -> (doc indices int64, term freqs int64)
        self.lengths = lengths.astype(np.float64)
        self.avglen = float(self.lengths.mean()) if self.lengths.size else 0.0

    def df(self, term: str) -> int:
        p = self.postings.get(term)
        return 0 if p is None else int(p[0].size)


class Bm25Index:
    def __init__(self, ids: list, golds: list, fields: dict, k1: float = 1.2, b: float = 0.75):
        self.ids = list(ids)
        self.golds = [frozenset(g) for g in golds]
        self.fields = fields  # name -> _FieldIndex
        self.k1 = k1
        self.b = b
        self._pos = {d: i for i, d in enumerate(self.ids)}

    @property
    def n_docs(self) -> int:
        return len(self.ids)

    def doc_index(self, doc_id: str) -> int:
        return self._pos[doc_id]

    def idf(self, name: str, term: str) -> float:
        df = self.fields[name].df(term)
        n = self.n_docs
        return math.log(1.0 + (n - df + 0.5) / (df + 0.5))

    def field_scores(self, name: str, query_terms) -> np.ndarray:
        """BM25 score of one field for every document."""
        fidx = self.fields[name]
        out = np.zeros(self.n_docs)
        if fidx.avglen <= 0:
            return out
        norm = self.k1 * (1.0 - self.b + self.b * fidx.lengths / fidx.avglen)
        for t in sorted(set(query_terms)):
            p = fidx.postings.get(t)
            if p is None:
                continue
            docs, tfs = p
            tf = tfs.astype(np.float64)
            out[docs] += self.idf(name, t) * tf * (self.k1 + 1.0) / (tf + norm[docs])
        return out

    def scores(self, query_terms, field_weights: dict) -> np.ndarray:
        total = np.zeros(self.n_docs)
        for name in FIELDS:
            w = field_weights.get(name, 0.0)
            if w:
                total += w * self.field_scores(name, query_terms)
        return total


def _label_tokens(codes, vocab: LabelVocabulary) -> list[str]:
    toks = []
    for c in sorted(codes):
        toks.extend(tokenize(vocab.label_text(c)))
    return toks


def build_index(articles: Sequence[Article], vocab: LabelVocabulary, k1: float = 1.2, b: float = 0.75) -> Bm25Index:
    missing = sorted({c for a in articles for c in a.gold_labels if c not in vocab or c == vocab.stop_label})
    if missing:
        raise ValueError(f"gold labels missing from vocabulary: {missing}")
    raw = {name: {} for name in FIELDS}
    lengths = {name: np.zeros(len(articles), dtype=np.int64) for name in FIELDS}
    for i, art in enumerate(articles):
        per_field = {
            "abstract": tokenize(art.abstract),
            "title": tokenize(art.title),
            "label_text": _label_tokens(art.gold_labels, vocab),
        }
        for name, toks in per_field.items():
            lengths[name][i] = len(toks)
            for t, tf in Counter(toks).items():
                raw[name].setdefault(t, ([], []))
                raw[name][t][0].append(i)
                raw[name][t][1].append(tf)
    fields = {}
    for name in FIELDS:
        postings = {t: (np.asarray(d, dtype=np.int64), np.asarray(f, dtype=np.int64))
                    for t, (d, f) in raw[name].items()}
        fields[name] = _FieldIndex(postings, lengths[name])
    return Bm25Index([a.id for a in articles], [a.gold_labels for a in articles], fields, k1, b)


def bm25_score(index: Bm25Index, query_tokens, doc_id: str, field_weights: dict | None = None) -> float:
    """Weighted BM25 score of a single document.

    Each distinct query term counts once.
    """
    fw = field_weights or KnnConfig().field_weights
    return float(index.scores(query_tokens, fw)[index.doc_index(doc_id)])


def top_k(scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top ``k`` positive-scoring documents, ties broken by lower index."""
    hits = np.flatnonzero(scores > 0)
    best = heapq.nsmallest(k, ((-scores[i], int(i)) for i in hits))
    return [(i, -s) for s, i in best]


def neighbours(index: Bm25Index, query: Article, cfg: KnnConfig, exclude_self: bool = False) -> list[NeighborScore]:
    q = tokenize(query.text)
    if not q:
        return []
    k = cfg.k
    pool = index.n_docs - (1 if exclude_self and query.id in index._pos else 0)
    if k > pool:
        logger.warning("k=%d exceeds the %d searchable documents; clamping", k, pool)
        k = pool
    s = index.scores(q, cfg.field_weights)
    if exclude_self and query.id in index._pos:
        s[index.doc_index(query.id)] = 0.0
    hits = top_k(s, k)
    if not hits:
        return []
    top = hits[0][1]
    return [NeighborScore(index.ids[i], sc / top, {c: 1.0 for c in index.golds[i]}) for i, sc in hits]


def aggregate(neigh: Sequence[NeighborScore]) -> dict:
    """Similarity-weighted label vote, divided by the total neighbour weight."""
    if not neigh:
        return {}
    total = sum(n.alpha for n in neigh)
    acc = {}
    for n in neigh:
        for c, beta in n.beta.items():
            acc[c] = acc.get(c, 0.0) + n.alpha * beta
    return {c: v / total for c, v in sorted(acc.items())}


def knn_labels(index: Bm25Index, query: Article, cfg: KnnConfig | None = None, exclude_self: bool = False) -> dict:
    cfg = cfg or KnnConfig()
    return aggregate(neighbours(index, query, cfg, exclude_self))


def predict(index: Bm25Index, query: Article, cfg: KnnConfig | None = None) -> set:
    cfg = cfg or KnnConfig()
    return {c for c, s in knn_labels(index, query, cfg).items() if s > cfg.label_threshold}


def save(index: Bm25Index, path) -> None:
    meta = {"ids": index.ids, "golds": [sorted(g) for g in index.golds],
            "k1": index.k1, "b": index.b, "fields": {}}
    arrays = {}
    for name in FIELDS:
        fidx = index.fields[name]
        terms = sorted(fidx.postings)
        sizes = np.array([fidx.postings[t][0].size for t in terms], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
        empty = np.zeros(0, dtype=np.int64)
        arrays[f"{name}.offsets"] = offsets
        arrays[f"{name}.docs"] = np.concatenate([fidx.postings[t][0] for t in terms]) if terms else empty
        arrays[f"{name}.tfs"] = np.concatenate([fidx.postings[t][1] for t in terms]) if terms else empty
        arrays[f"{name}.lengths"] = fidx.lengths.astype(np.int64)
        meta["fields"][name] = terms
    write_container(path, MAGIC, VERSION, meta, arrays)


def load(path) -> Bm25Index:
    meta, arrays = read_container(path, MAGIC, VERSION)
    fields = {}
    for name in FIELDS:
        terms = meta["fields"][name]
        off = arrays[f"{name}.offsets"]
        docs, tfs = arrays[f"{name}.docs"], arrays[f"{name}.tfs"]
        postings = {t: (docs[off[j]:off[j + 1]], tfs[off[j]:off[j + 1]]) for j, t in enumerate(terms)}
        fields[name] = _FieldIndex(postings, arrays[f"{name}.lengths"])
    return Bm25Index(meta["ids"], meta["golds"], fields, meta["k1"], meta["b"])
