"""Tokenization and tf-idf sparse features."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Article

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


class FeatureError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit.

    Tokens shorter than two characters are dropped.
    """
    if not text:
        return []
    return [t for t in _TOKEN_RE.findall(text.lower()) if len(t) >= 2]


def ngrams(tokens: Sequence[str], order: int = 1) -> list[str]:
    out = list(tokens)
    for n in range(2, order + 1):
        out.extend(" ".join(tokens[i:i + n]) for i in range(len(tokens) - n + 1))
    return out


def article_terms(article: Article, include_title: bool = True, ngram_order: int = 1) -> list[str]:
    text = article.text if include_title else article.abstract
    return ngrams(tokenize(text), ngram_order)


class SparseVector:
    """Sorted (index, weight) pairs with no stored zeros."""

    __slots__ = ("indices", "weights")

    def __init__(self, indices=(), weights=()):
        idx = np.asarray(indices, dtype=np.int64)
        w = np.asarray(weights, dtype=np.float64)
        if idx.shape != w.shape:
            raise FeatureError("indices and weights differ in length")
        order = np.argsort(idx, kind="stable")
        idx, w = idx[order], w[order]
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise FeatureError("duplicate indices in sparse vector")
        keep = w != 0.0
        self.indices = idx[keep]
        self.weights = w[keep]

    @classmethod
    def from_dict(cls, d: dict) -> "SparseVector":
        items = sorted(d.items())
        return cls([k for k, _ in items], [v for _, v in items])

    def to_dict(self) -> dict:
        return dict(zip(self.indices.tolist(), self.weights.tolist()))

    def __len__(self) -> int:
        return int(self.indices.size)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseVector):
            return NotImplemented
        return np.array_equal(self.indices, other.indices) and np.array_equal(self.weights, other.weights)

    def __repr__(self) -> str:
        return f"SparseVector({self.to_dict()})"

    def norm(self) -> float:
        return float(np.sqrt(np.dot(self.weights, self.weights)))

    def dot(self, other: "SparseVector") -> float:
        common, ia, ib = np.intersect1d(self.indices, other.indices, assume_unique=True, return_indices=True)
        if common.size == 0:
            return 0.0
        return float(np.dot(self.weights[ia], other.weights[ib]))

    def dot_dense(self, dense: np.ndarray) -> float:
        return float(np.dot(dense[self.indices], self.weights))


def to_csr(vectors: Sequence[SparseVector], dim: int) -> sp.csr_matrix:
    indptr = np.zeros(len(vectors) + 1, dtype=np.int64)
    for i, v in enumerate(vectors):
        indptr[i + 1] = indptr[i] + len(v)
    indices = np.concatenate([v.indices for v in vectors]) if vectors else np.zeros(0, np.int64)
    data = np.concatenate([v.weights for v in vectors]) if vectors else np.zeros(0)
    return sp.csr_matrix((data, indices, indptr), shape=(len(vectors), dim))


@dataclass
class TermVocabulary:
    terms: dict  # term -> (index, document_frequency)
    total_documents: int
    include_title: bool = True
    ngram_order: int = 1

    def __len__(self) -> int:
        return len(self.terms)

    def __contains__(self, term) -> bool:
        return term in self.terms

    def index_of(self, term: str) -> int | None:
        entry = self.terms.get(term)
        return None if entry is None else entry[0]

    def df(self, term: str) -> int:
        return self.terms[term][1]

    def idf(self, term: str) -> float:
        return math.log((1 + self.total_documents) / (1 + self.terms[term][1])) + 1.0

    def idf_array(self) -> np.ndarray:
        out = np.empty(len(self.terms))
        n = self.total_documents
        for _, (i, df) in self.terms.items():
            out[i] = math.log((1 + n) / (1 + df)) + 1.0
        return out

    def ordered_terms(self) -> list[str]:
        out = [""] * len(self.terms)
        for t, (i, _) in self.terms.items():
            out[i] = t
        return out

    def terms_of(self, article: Article) -> list[str]:
        return article_terms(article, self.include_title, self.ngram_order)

    def save_tsv(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"#total_documents\t{self.total_documents}\n")
            fh.write(f"#include_title\t{int(self.include_title)}\n")
            fh.write(f"#ngram_order\t{self.ngram_order}\n")
            for t in self.ordered_terms():
                i, df = self.terms[t]
                fh.write(f"{t}\t{i}\t{df}\n")

    @classmethod
    def load_tsv(cls, path) -> "TermVocabulary":
        meta = {}
        terms = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if line.startswith("#"):
                    k, v = line[1:].split("\t")
                    meta[k] = int(v)
                elif line:
                    t, i, df = line.split("\t")
                    terms[t] = (int(i), int(df))
        return cls(terms, meta["total_documents"], bool(meta.get("include_title", 1)), meta.get("ngram_order", 1))


def build_term_vocabulary(
    articles: Sequence[Article],
    min_df: int = 1,
    max_df_ratio: float = 1.0,
    include_title: bool = True,
    ngram_order: int = 1,
) -> TermVocabulary:
    if not articles:
        raise FeatureError("cannot build a term vocabulary from zero articles")
    df = Counter()
    for art in articles:
        df.update(set(article_terms(art, include_title, ngram_order)))
    n = len(articles)
    kept = [(t, c) for t, c in df.items() if c >= min_df and c / n <= max_df_ratio]
    if not kept:
        raise FeatureError("every term was filtered out by the document-frequency limits")
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    terms = {t: (i, c) for i, (t, c) in enumerate(kept)}
    return TermVocabulary(terms, n, include_title, ngram_order)


def tfidf(article: Article, vocab: TermVocabulary, normalize: bool = True) -> SparseVector:
    counts = Counter(t for t in vocab.terms_of(article) if t in vocab.terms)
    if not counts:
        return SparseVector()
    pairs = sorted((vocab.terms[t][0], tf * vocab.idf(t)) for t, tf in counts.items())
    idx = [i for i, _ in pairs]
    w = np.asarray([x for _, x in pairs])
    if normalize:
        w = w / np.sqrt(np.dot(w, w))
    return SparseVector(idx, w)


def tfidf_matrix(articles: Iterable[Article], vocab: TermVocabulary) -> sp.csr_matrix:
    return to_csr([tfidf(a, vocab) for a in articles], len(vocab))
