"""Synthetic labelled corpora with recoverable label signatures.

Each label owns a disjoint block of signature terms. An article draws 1-5
labels from a Zipf popularity law and emits 30-80 tokens, each one a
signature term of one of its labels (probability 0.8) or a shared noise
term.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

from .corpus import Article, LabelEntry, LabelVocabulary

_SYLLABLES = [c + v for c, v in product("bcdfghjklmnprstvz", "aeiou")]


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    n_articles: int = 5000
    n_labels: int = 200
    terms_per_label: int = 10
    seed: int = 13
    n_dev: int = 500
    n_noise_terms: int = 300
    zipf_exponent: float = 1.1
    min_labels: int = 1
    max_labels: int = 5
    min_tokens: int = 30
    max_tokens: int = 80
    signature_prob: float = 0.8
    term_budget: int = 100_000


def make_term(i: int) -> str:
    """Distinct pronounceable word for every non-negative integer."""
    n = len(_SYLLABLES)
    parts = [_SYLLABLES[i % n]]
    i //= n
    while i:
        parts.append(_SYLLABLES[i % n])
        i //= n
    return "".join(reversed(parts))


@dataclass
class SynthCorpus:
    train: list
    dev: list
    vocab: LabelVocabulary
    signatures: dict  # label code -> list of signature terms
    noise_terms: list


def label_code(j: int) -> str:
    return f"L{j:04d}"


def generate(cfg: SynthConfig | None = None) -> SynthCorpus:
    cfg = cfg or SynthConfig()
    n_sig = cfg.n_labels * cfg.terms_per_label
    if n_sig + cfg.n_noise_terms > cfg.term_budget:
        raise SynthError(f"{cfg.n_labels} labels x {cfg.terms_per_label} terms plus {cfg.n_noise_terms} noise "
                         f"terms exceed the term budget of {cfg.term_budget}")
    if cfg.n_labels < cfg.max_labels:
        raise SynthError("need at least max_labels labels")
    rng = np.random.default_rng(cfg.seed)
    # shuffle the word pool so block membership is not visible from spelling
    words = [make_term(i) for i in rng.permutation(n_sig + cfg.n_noise_terms)]
    signatures = {label_code(j): words[j * cfg.terms_per_label:(j + 1) * cfg.terms_per_label]
                  for j in range(cfg.n_labels)}
    noise = words[n_sig:]
    codes = list(signatures)
    entries = [LabelEntry(c, s[0], tuple(s[1:3])) for c, s in signatures.items()]
    popularity = np.arange(1, cfg.n_labels + 1, dtype=np.float64) ** -cfg.zipf_exponent
    popularity /= popularity.sum()

    def article(aid: str) -> Article:
        k = int(rng.integers(cfg.min_labels, cfg.max_labels + 1))
        labels = rng.choice(cfg.n_labels, size=k, replace=False, p=popularity)
        n_tok = int(rng.integers(cfg.min_tokens, cfg.max_tokens + 1))
        toks = []
        for _ in range(n_tok):
            if rng.random() < cfg.signature_prob:
                sig = signatures[codes[labels[rng.integers(k)]]]
                toks.append(sig[rng.integers(len(sig))])
            else:
                toks.append(noise[rng.integers(len(noise))])
        n_title = max(3, n_tok // 8)
        return Article(aid, " ".join(toks[:n_title]), " ".join(toks[n_title:]),
                       frozenset(codes[j] for j in labels))

    train = [article(f"syn{i:06d}") for i in range(cfg.n_articles)]
    dev = [article(f"dev{i:06d}") for i in range(cfg.n_dev)]
    return SynthCorpus(train, dev, LabelVocabulary(entries), signatures, noise)


def recover_signatures(articles: Sequence[Article], min_df: int = 3) -> dict:
    """Attribute each term to the labels shared by every article containing it.

    Terms seen in fewer than ``min_df`` articles, or whose articles share no
    label or more than one, are left unattributed.
    """
    from .features import tokenize

    shared = {}
    df = defaultdict(int)
    for art in articles:
        for t in set(tokenize(art.text)):
            df[t] += 1
            shared[t] = set(art.gold_labels) if t not in shared else shared[t] & art.gold_labels
    out = defaultdict(set)
    for t, labs in shared.items():
        if df[t] >= min_df and len(labs) == 1:
            out[next(iter(labs))].add(t)
    return dict(out)
