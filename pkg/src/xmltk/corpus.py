"""Article collections, label vocabularies and dataset splits."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

STOP_CODE = "__STOP__"


class CorpusError(ValueError):
    pass


@dataclass(frozen=True)
class Article:
    id: str
    title: str
    abstract: str
    gold_labels: frozenset = field(default_factory=frozenset)

    @property
    def text(self) -> str:
        return f"{self.title} {self.abstract}"


@dataclass(frozen=True)
class LabelEntry:
    code: str
    descriptor: str
    synonyms: tuple = ()


class LabelVocabulary:
    """Ordered label table. The stop label always occupies the last index.

    Frequencies are zero until :func:`count_frequencies` fills them in.
    """

    def __init__(self, entries: Sequence[LabelEntry], frequency: dict | None = None):
        codes = [e.code for e in entries]
        if len(set(codes)) != len(codes):
            raise CorpusError("duplicate label codes in vocabulary")
        if STOP_CODE in codes:
            raise CorpusError(f"reserved code {STOP_CODE!r} used by a vocabulary entry")
        self.entries = list(entries) + [LabelEntry(STOP_CODE, "STOP", ())]
        self.index = {e.code: i for i, e in enumerate(self.entries)}
        self.frequency = {e.code: 0 for e in self.entries}
        if frequency:
            for code, n in frequency.items():
                if code not in self.index:
                    raise CorpusError(f"frequency given for unknown code {code!r}")
                self.frequency[code] = int(n)
        self.frequency[STOP_CODE] = 0

    @property
    def stop_label(self) -> str:
        return STOP_CODE

    @property
    def stop_index(self) -> int:
        return len(self.entries) - 1

    @property
    def codes(self) -> list[str]:
        return [e.code for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, code) -> bool:
        return code in self.index

    def __getitem__(self, code: str) -> LabelEntry:
        return self.entries[self.index[code]]

    def label_text(self, code: str) -> str:
        e = self[code]
        return " ".join([e.descriptor, *e.synonyms])

    def with_frequency(self, frequency: dict) -> "LabelVocabulary":
        return LabelVocabulary(self.entries[:-1], frequency)


@dataclass(frozen=True)
class DatasetSplit:
    train: list
    holdout: list
    seed: int


def _article_from_json(obj: dict, lineno: int) -> Article:
    try:
        art_id = obj["id"]
        title = obj.get("title") or ""
        abstract = obj.get("abstractText") or ""
    except (KeyError, AttributeError) as exc:
        raise CorpusError(f"line {lineno}: missing field {exc}") from None
    if not isinstance(art_id, str) or not art_id:
        raise CorpusError(f"line {lineno}: id must be a nonempty string")
    codes = obj.get("decsCodes") or []
    if not isinstance(codes, list):
        raise CorpusError(f"line {lineno}: decsCodes must be a list")
    return Article(art_id, title, abstract, frozenset(str(c) for c in codes))


def load_articles(path, format: str = "jsonl") -> list[Article]:
    if format != "jsonl":
        raise CorpusError(f"unsupported article format {format!r}")
    articles = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: malformed JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise CorpusError(f"line {lineno}: expected a JSON object")
            art = _article_from_json(obj, lineno)
            if art.id in seen:
                raise CorpusError(f"duplicate article id {art.id!r} (line {lineno})")
            seen.add(art.id)
            articles.append(art)
    return articles


def article_to_json(article: Article) -> dict:
    return {
        "id": article.id,
        "title": article.title,
        "abstractText": article.abstract,
        "decsCodes": sorted(article.gold_labels),
    }


def save_articles(articles: Iterable[Article], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for art in articles:
            fh.write(json.dumps(article_to_json(art), ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def load_vocabulary(path) -> LabelVocabulary:
    entries = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            code = cols[0].strip()
            if not code:
                raise CorpusError(f"line {lineno}: empty label code")
            if code in seen:
                raise CorpusError(f"duplicate label code {code!r} (line {lineno})")
            seen.add(code)
            descriptor = cols[1].strip() if len(cols) > 1 else ""
            if not descriptor:
                logger.warning("label %s has an empty descriptor; using the code", code)
                descriptor = code
            synonyms = ()
            if len(cols) > 2 and cols[2].strip():
                synonyms = tuple(s.strip() for s in cols[2].split("|") if s.strip())
            entries.append(LabelEntry(code, descriptor, synonyms))
    return LabelVocabulary(entries)


def save_vocabulary(vocab: LabelVocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in vocab.entries[:-1]:
            fh.write(f"{e.code}\t{e.descriptor}\t{'|'.join(e.synonyms)}\n")


def count_frequencies(vocab: LabelVocabulary, articles: Iterable[Article]) -> LabelVocabulary:
    counts = {c: 0 for c in vocab.codes}
    unknown = set()
    for art in articles:
        for code in art.gold_labels:
            if code not in counts or code == STOP_CODE:
                unknown.add(code)
            else:
                counts[code] += 1
    if unknown:
        raise CorpusError(f"labels missing from vocabulary: {sorted(unknown)}")
    del counts[STOP_CODE]
    return vocab.with_frequency(counts)


def mean_labels_per_article(articles: Sequence[Article]) -> float:
    if not articles:
        return 0.0
    return sum(len(a.gold_labels) for a in articles) / len(articles)


def holdout_size(n: int, fraction: float) -> int:
    return min(max(1, math.floor(fraction * n)), n - 1)


def split(articles: Sequence[Article], holdout_fraction: float, seed: int) -> DatasetSplit:
    if not 0.0 < holdout_fraction < 1.0:
        raise CorpusError(f"holdout fraction must lie in (0, 1), got {holdout_fraction}")
    if len(articles) < 2:
        raise CorpusError("need at least two articles to split")
    order = list(range(len(articles)))
    random.Random(seed).shuffle(order)
    n_hold = holdout_size(len(articles), holdout_fraction)
    hold_idx = set(order[:n_hold])
    # keep the original collection order on both sides
    train = [a for i, a in enumerate(articles) if i not in hold_idx]
    holdout = [a for i, a in enumerate(articles) if i in hold_idx]
    return DatasetSplit(train, holdout, seed)
