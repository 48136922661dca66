import numpy as np
import pytest

from xmltk.corpus import Article, LabelEntry, LabelVocabulary, count_frequencies


@pytest.fixture(scope="session")
def tiny_vocab():
    return LabelVocabulary([
        LabelEntry("D1", "adulto", ("adult",)),
        LabelEntry("D2", "niño", ("child", "kid")),
        LabelEntry("D3", "hospital", ()),
    ])


@pytest.fixture
def tiny_articles():
    return [
        Article("a1", "Adult patients", "adult care in the hospital ward", frozenset({"D1", "D3"})),
        Article("a2", "Child growth", "growth charts for child and kid", frozenset({"D2"})),
        Article("a3", "Hospital beds", "bed count per hospital", frozenset({"D3"})),
    ]


@pytest.fixture
def tiny_counted(tiny_vocab, tiny_articles):
    return count_frequencies(tiny_vocab, tiny_articles)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
