"""Tokenization, n-grams, stopwords, and heuristic keyphrase extraction."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

# Tokens are maximal runs of letters/digits; underscore counts as a separator.
_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

# Token -> idf weight. Out-of-table tokens weigh 0.
IdfTable = Mapping[str, float]


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters.

    Punctuation (including apostrophes) is dropped entirely, so "man's"
    becomes ["man", "s"]. Empty input yields an empty list.
    """
    return _TOKEN_RE.findall(text.lower())


def ngrams(tokens: Sequence[str], n: int) -> Counter:
    """All contiguous n-token windows with multiplicity.

    There are max(0, len(tokens) - n + 1) of them.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def load_stopwords(path: Optional[str] = None) -> frozenset[str]:
    """Load the stopword list, one word per line.

    Without a path, returns the versioned 180-word English list shipped
    with the package.
    """
    if path is None:
        raw = resources.files("caprank.data").joinpath("stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    return frozenset(w for w in (line.strip() for line in raw.splitlines()) if w)


STOPWORDS = load_stopwords()


@dataclass(frozen=True)
class Keyphrase:
    """A salient content word or adjacent word pair extracted from a caption."""

    words: tuple[str, ...]  # 1 or 2 tokens, never stopwords
    salience: float


def extract_keyphrases(
    tokens: Sequence[str],
    idf: Optional[IdfTable] = None,
    m: int = 2,
    stopwords: Iterable[str] = STOPWORDS,
) -> list[Keyphrase]:
    """Top-m keyphrases standing in for a trained keyword extractor.

    Candidates are non-stopword unigrams plus bigrams of adjacent
    non-stopword tokens. Salience is the mean idf of the member tokens
    when an idf table is given, otherwise mean character length (a crude
    content-word proxy: function words are short). Ties break on earliest
    position, then fewest words, then lexicographic order, so the result
    is deterministic. Duplicated candidates keep their first occurrence.
    """
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    stop = stopwords if isinstance(stopwords, (set, frozenset)) else frozenset(stopwords)

    candidates: dict[tuple[str, ...], int] = {}
    for i, tok in enumerate(tokens):
        if tok in stop:
            continue
        candidates.setdefault((tok,), i)
        if i + 1 < len(tokens) and tokens[i + 1] not in stop:
            candidates.setdefault((tok, tokens[i + 1]), i)

    def salience(words: tuple[str, ...]) -> float:
        if idf is not None:
            return sum(idf.get(w, 0.0) for w in words) / len(words)
        return sum(len(w) for w in words) / len(words)

    ranked = sorted(
        candidates.items(),
        key=lambda item: (-salience(item[0]), item[1], len(item[0]), item[0]),
    )
    return [Keyphrase(words=words, salience=salience(words)) for words, _ in ranked[:m]]
