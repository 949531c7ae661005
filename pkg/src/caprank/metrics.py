"""Caption-quality metrics (corpus BLEU-1..4, ROUGE-L, CIDEr) and lexical
diversity statistics, computed over this package's own tokenizer output.

These are self-contained re-implementations of the standard definitions,
not bindings to the usual Java/COCO tooling, so absolute values are only
comparable within runs of this toolkit.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Optional, Sequence

log = logging.getLogger("caprank")

MAX_NGRAM = 4


@dataclass(frozen=True)
class EvalPair:
    image_id: str
    hypothesis: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.references:
            raise ValueError(f"image {self.image_id!r} has no references")


@dataclass(frozen=True)
class DiversityStats:
    voc: int  # corpus vocabulary size
    ttr: float  # mean per-caption type/token ratio
    uniq: float  # mean unique tokens per caption
    wpc: float  # mean tokens per caption


@dataclass(frozen=True)
class MetricReport:
    bleu: tuple[float, float, float, float]
    rouge_l: float
    cider: float
    diversity: DiversityStats
    n_images: int


def _ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_len(hyp_len: int, ref_lens: Sequence[int]) -> int:
    # ties go to the shorter reference
    return min(ref_lens, key=lambda r: (abs(r - hyp_len), r))


def corpus_bleu(
    pairs: Sequence[EvalPair], max_n: int = MAX_NGRAM, smooth: Optional[str] = None
) -> tuple[float, ...]:
    """Corpus-level BLEU-1..max_n.

    Clipped n-gram matches and totals are aggregated over the whole corpus;
    BLEU-n is the geometric mean of precisions 1..n times the brevity
    penalty exp(1 - r/c) for c < r, where r sums each pair's closest
    reference length. No smoothing by default: a zero precision zeroes
    every BLEU-n from that order up. smooth="add1" adds one to the match
    and total counts of every order above 1, for tiny corpora.
    """
    if not pairs:
        raise ValueError("corpus_bleu needs at least one pair")
    if smooth not in (None, "add1"):
        raise ValueError(f"unknown smoothing mode {smooth!r}")
    matches = [0] * max_n
    totals = [0] * max_n
    hyp_len_sum = 0
    ref_len_sum = 0
    for pair in pairs:
        hyp = pair.hypothesis
        hyp_len_sum += len(hyp)
        ref_len_sum += _closest_ref_len(len(hyp), [len(r) for r in pair.references])
        for n in range(1, max_n + 1):
            hyp_counts = _ngram_counts(hyp, n)
            if not hyp_counts:
                continue
            clip: Counter = Counter()
            for ref in pair.references:
                for gram, count in _ngram_counts(ref, n).items():
                    clip[gram] = max(clip[gram], count)
            matches[n - 1] += sum(min(count, clip[gram]) for gram, count in hyp_counts.items())
            totals[n - 1] += sum(hyp_counts.values())

    precisions = []
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if smooth == "add1" and n > 0:
            m, t = m + 1, t + 1
        precisions.append(m / t if t > 0 else 0.0)

    if hyp_len_sum == 0:
        return tuple(0.0 for _ in range(max_n))
    bp = 1.0 if hyp_len_sum >= ref_len_sum else math.exp(1.0 - ref_len_sum / hyp_len_sum)

    scores = []
    for n in range(1, max_n + 1):
        if any(p == 0.0 for p in precisions[:n]):
            scores.append(0.0)
            continue
        mean_log = sum(math.log(p) for p in precisions[:n]) / n
        scores.append(bp * math.exp(mean_log))
    return tuple(scores)


def _lcs_len(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(pairs: Sequence[EvalPair], beta: float = 1.2) -> float:
    """Mean over pairs of the best per-reference LCS F-score.

    For each reference: precision = LCS/|hyp|, recall = LCS/|ref|,
    F = (1 + beta^2) P R / (R + beta^2 P), 0 when the LCS is empty.
    """
    if not pairs:
        raise ValueError("rouge_l needs at least one pair")
    total = 0.0
    for pair in pairs:
        best = 0.0
        for ref in pair.references:
            lcs = _lcs_len(pair.hypothesis, ref)
            if lcs == 0:
                continue
            p = lcs / len(pair.hypothesis)
            r = lcs / len(ref)
            f = (1 + beta**2) * p * r / (r + beta**2 * p)
            best = max(best, f)
        total += best
    return total / len(pairs)


def cider(pairs: Sequence[EvalPair], max_n: int = MAX_NGRAM) -> float:
    """Consensus score: TF-IDF n-gram cosine against references, scaled by 10.

    IDF is log(|I| / df) where df counts the images whose references
    contain the n-gram, floored at 1. Per order n, the score is the mean
    over references of the cosine between hypothesis and reference TF-IDF
    vectors; the final value averages over orders and pairs, times 10.
    Duplicate captions inside one image's reference list do not change df.
    """
    if not pairs:
        raise ValueError("cider needs at least one pair")
    n_images = len(pairs)
    if n_images < 2:
        log.warning("cider over a single image is degenerate: every idf is log(1) = 0")

    df: list[dict] = [defaultdict(int) for _ in range(max_n)]
    for pair in pairs:
        for n in range(1, max_n + 1):
            grams = set()
            for ref in pair.references:
                grams.update(_ngram_counts(ref, n))
            for gram in grams:
                df[n - 1][gram] += 1

    def tfidf(tokens: Sequence[str], n: int) -> dict:
        return {
            gram: count * math.log(n_images / max(1, df[n - 1][gram]))
            for gram, count in _ngram_counts(tokens, n).items()
        }

    def cos(u: dict, v: dict) -> float:
        nu = math.sqrt(sum(x * x for x in u.values()))
        nv = math.sqrt(sum(x * x for x in v.values()))
        if nu == 0.0 or nv == 0.0:
            return 0.0
        dot = sum(x * v[g] for g, x in u.items() if g in v)
        return dot / (nu * nv)

    score_sum = 0.0
    for pair in pairs:
        per_n = []
        for n in range(1, max_n + 1):
            hyp_vec = tfidf(pair.hypothesis, n)
            sims = [cos(hyp_vec, tfidf(ref, n)) for ref in pair.references]
            per_n.append(sum(sims) / len(sims))
        score_sum += sum(per_n) / max_n
    return 10.0 * score_sum / len(pairs)


def diversity(hypotheses: Sequence[Sequence[str]]) -> DiversityStats:
    """Vocabulary, type/token ratio, and per-caption word statistics.

    ttr averages over non-empty captions only; uniq and wpc average over
    all captions. An all-empty corpus is an error.
    """
    if not hypotheses:
        raise ValueError("diversity needs at least one caption")
    vocab: set[str] = set()
    ttr_sum = 0.0
    ttr_count = 0
    uniq_sum = 0
    token_sum = 0
    for tokens in hypotheses:
        vocab.update(tokens)
        uniq_sum += len(set(tokens))
        token_sum += len(tokens)
        if tokens:
            ttr_sum += len(set(tokens)) / len(tokens)
            ttr_count += 1
    if ttr_count == 0:
        raise ValueError("every caption is empty")
    return DiversityStats(
        voc=len(vocab),
        ttr=ttr_sum / ttr_count,
        uniq=uniq_sum / len(hypotheses),
        wpc=token_sum / len(hypotheses),
    )


def metric_report(pairs: Sequence[EvalPair], bleu_smooth: Optional[str] = None) -> MetricReport:
    """All quality metrics plus hypothesis-side diversity in one record."""
    return MetricReport(
        bleu=tuple(corpus_bleu(pairs, smooth=bleu_smooth)),
        rouge_l=rouge_l(pairs),
        cider=cider(pairs),
        diversity=diversity([p.hypothesis for p in pairs]),
        n_images=len(pairs),
    )
