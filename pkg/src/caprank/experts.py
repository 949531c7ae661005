"""Relatedness experts: word-level belief revision, a built-in sentence
expert, the external-adapter bridge, and the score cache.

Every expert maps a (candidate caption, visual object) pair to a
probability-like score in [0, 1], deterministically.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Optional, Sequence

from .corpus import BeamSet, VisualObject
from .embeddings import WordVectorTable, phrase_vector, cosine, word_similarity
from .external import ExternalExpertClient
from .text import IdfTable, STOPWORDS, extract_keyphrases, tokenize

log = logging.getLogger("caprank")

WORD = "word"
SENTENCE_BUILTIN = "sentence_builtin"
SENTENCE_EXTERNAL = "sentence_external"
EXPERT_IDS = (WORD, SENTENCE_BUILTIN, SENTENCE_EXTERNAL)

CacheKey = tuple[str, str, int, int]  # (expert_id, image_id, candidate_index, visual_slot)


@dataclass(frozen=True)
class ExpertScore:
    expert_id: str
    image_id: str
    candidate_index: int
    visual_slot: int
    score: float  # in [0, 1]


@dataclass(frozen=True)
class ExpertConfig:
    keyphrase_count: int = 2
    prior_mode: str = "beam_softmax"  # or "uniform"
    external_command: Optional[str] = None
    timeout_ms: int = 10_000
    cache_path: Optional[str] = None

    def __post_init__(self):
        if self.keyphrase_count < 1:
            raise ValueError(f"keyphrase_count must be >= 1, got {self.keyphrase_count}")
        if self.prior_mode not in ("beam_softmax", "uniform"):
            raise ValueError(f"unknown prior_mode {self.prior_mode!r}")
        if self.timeout_ms <= 0:
            raise ValueError(f"timeout_ms must be > 0, got {self.timeout_ms}")


def belief_revision(prior: float, similarity: float, context_confidence: float) -> float:
    """Raise a hypothesis prior toward 1 in proportion to its similarity
    to confirmed visual evidence.

    Returns prior ** alpha with alpha = ((1 - sim) / (1 + sim)) ** (1 - conf).
    alpha lies in [0, 1], so the revised value never drops below the prior.
    Conventions: a zero prior stays 0 (a dead hypothesis cannot be revived);
    sim = 1 with a positive prior returns exactly 1 (full confirmation).
    """
    for name, value, lo, hi in (
        ("prior", prior, 0.0, 1.0),
        ("similarity", similarity, 0.0, 1.0),
        ("context_confidence", context_confidence, 0.0, 1.0),
    ):
        if not math.isfinite(value) or not (lo <= value <= hi):
            raise ValueError(f"{name} must be in [{lo}, {hi}] and finite, got {value}")
    if context_confidence == 0.0:
        raise ValueError("context_confidence must be in (0, 1], got 0.0")
    if prior == 0.0:
        return 0.0
    if similarity == 1.0:
        return 1.0
    alpha = ((1.0 - similarity) / (1.0 + similarity)) ** (1.0 - context_confidence)
    return prior ** alpha


def word_expert_score(
    caption_tokens: Sequence[str],
    visual: VisualObject,
    prior: float,
    table: WordVectorTable,
    keyphrase_count: int = 2,
    idf: Optional[IdfTable] = None,
) -> float:
    """Belief-revised relatedness between caption keyphrases and the object.

    sim is the max over the extracted keyphrases of their embedding
    similarity to the object label: one strongly related keyword is enough
    evidence. With no keyphrases (all-stopword caption) the prior passes
    through unrevised.
    """
    keyphrases = extract_keyphrases(caption_tokens, idf=idf, m=keyphrase_count)
    label_tokens = tokenize(visual.label)
    sim = 0.0
    for kp in keyphrases:
        sim = max(sim, word_similarity(kp.words, label_tokens, table))
    return belief_revision(prior, sim, visual.confidence)


def sentence_builtin_score(
    caption_tokens: Sequence[str],
    visual: VisualObject,
    table: WordVectorTable,
) -> float:
    """Whole-caption stand-in for a neural sentence expert.

    Cosine between the mean vector of the non-stopword caption tokens and
    the label's phrase vector, clamped to [0, 1]; 0 when either side is
    empty or fully out of vocabulary.
    """
    content = [t for t in caption_tokens if t not in STOPWORDS]
    vc = phrase_vector(content, table)
    vl = phrase_vector(tokenize(visual.label), table)
    if vc is None or vl is None:
        return 0.0
    return max(0.0, cosine(vc, vl))


def external_expert_score(caption: str, visual_label: str, client: ExternalExpertClient) -> float:
    """Score from the external adapter, clamped to [0, 1] with a warning."""
    score = client.score(caption, visual_label)
    if not (0.0 <= score <= 1.0):
        log.warning(
            "external adapter returned %r for (%r, %r); clamping to [0, 1]",
            score,
            caption,
            visual_label,
        )
        score = max(0.0, min(1.0, score))
    return score


def compute_prior(beam: BeamSet, mode: str = "beam_softmax") -> list[float]:
    """Per-candidate hypothesis priors.

    beam_softmax: softmax over decoder log-probabilities (sums to 1).
    uniform: 1/n each, for beams shipped without scores.
    """
    n = len(beam.candidates)
    if mode == "uniform":
        return [1.0 / n] * n
    if mode != "beam_softmax":
        raise ValueError(f"unknown prior mode {mode!r}")
    if not beam.has_logprobs():
        raise ValueError(
            f"beam {beam.image_id!r} has no logprobs; use prior mode 'uniform'"
        )
    logprobs = [c.logprob for c in beam.candidates]
    peak = max(logprobs)
    weights = [math.exp(lp - peak) for lp in logprobs]
    total = sum(weights)
    return [w / total for w in weights]


class ScoreCache:
    """Append-only JSONL persistence of expert scores, keyed by the full
    (expert, image, candidate, slot) tuple so ablation runs can reuse
    expensive external scores. Last write wins; corrupt lines are skipped
    with a warning.
    """

    def __init__(self, path: str):
        self.path = path
        self._scores: dict[CacheKey, float] = {}
        self._fh = None
        if os.path.exists(path):
            self._load()

    def _load(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    key = (
                        str(rec["expert"]),
                        str(rec["image_id"]),
                        int(rec["candidate_index"]),
                        int(rec["visual_slot"]),
                    )
                    self._scores[key] = float(rec["score"])
                except (ValueError, TypeError, KeyError) as exc:
                    log.warning("skipping corrupt cache line %s:%d (%s)", self.path, lineno, exc)

    def get(self, key: CacheKey) -> Optional[float]:
        return self._scores.get(key)

    def put(self, key: CacheKey, score: float) -> None:
        if self._fh is None:
            self._fh = open(self.path, "a", encoding="utf-8")
        expert, image_id, candidate_index, visual_slot = key
        self._fh.write(
            json.dumps(
                {
                    "expert": expert,
                    "image_id": image_id,
                    "candidate_index": candidate_index,
                    "visual_slot": visual_slot,
                    "score": score,
                },
                ensure_ascii=False,
                separators=(",", ":"),
            )
            + "\n"
        )
        self._fh.flush()
        self._scores[key] = score

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __len__(self) -> int:
        return len(self._scores)


class ExpertEngine:
    """Computes per-candidate scores for the enabled experts over one beam.

    The word and built-in sentence experts are pure functions of the
    embedding table; the external expert goes through the adapter client,
    consulting the cache first.
    """

    def __init__(
        self,
        config: ExpertConfig,
        table: Optional[WordVectorTable] = None,
        client: Optional[ExternalExpertClient] = None,
        cache: Optional[ScoreCache] = None,
    ):
        self.config = config
        self.table = table
        self.client = client
        self.cache = cache

    def require(self, expert_ids: Sequence[str]) -> None:
        """Fail fast if an enabled expert is missing its backing resource."""
        for expert_id in expert_ids:
            if expert_id in (WORD, SENTENCE_BUILTIN) and self.table is None:
                raise ValueError(f"expert {expert_id!r} needs an embedding table (--embeddings)")
            if expert_id == SENTENCE_EXTERNAL and self.client is None:
                raise ValueError(f"expert {expert_id!r} needs an adapter (--external-cmd)")
            if expert_id not in EXPERT_IDS:
                raise ValueError(f"unknown expert {expert_id!r}")

    def beam_scores(
        self, beam: BeamSet, visual: VisualObject, expert_ids: Sequence[str]
    ) -> dict[str, list[float]]:
        self.require(expert_ids)
        scores: dict[str, list[float]] = {}
        if WORD in expert_ids:
            priors = compute_prior(beam, self.config.prior_mode)
            scores[WORD] = [
                word_expert_score(
                    tokenize(c.text),
                    visual,
                    priors[i],
                    self.table,
                    keyphrase_count=self.config.keyphrase_count,
                )
                for i, c in enumerate(beam.candidates)
            ]
        if SENTENCE_BUILTIN in expert_ids:
            scores[SENTENCE_BUILTIN] = [
                sentence_builtin_score(tokenize(c.text), visual, self.table)
                for c in beam.candidates
            ]
        if SENTENCE_EXTERNAL in expert_ids:
            scores[SENTENCE_EXTERNAL] = [
                self._external(beam.image_id, i, c.text, visual)
                for i, c in enumerate(beam.candidates)
            ]
        return scores

    def _external(self, image_id: str, candidate_index: int, caption: str, visual: VisualObject) -> float:
        key = (SENTENCE_EXTERNAL, image_id, candidate_index, visual.slot)
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                return hit
        score = external_expert_score(caption, visual.label, self.client)
        if self.cache is not None:
            self.cache.put(key, score)
        return score
