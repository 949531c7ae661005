"""Scikit-learn style estimator wrapping the full re-ranking pipeline.

VisualReranker is a stateless-in-spirit transformer: fit() resolves
resources (loads the embedding table filtered to the corpus vocabulary,
spawns the external adapter if one is configured) and transform() maps
(BeamSet, VisualContext) pairs to RerankResult values. Composing through
the estimator API keeps the re-ranker usable inside ordinary sklearn
pipelines and grid searches over its parameters.
"""

from __future__ import annotations

from typing import Optional, Sequence, Union

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus import BeamSet, RerankResult, VisualContext
from .embeddings import WordVectorTable, load_vectors
from .experts import (
    EXPERT_IDS,
    ExpertConfig,
    ExpertEngine,
    ScoreCache,
    SENTENCE_BUILTIN,
    SENTENCE_EXTERNAL,
    WORD,
)
from .external import ExternalExpertClient, spawn_external_expert
from .fusion import FusionConfig, rerank_beam
from .text import tokenize

Pair = tuple[BeamSet, VisualContext]


def check_pairs(X: Sequence[Pair]) -> list[Pair]:
    """Validate the (BeamSet, VisualContext) structure and id alignment."""
    pairs = list(X)
    for i, item in enumerate(pairs):
        if not (isinstance(item, tuple) and len(item) == 2):
            raise TypeError(f"X[{i}] must be a (BeamSet, VisualContext) tuple")
        beam, visual = item
        if not isinstance(beam, BeamSet) or not isinstance(visual, VisualContext):
            raise TypeError(f"X[{i}] must pair a BeamSet with a VisualContext")
        if beam.image_id != visual.image_id:
            raise ValueError(
                f"X[{i}] pairs image {beam.image_id!r} with context {visual.image_id!r}"
            )
    return pairs


def corpus_vocabulary(pairs: Sequence[Pair]) -> set[str]:
    """Every token occurring in captions or visual labels, for vocab filtering."""
    vocab: set[str] = set()
    for beam, visual in pairs:
        for candidate in beam.candidates:
            vocab.update(tokenize(candidate.text))
        for obj in visual.objects:
            vocab.update(tokenize(obj.label))
    return vocab


class VisualReranker(BaseEstimator, TransformerMixin):
    """Re-rank beam-search captions by relatedness to the visual context.

    Parameters
    ----------
    experts : sequence of str
        Enabled experts, a subset of {"word", "sentence_builtin",
        "sentence_external"}. May be empty only with include_prior=True.
    embeddings : str, WordVectorTable, or None
        Embedding source for the word and built-in sentence experts;
        a path is loaded at fit time, filtered to the corpus vocabulary.
    visual_slot : int
        Which confidence-ranked visual object to score against (1 = top).
    slot_max : bool
        Take the max fused score across all slots instead of one slot.
    include_prior : bool
        Multiply the decoder prior into the expert product.
    epsilon_floor : float
        Lower bound on every product factor, in (0, 1e-3].
    keyphrase_count : int
        Keyphrases extracted per caption for the word expert.
    prior_mode : str
        "beam_softmax" (needs logprobs) or "uniform".
    external_cmd : str or None
        Adapter command line for the external sentence expert.
    timeout_ms : int
        Per-request adapter timeout.
    cache_path : str or None
        JSONL score cache for external expert scores.
    """

    def __init__(
        self,
        experts: Sequence[str] = (WORD,),
        embeddings: Union[str, WordVectorTable, None] = None,
        visual_slot: int = 1,
        slot_max: bool = False,
        include_prior: bool = False,
        epsilon_floor: float = 1e-12,
        keyphrase_count: int = 2,
        prior_mode: str = "beam_softmax",
        external_cmd: Optional[str] = None,
        timeout_ms: int = 10_000,
        cache_path: Optional[str] = None,
    ):
        self.experts = experts
        self.embeddings = embeddings
        self.visual_slot = visual_slot
        self.slot_max = slot_max
        self.include_prior = include_prior
        self.epsilon_floor = epsilon_floor
        self.keyphrase_count = keyphrase_count
        self.prior_mode = prior_mode
        self.external_cmd = external_cmd
        self.timeout_ms = timeout_ms
        self.cache_path = cache_path

    def fit(self, X: Sequence[Pair], y=None) -> "VisualReranker":
        """Resolve resources against the corpus; X supplies the vocabulary."""
        pairs = check_pairs(X)
        for expert_id in self.experts:
            if expert_id not in EXPERT_IDS:
                raise ValueError(f"unknown expert {expert_id!r} (choose from {EXPERT_IDS})")

        self.fusion_config_ = FusionConfig(
            experts_enabled=tuple(self.experts),
            include_prior_factor=self.include_prior,
            epsilon_floor=self.epsilon_floor,
            visual_slot=self.visual_slot,
            slot_max=self.slot_max,
        )
        self.expert_config_ = ExpertConfig(
            keyphrase_count=self.keyphrase_count,
            prior_mode=self.prior_mode,
            external_command=self.external_cmd,
            timeout_ms=self.timeout_ms,
            cache_path=self.cache_path,
        )

        table = None
        needs_table = WORD in self.experts or SENTENCE_BUILTIN in self.experts
        if isinstance(self.embeddings, WordVectorTable):
            table = self.embeddings
        elif isinstance(self.embeddings, str):
            vocab = corpus_vocabulary(pairs) if pairs else None
            table = load_vectors(self.embeddings, vocab_filter=vocab)
        elif needs_table:
            raise ValueError("the word and sentence_builtin experts need embeddings")

        client: Optional[ExternalExpertClient] = None
        if SENTENCE_EXTERNAL in self.experts:
            if not self.external_cmd:
                raise ValueError("the sentence_external expert needs external_cmd")
            client = spawn_external_expert(self.external_cmd, timeout_ms=self.timeout_ms)
        cache = ScoreCache(self.cache_path) if self.cache_path else None

        self.table_ = table
        self.engine_ = ExpertEngine(self.expert_config_, table=table, client=client, cache=cache)
        self.engine_.require(self.experts)
        self.n_images_ = len(pairs)
        return self

    def transform(self, X: Sequence[Pair]) -> list[RerankResult]:
        """Re-rank every beam; results come back in input order."""
        check_is_fitted(self, "engine_")
        pairs = check_pairs(X)
        return [rerank_beam(beam, visual, self.engine_, self.fusion_config_) for beam, visual in pairs]

    def close(self) -> None:
        """Release the adapter process and cache handle, if any."""
        engine = getattr(self, "engine_", None)
        if engine is None:
            return
        if engine.client is not None:
            engine.client.close()
        if engine.cache is not None:
            engine.cache.close()

    def __enter__(self) -> "VisualReranker":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
