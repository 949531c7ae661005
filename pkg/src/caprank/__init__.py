"""Visual re-ranking of beam-search captions, plus caption quality metrics."""

from .corpus import (
    BeamSet,
    CaptionCandidate,
    DataError,
    ReferenceSet,
    RerankEntry,
    RerankResult,
    VisualContext,
    VisualObject,
    join_corpus,
    read_beams,
    read_references,
    read_rerank_results,
    read_visual,
    write_rerank_results,
)
from .embeddings import WordVectorTable, cosine, load_table, load_vectors, phrase_vector, save_table
from .experts import (
    ExpertConfig,
    ExpertEngine,
    ScoreCache,
    belief_revision,
    compute_prior,
    sentence_builtin_score,
    word_expert_score,
)
from .external import AdapterError, ExternalExpertClient, spawn_external_expert
from .fusion import FusionConfig, bin_probability_changes, fuse, normalize, rank_order, rerank_beam
from .metrics import (
    DiversityStats,
    EvalPair,
    MetricReport,
    cider,
    corpus_bleu,
    diversity,
    metric_report,
    rouge_l,
)
from .reranker import VisualReranker
from .text import Keyphrase, extract_keyphrases, load_stopwords, ngrams, tokenize

__version__ = "0.1.0"

__all__ = [
    "AdapterError",
    "BeamSet",
    "CaptionCandidate",
    "DataError",
    "DiversityStats",
    "EvalPair",
    "ExpertConfig",
    "ExpertEngine",
    "ExternalExpertClient",
    "FusionConfig",
    "Keyphrase",
    "MetricReport",
    "ReferenceSet",
    "RerankEntry",
    "RerankResult",
    "ScoreCache",
    "VisualContext",
    "VisualObject",
    "VisualReranker",
    "WordVectorTable",
    "belief_revision",
    "bin_probability_changes",
    "cider",
    "compute_prior",
    "corpus_bleu",
    "cosine",
    "diversity",
    "extract_keyphrases",
    "fuse",
    "join_corpus",
    "load_stopwords",
    "load_table",
    "load_vectors",
    "metric_report",
    "ngrams",
    "normalize",
    "phrase_vector",
    "rank_order",
    "read_beams",
    "read_references",
    "read_rerank_results",
    "read_visual",
    "rerank_beam",
    "rouge_l",
    "save_table",
    "sentence_builtin_score",
    "spawn_external_expert",
    "tokenize",
    "word_expert_score",
    "write_rerank_results",
]
