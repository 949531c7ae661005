"""Product-of-experts fusion, beam re-ranking, and probability-change bins.

Experts are combined by multiplying their per-candidate scores. Picking
the argmax needs no normalization, but normalized scores are kept anyway:
the per-candidate probability change (new minus original distribution) is
what the reporting layer bins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .corpus import BeamSet, RerankEntry, RerankResult, VisualContext
from .experts import ExpertEngine, compute_prior

log = logging.getLogger("caprank")

DEFAULT_BIN_EDGES = (0.0, 0.4, 0.8)


@dataclass(frozen=True)
class FusionConfig:
    experts_enabled: tuple[str, ...] = ("word",)
    include_prior_factor: bool = False
    epsilon_floor: float = 1e-12
    visual_slot: int = 1
    slot_max: bool = False  # max fused score over all slots instead of one slot
    tie_break: str = "beam_order"

    def __post_init__(self):
        if not self.experts_enabled and not self.include_prior_factor:
            raise ValueError("no experts enabled and no prior factor: nothing to rank by")
        if not (0.0 < self.epsilon_floor <= 1e-3):
            raise ValueError(f"epsilon_floor must be in (0, 1e-3], got {self.epsilon_floor}")
        if self.visual_slot < 1:
            raise ValueError(f"visual_slot must be >= 1, got {self.visual_slot}")
        if self.tie_break != "beam_order":
            raise ValueError(f"unknown tie_break {self.tie_break!r}")


@dataclass(frozen=True)
class FusedBeam:
    image_id: str
    raw_products: tuple[float, ...]
    normalized: tuple[float, ...]
    order: tuple[int, ...]  # candidate indices, best first


def fuse(
    scores_per_expert: Mapping[str, Sequence[float]],
    prior: Optional[Sequence[float]],
    cfg: FusionConfig,
) -> list[float]:
    """Per-candidate product over the enabled experts' scores.

    Each factor is floored at epsilon so one zero-scoring expert (an OOV
    artifact, usually) cannot annihilate a candidate the other experts
    support. The decoder prior is multiplied in as an extra factor only
    when configured.
    """
    sizes = {len(scores) for scores in scores_per_expert.values()}
    if prior is not None:
        sizes.add(len(prior))
    if not sizes:
        raise ValueError("no expert scores and no prior to fuse")
    if len(sizes) > 1:
        raise ValueError(f"score lists disagree on beam size: {sorted(sizes)}")
    missing = [e for e in cfg.experts_enabled if e not in scores_per_expert]
    if missing:
        raise ValueError(f"missing scores for enabled expert(s): {', '.join(missing)}")
    (n,) = sizes
    floor = cfg.epsilon_floor
    products = [1.0] * n
    for expert_id in cfg.experts_enabled:
        scores = scores_per_expert[expert_id]
        for i in range(n):
            products[i] *= max(scores[i], floor)
    if cfg.include_prior_factor:
        if prior is None:
            raise ValueError("include_prior_factor is set but no prior was given")
        for i in range(n):
            products[i] *= max(prior[i], floor)
    return products


def normalize(raw: Sequence[float]) -> list[float]:
    """raw / sum(raw); a degenerate all-zero input falls back to uniform."""
    if not raw:
        raise ValueError("nothing to normalize")
    for value in raw:
        if value < 0:
            raise ValueError(f"negative score {value}")
    total = sum(raw)
    if total == 0.0:
        log.warning("all fused scores are zero; falling back to a uniform distribution")
        return [1.0 / len(raw)] * len(raw)
    return [value / total for value in raw]


def rank_order(raw: Sequence[float]) -> list[int]:
    """Candidate indices by descending score, ties broken by beam order."""
    return sorted(range(len(raw)), key=lambda i: (-raw[i], i))


def rerank_beam(
    beam: BeamSet,
    visual: VisualContext,
    engine: ExpertEngine,
    cfg: FusionConfig,
) -> RerankResult:
    """Score, fuse, and re-rank one beam against its visual context.

    The probability change delta is always measured against the softmax of
    the decoder log-probabilities (uniform when the beam ships without
    them), independent of the prior mode the experts use.
    """
    if cfg.slot_max:
        slots = [obj.slot for obj in visual.objects]
    else:
        if visual.by_slot(cfg.visual_slot) is None:
            raise ValueError(
                f"image {beam.image_id!r} has no visual object in slot {cfg.visual_slot}"
            )
        slots = [cfg.visual_slot]

    prior = None
    if cfg.include_prior_factor:
        prior = compute_prior(beam, engine.config.prior_mode)

    raw: Optional[list[float]] = None
    for slot in slots:
        scores = engine.beam_scores(beam, visual.by_slot(slot), cfg.experts_enabled)
        products = fuse(scores, prior, cfg)
        raw = products if raw is None else [max(a, b) for a, b in zip(raw, products)]

    normalized = normalize(raw)
    order = rank_order(raw)
    fused = FusedBeam(
        image_id=beam.image_id,
        raw_products=tuple(raw),
        normalized=tuple(normalized),
        order=tuple(order),
    )
    return _to_result(beam, fused)


def _to_result(beam: BeamSet, fused: FusedBeam) -> RerankResult:
    mode = "beam_softmax" if beam.has_logprobs() else "uniform"
    original = compute_prior(beam, mode)
    new_rank = [0] * len(fused.order)
    for rank, index in enumerate(fused.order):
        new_rank[index] = rank
    entries = tuple(
        RerankEntry(
            candidate_index=i,
            text=beam.candidates[i].text,
            fused_score=fused.raw_products[i],
            normalized_score=fused.normalized[i],
            original_prob=original[i],
            delta=fused.normalized[i] - original[i],
            new_rank=new_rank[i],
        )
        for i in range(len(beam.candidates))
    )
    return RerankResult(image_id=beam.image_id, entries=entries, winner_index=fused.order[0])


def bin_probability_changes(
    results: Sequence[RerankResult],
    bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
) -> list[list[int]]:
    """Count probability changes per original beam position.

    Bins are right-closed around the given edges e1 < ... < ek:
    (-inf, e1], (e1, e2], ..., (ek, +inf). Row i covers candidate_index i;
    its counts sum to the number of beams that have a candidate there.
    """
    edges = list(bin_edges)
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError(f"bin edges must be strictly increasing, got {edges}")
    if not results:
        return []
    positions = max(len(r.entries) for r in results)
    counts = [[0] * (len(edges) + 1) for _ in range(positions)]
    for result in results:
        for entry in result.entries:
            b = 0
            while b < len(edges) and entry.delta > edges[b]:
                b += 1
            counts[entry.candidate_index][b] += 1
    return counts


def bin_labels(bin_edges: Sequence[float] = DEFAULT_BIN_EDGES) -> list[str]:
    """Column labels matching bin_probability_changes, e.g. bin_le_0.4."""
    labels = [f"bin_le_{edge:g}" for edge in bin_edges]
    labels.append(f"bin_gt_{bin_edges[-1]:g}")
    return labels
