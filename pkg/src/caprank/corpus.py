"""On-disk data model: beams, visual contexts, references, re-rank results.

All corpora are JSONL, one image per line, UTF-8. Readers validate every
record and return immutable value objects; errors carry the offending
file path and line number.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Optional

log = logging.getLogger("caprank")

DEFAULT_BEAM_CAP = 20
DEFAULT_VISUAL_CAP = 3


class DataError(ValueError):
    """A corpus file violated its schema. Maps to CLI exit code 2."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        loc = ""
        if path is not None:
            loc = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(loc + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class CaptionCandidate:
    text: str
    logprob: Optional[float]  # decoder log-probability, <= 0 when present
    beam_rank: int  # 0 = decoder's top hypothesis


@dataclass(frozen=True)
class BeamSet:
    image_id: str
    candidates: tuple[CaptionCandidate, ...]

    def has_logprobs(self) -> bool:
        return self.candidates[0].logprob is not None


@dataclass(frozen=True)
class VisualObject:
    label: str
    confidence: float  # classifier confidence in (0, 1]
    slot: int  # 1 = most confident


@dataclass(frozen=True)
class VisualContext:
    image_id: str
    objects: tuple[VisualObject, ...]

    def by_slot(self, slot: int) -> Optional[VisualObject]:
        for obj in self.objects:
            if obj.slot == slot:
                return obj
        return None


@dataclass(frozen=True)
class ReferenceSet:
    image_id: str
    references: tuple[str, ...]


@dataclass(frozen=True)
class RerankEntry:
    candidate_index: int
    text: str
    fused_score: float
    normalized_score: float
    original_prob: float
    delta: float  # normalized_score - original_prob
    new_rank: int


@dataclass(frozen=True)
class RerankResult:
    image_id: str
    entries: tuple[RerankEntry, ...]  # in candidate_index order
    winner_index: int

    @property
    def winner(self) -> RerankEntry:
        return self.entries[self.winner_index]

    @property
    def baseline(self) -> RerankEntry:
        return self.entries[0]


def _iter_records(path: str) -> Iterable[tuple[int, dict]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"malformed JSON ({exc.msg})", path, lineno) from exc
            if not isinstance(record, dict):
                raise DataError("expected a JSON object", path, lineno)
            yield lineno, record


def _require_str(record: dict, key: str, path: str, lineno: int) -> str:
    value = record.get(key)
    if not isinstance(value, str) or not value.strip():
        raise DataError(f'missing or empty "{key}"', path, lineno)
    return value


def read_beams(path: str, beam_cap: int = DEFAULT_BEAM_CAP) -> list[BeamSet]:
    """Read beams.jsonl; candidate array order defines beam_rank.

    Candidates beyond beam_cap are dropped from the tail. Log-probabilities
    must be present on all candidates of a beam or on none, finite, and <= 0.
    """
    if beam_cap < 1:
        raise ValueError(f"beam_cap must be >= 1, got {beam_cap}")
    beams: list[BeamSet] = []
    seen: set[str] = set()
    for lineno, record in _iter_records(path):
        image_id = _require_str(record, "image_id", path, lineno)
        if image_id in seen:
            raise DataError(f'duplicate image_id "{image_id}"', path, lineno)
        seen.add(image_id)
        raw = record.get("candidates")
        if not isinstance(raw, list) or not raw:
            raise DataError('"candidates" must be a non-empty array', path, lineno)
        candidates = []
        for rank, item in enumerate(raw):
            if not isinstance(item, dict):
                raise DataError(f"candidate {rank} is not an object", path, lineno)
            text = item.get("text")
            if not isinstance(text, str) or not text.strip():
                raise DataError(f'candidate {rank}: missing or empty "text"', path, lineno)
            logprob = item.get("logprob")
            if logprob is not None:
                if not isinstance(logprob, (int, float)) or isinstance(logprob, bool):
                    raise DataError(f'candidate {rank}: "logprob" must be a number', path, lineno)
                logprob = float(logprob)
                if not math.isfinite(logprob) or logprob > 0:
                    raise DataError(
                        f'candidate {rank}: "logprob" must be finite and <= 0, got {logprob}',
                        path,
                        lineno,
                    )
            candidates.append(CaptionCandidate(text=text, logprob=logprob, beam_rank=rank))
        present = [c.logprob is not None for c in candidates]
        if any(present) and not all(present):
            raise DataError("logprob present on some candidates but not all", path, lineno)
        beams.append(BeamSet(image_id=image_id, candidates=tuple(candidates[:beam_cap])))
    return beams


def read_visual(path: str, max_objects: int = DEFAULT_VISUAL_CAP) -> list[VisualContext]:
    """Read visual.jsonl; objects are sorted by non-increasing confidence.

    Slots are assigned 1..n in that order; inputs longer than max_objects
    are truncated after sorting.
    """
    contexts: list[VisualContext] = []
    seen: set[str] = set()
    for lineno, record in _iter_records(path):
        image_id = _require_str(record, "image_id", path, lineno)
        if image_id in seen:
            raise DataError(f'duplicate image_id "{image_id}"', path, lineno)
        seen.add(image_id)
        raw = record.get("objects")
        if not isinstance(raw, list) or not raw:
            raise DataError('"objects" must be a non-empty array', path, lineno)
        parsed = []
        for i, item in enumerate(raw):
            if not isinstance(item, dict):
                raise DataError(f"object {i} is not an object", path, lineno)
            label = item.get("label")
            if not isinstance(label, str) or not label.strip():
                raise DataError(f'object {i}: missing or empty "label"', path, lineno)
            conf = item.get("confidence")
            if not isinstance(conf, (int, float)) or isinstance(conf, bool):
                raise DataError(f'object {i}: "confidence" must be a number', path, lineno)
            conf = float(conf)
            if not (0.0 < conf <= 1.0):
                raise DataError(
                    f'object {i}: "confidence" must be in (0, 1], got {conf}', path, lineno
                )
            parsed.append((label, conf))
        parsed.sort(key=lambda lc: -lc[1])  # stable: equal confidences keep input order
        objects = tuple(
            VisualObject(label=label, confidence=conf, slot=slot)
            for slot, (label, conf) in enumerate(parsed[:max_objects], start=1)
        )
        contexts.append(VisualContext(image_id=image_id, objects=objects))
    return contexts


def read_references(path: str) -> list[ReferenceSet]:
    """Read refs.jsonl: at least one non-empty reference caption per image."""
    refs: list[ReferenceSet] = []
    seen: set[str] = set()
    for lineno, record in _iter_records(path):
        image_id = _require_str(record, "image_id", path, lineno)
        if image_id in seen:
            raise DataError(f'duplicate image_id "{image_id}"', path, lineno)
        seen.add(image_id)
        raw = record.get("references")
        if not isinstance(raw, list) or not raw:
            raise DataError('"references" must be a non-empty array', path, lineno)
        for i, ref in enumerate(raw):
            if not isinstance(ref, str) or not ref.strip():
                raise DataError(f"reference {i} is missing or empty", path, lineno)
        refs.append(ReferenceSet(image_id=image_id, references=tuple(raw)))
    return refs


def join_corpus(
    beams: list[BeamSet], visual: list[VisualContext], strict: bool = True
) -> list[tuple[BeamSet, VisualContext]]:
    """Pair beams with their visual contexts on image_id, in beams order.

    In strict mode every beam must have a context; the error names all the
    missing ids at once. In lenient mode unmatched beams are skipped with a
    warning (the skip count is len(beams) - len(result)).
    """
    by_id = {ctx.image_id: ctx for ctx in visual}
    missing = [b.image_id for b in beams if b.image_id not in by_id]
    if missing:
        if strict:
            raise DataError(
                "no visual context for image_id(s): " + ", ".join(missing)
            )
        log.warning("skipping %d beam(s) with no visual context: %s", len(missing), ", ".join(missing))
    return [(b, by_id[b.image_id]) for b in beams if b.image_id in by_id]


def write_rerank_results(results: Iterable[RerankResult], path: str) -> None:
    """Write reranked.jsonl with a deterministic field order.

    Floats are serialized with repr semantics (shortest round-trip form),
    so parse(serialize(x)) recovers every value exactly.
    """
    with open(path, "w", encoding="utf-8") as fh:
        for result in results:
            fh.write(_result_to_json(result) + "\n")


def _result_to_json(result: RerankResult) -> str:
    record = {
        "image_id": result.image_id,
        "winner": result.winner.text,
        "entries": [
            {
                "candidate_index": e.candidate_index,
                "text": e.text,
                "fused_score": e.fused_score,
                "normalized_score": e.normalized_score,
                "original_prob": e.original_prob,
                "delta": e.delta,
                "new_rank": e.new_rank,
            }
            for e in result.entries
        ],
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def read_rerank_results(path: str) -> list[RerankResult]:
    """Read reranked.jsonl back into RerankResult values."""
    results: list[RerankResult] = []
    seen: set[str] = set()
    for lineno, record in _iter_records(path):
        image_id = _require_str(record, "image_id", path, lineno)
        if image_id in seen:
            raise DataError(f'duplicate image_id "{image_id}"', path, lineno)
        seen.add(image_id)
        raw = record.get("entries")
        if not isinstance(raw, list) or not raw:
            raise DataError('"entries" must be a non-empty array', path, lineno)
        try:
            entries = tuple(
                RerankEntry(
                    candidate_index=int(e["candidate_index"]),
                    text=str(e["text"]),
                    fused_score=float(e["fused_score"]),
                    normalized_score=float(e["normalized_score"]),
                    original_prob=float(e["original_prob"]),
                    delta=float(e["delta"]),
                    new_rank=int(e["new_rank"]),
                )
                for e in raw
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed entry: {exc}", path, lineno) from exc
        winners = [e.candidate_index for e in entries if e.new_rank == 0]
        if len(winners) != 1:
            raise DataError("entries must contain exactly one new_rank 0", path, lineno)
        by_index = {e.candidate_index for e in entries}
        if by_index != set(range(len(entries))):
            raise DataError("candidate_index values must cover 0..n-1", path, lineno)
        ordered = tuple(sorted(entries, key=lambda e: e.candidate_index))
        results.append(
            RerankResult(image_id=image_id, entries=ordered, winner_index=winners[0])
        )
    return results
