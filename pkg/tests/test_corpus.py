"""Corpus readers/writers: schema validation, caps, joins, round-trips."""

import json

import numpy as np
import pytest

from caprank.corpus import (
    DataError,
    RerankEntry,
    RerankResult,
    join_corpus,
    read_beams,
    read_rerank_results,
    read_references,
    read_visual,
    write_rerank_results,
)


def write_lines(path, lines):
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return str(path)


def beam_line(image_id="img01", candidates=None):
    if candidates is None:
        candidates = [
            {"text": "a man on a field", "logprob": -1.0},
            {"text": "a man playing baseball", "logprob": -1.6},
        ]
    return json.dumps({"image_id": image_id, "candidates": candidates})


class TestReadBeams:
    def test_round_trip_basic(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", [beam_line()])
        beams = read_beams(path)
        assert len(beams) == 1
        assert beams[0].image_id == "img01"
        assert [c.text for c in beams[0].candidates] == [
            "a man on a field",
            "a man playing baseball",
        ]
        assert [c.beam_rank for c in beams[0].candidates] == [0, 1]
        assert beams[0].has_logprobs()

    def test_blank_lines_skipped(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(), "", "   "])
        assert len(read_beams(path)) == 1

    def test_beam_cap_drops_tail(self, tmp_path):
        cands = [{"text": f"caption number {i}"} for i in range(25)]
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=cands)])
        beams = read_beams(path)
        assert len(beams[0].candidates) == 20  # default cap
        assert beams[0].candidates[-1].text == "caption number 19"
        beams = read_beams(path, beam_cap=3)
        assert [c.text for c in beams[0].candidates] == [
            "caption number 0",
            "caption number 1",
            "caption number 2",
        ]

    def test_beam_cap_must_be_positive(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", [beam_line()])
        with pytest.raises(ValueError, match="beam_cap must be >= 1"):
            read_beams(path, beam_cap=0)

    def test_no_logprobs_is_fine(self, tmp_path):
        cands = [{"text": "one caption"}, {"text": "another caption"}]
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=cands)])
        beams = read_beams(path)
        assert not beams[0].has_logprobs()
        assert all(c.logprob is None for c in beams[0].candidates)

    def test_partial_logprobs_rejected(self, tmp_path):
        cands = [{"text": "one caption", "logprob": -0.5}, {"text": "another caption"}]
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=cands)])
        with pytest.raises(DataError, match="logprob present on some candidates but not all"):
            read_beams(path)

    def test_positive_logprob_rejected(self, tmp_path):
        cands = [{"text": "one caption", "logprob": 0.5}]
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=cands)])
        with pytest.raises(DataError, match=r"must be finite and <= 0, got 0\.5"):
            read_beams(path)

    def test_nonfinite_logprob_rejected(self, tmp_path):
        cands = [{"text": "one caption", "logprob": float("-inf")}]
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=cands)])
        with pytest.raises(DataError, match="must be finite"):
            read_beams(path)

    def test_boolean_logprob_rejected(self, tmp_path):
        cands = [{"text": "one caption", "logprob": True}]
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=cands)])
        with pytest.raises(DataError, match='"logprob" must be a number'):
            read_beams(path)

    def test_zero_logprob_allowed(self, tmp_path):
        cands = [{"text": "one caption", "logprob": 0}]
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=cands)])
        assert read_beams(path)[0].candidates[0].logprob == 0.0

    def test_duplicate_image_id(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(), beam_line()])
        with pytest.raises(DataError, match='duplicate image_id "img01"') as exc_info:
            read_beams(path)
        assert exc_info.value.line == 2

    def test_empty_candidates(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=[])])
        with pytest.raises(DataError, match='"candidates" must be a non-empty array'):
            read_beams(path)

    def test_empty_text(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(candidates=[{"text": "  "}])])
        with pytest.raises(DataError, match='candidate 0: missing or empty "text"'):
            read_beams(path)

    def test_missing_image_id(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", ['{"candidates":[{"text":"x"}]}'])
        with pytest.raises(DataError, match='missing or empty "image_id"'):
            read_beams(path)

    def test_malformed_json_reports_line(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(), "{not json"])
        with pytest.raises(DataError, match="malformed JSON") as exc_info:
            read_beams(path)
        assert exc_info.value.path == path
        assert exc_info.value.line == 2
        assert str(exc_info.value).startswith(f"{path}:2: ")

    def test_non_object_record(self, tmp_path):
        path = write_lines(tmp_path / "beams.jsonl", ["[1, 2, 3]"])
        with pytest.raises(DataError, match="expected a JSON object"):
            read_beams(path)


def visual_line(image_id="img01", objects=None):
    if objects is None:
        objects = [{"label": "baseball", "confidence": 0.9}]
    return json.dumps({"image_id": image_id, "objects": objects})


class TestReadVisual:
    def test_objects_sorted_by_confidence(self, tmp_path):
        objs = [
            {"label": "glove", "confidence": 0.4},
            {"label": "baseball", "confidence": 0.9},
            {"label": "bat", "confidence": 0.7},
        ]
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(objects=objs)])
        ctx = read_visual(path)[0]
        assert [(o.label, o.slot) for o in ctx.objects] == [
            ("baseball", 1),
            ("bat", 2),
            ("glove", 3),
        ]

    def test_truncated_after_sorting(self, tmp_path):
        objs = [
            {"label": "glove", "confidence": 0.4},
            {"label": "baseball", "confidence": 0.9},
            {"label": "bat", "confidence": 0.7},
            {"label": "cap", "confidence": 0.8},
        ]
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(objects=objs)])
        ctx = read_visual(path)[0]
        # glove (lowest confidence) is the one dropped, not the last listed
        assert [o.label for o in ctx.objects] == ["baseball", "cap", "bat"]

    def test_equal_confidence_keeps_input_order(self, tmp_path):
        objs = [
            {"label": "first", "confidence": 0.5},
            {"label": "second", "confidence": 0.5},
        ]
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(objects=objs)])
        ctx = read_visual(path)[0]
        assert [o.label for o in ctx.objects] == ["first", "second"]

    def test_by_slot(self, tmp_path):
        path = write_lines(tmp_path / "visual.jsonl", [visual_line()])
        ctx = read_visual(path)[0]
        assert ctx.by_slot(1).label == "baseball"
        assert ctx.by_slot(2) is None

    @pytest.mark.parametrize("confidence", [0.0, -0.1, 1.5])
    def test_confidence_out_of_range(self, tmp_path, confidence):
        objs = [{"label": "baseball", "confidence": confidence}]
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(objects=objs)])
        with pytest.raises(DataError, match=r'"confidence" must be in \(0, 1\]'):
            read_visual(path)

    def test_boolean_confidence_rejected(self, tmp_path):
        objs = [{"label": "baseball", "confidence": True}]
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(objects=objs)])
        with pytest.raises(DataError, match='"confidence" must be a number'):
            read_visual(path)

    def test_empty_label(self, tmp_path):
        objs = [{"label": "", "confidence": 0.9}]
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(objects=objs)])
        with pytest.raises(DataError, match='object 0: missing or empty "label"'):
            read_visual(path)

    def test_empty_objects(self, tmp_path):
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(objects=[])])
        with pytest.raises(DataError, match='"objects" must be a non-empty array'):
            read_visual(path)

    def test_duplicate_image_id(self, tmp_path):
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(), visual_line()])
        with pytest.raises(DataError, match="duplicate image_id"):
            read_visual(path)


class TestReadReferences:
    def test_basic(self, tmp_path):
        line = json.dumps({"image_id": "img01", "references": ["a man", "a player"]})
        path = write_lines(tmp_path / "refs.jsonl", [line])
        refs = read_references(path)
        assert refs[0].image_id == "img01"
        assert refs[0].references == ("a man", "a player")

    def test_empty_reference_rejected(self, tmp_path):
        line = json.dumps({"image_id": "img01", "references": ["a man", "  "]})
        path = write_lines(tmp_path / "refs.jsonl", [line])
        with pytest.raises(DataError, match="reference 1 is missing or empty"):
            read_references(path)

    def test_empty_array_rejected(self, tmp_path):
        line = json.dumps({"image_id": "img01", "references": []})
        path = write_lines(tmp_path / "refs.jsonl", [line])
        with pytest.raises(DataError, match='"references" must be a non-empty array'):
            read_references(path)

    def test_fixture_parses(self, refs_path):
        refs = read_references(refs_path)
        assert len(refs) == 10
        assert all(len(r.references) == 2 for r in refs)


class TestJoinCorpus:
    def _beams(self, tmp_path, ids):
        path = write_lines(tmp_path / "beams.jsonl", [beam_line(image_id=i) for i in ids])
        return read_beams(path)

    def _visual(self, tmp_path, ids):
        path = write_lines(tmp_path / "visual.jsonl", [visual_line(image_id=i) for i in ids])
        return read_visual(path)

    def test_pairs_follow_beam_order(self, tmp_path):
        beams = self._beams(tmp_path, ["b", "a", "c"])
        visual = self._visual(tmp_path, ["a", "b", "c"])
        pairs = join_corpus(beams, visual)
        assert [b.image_id for b, _ in pairs] == ["b", "a", "c"]
        assert all(b.image_id == v.image_id for b, v in pairs)

    def test_strict_names_every_missing_id(self, tmp_path):
        beams = self._beams(tmp_path, ["a", "b", "c"])
        visual = self._visual(tmp_path, ["b"])
        with pytest.raises(DataError, match="no visual context for image_id\\(s\\): a, c"):
            join_corpus(beams, visual, strict=True)

    def test_lenient_skips_with_warning(self, tmp_path, caplog):
        beams = self._beams(tmp_path, ["a", "b", "c"])
        visual = self._visual(tmp_path, ["b"])
        with caplog.at_level("WARNING", logger="caprank"):
            pairs = join_corpus(beams, visual, strict=False)
        assert [b.image_id for b, _ in pairs] == ["b"]
        assert "skipping 2 beam(s)" in caplog.text

    def test_extra_visual_contexts_ignored(self, tmp_path):
        beams = self._beams(tmp_path, ["a"])
        visual = self._visual(tmp_path, ["a", "z"])
        assert len(join_corpus(beams, visual)) == 1


def make_result(image_id="img01", scores=(0.5, 1.0)):
    total = sum(scores)
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    rank_of = {idx: rank for rank, idx in enumerate(order)}
    entries = tuple(
        RerankEntry(
            candidate_index=i,
            text=f"caption number {i}",
            fused_score=s,
            normalized_score=s / total,
            original_prob=1.0 / len(scores),
            delta=s / total - 1.0 / len(scores),
            new_rank=rank_of[i],
        )
        for i, s in enumerate(scores)
    )
    return RerankResult(image_id=image_id, entries=entries, winner_index=order[0])


class TestRerankRoundTrip:
    def test_write_then_read_is_identity(self, tmp_path):
        results = [make_result("img01"), make_result("img02", scores=(0.7, 0.2, 0.1))]
        path = str(tmp_path / "reranked.jsonl")
        write_rerank_results(results, path)
        assert read_rerank_results(path) == results

    def test_field_order_is_pinned(self, tmp_path):
        path = str(tmp_path / "reranked.jsonl")
        write_rerank_results([make_result()], path)
        record = json.loads(open(path, encoding="utf-8").readline())
        assert list(record) == ["image_id", "winner", "entries"]
        assert list(record["entries"][0]) == [
            "candidate_index",
            "text",
            "fused_score",
            "normalized_score",
            "original_prob",
            "delta",
            "new_rank",
        ]
        assert record["winner"] == "caption number 1"

    def test_floats_round_trip_exactly(self, tmp_path):
        # shortest-repr serialization must recover the exact double
        rng = np.random.default_rng(42)
        scores = tuple(rng.uniform(0.01, 1.0, size=4).tolist())
        path = str(tmp_path / "reranked.jsonl")
        write_rerank_results([make_result(scores=scores)], path)
        back = read_rerank_results(path)[0]
        for entry, score in zip(back.entries, scores):
            assert entry.fused_score == score  # bit-exact, no tolerance

    def test_winner_and_baseline_accessors(self):
        result = make_result(scores=(0.2, 0.9, 0.4))
        assert result.winner.candidate_index == 1
        assert result.baseline.candidate_index == 0
        assert result.winner.new_rank == 0

    def test_exactly_one_winner_required(self, tmp_path):
        path = str(tmp_path / "reranked.jsonl")
        write_rerank_results([make_result()], path)
        record = json.loads(open(path, encoding="utf-8").readline())
        record["entries"][0]["new_rank"] = 0  # both entries now claim rank 0
        (tmp_path / "bad.jsonl").write_text(json.dumps(record) + "\n")
        with pytest.raises(DataError, match="exactly one new_rank 0"):
            read_rerank_results(str(tmp_path / "bad.jsonl"))

    def test_candidate_indices_must_cover_range(self, tmp_path):
        path = str(tmp_path / "reranked.jsonl")
        write_rerank_results([make_result()], path)
        record = json.loads(open(path, encoding="utf-8").readline())
        record["entries"][1]["candidate_index"] = 5
        (tmp_path / "bad.jsonl").write_text(json.dumps(record) + "\n")
        with pytest.raises(DataError, match="candidate_index values must cover"):
            read_rerank_results(str(tmp_path / "bad.jsonl"))

    def test_malformed_entry(self, tmp_path):
        line = json.dumps({"image_id": "x", "entries": [{"candidate_index": 0}]})
        path = write_lines(tmp_path / "bad.jsonl", [line])
        with pytest.raises(DataError, match="malformed entry"):
            read_rerank_results(path)

    def test_golden_file_parses(self, golden_path):
        results = read_rerank_results(golden_path)
        assert len(results) == 10
        assert {r.image_id for r in results} == {f"img{i:02d}" for i in range(1, 11)}
