"""Command-line entry point: rerank / evaluate / diversity / report.

Every subcommand is deterministic — no RNG anywhere, output ordering and
float formatting pinned — so repeated runs on identical inputs are
byte-identical. Exit codes partition failures: 2 for data/usage errors,
3 for external-adapter failures, 1 for internal invariant violations.
The only environment variable consulted is CAPRANK_LOG (log level).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Sequence

from .corpus import (
    DataError,
    RerankResult,
    join_corpus,
    read_beams,
    read_references,
    read_rerank_results,
    read_visual,
    write_rerank_results,
)
from .embeddings import load_table, load_vectors, save_table
from .experts import SENTENCE_BUILTIN, SENTENCE_EXTERNAL, WORD
from .external import AdapterError
from .fusion import (
    DEFAULT_BIN_EDGES,
    bin_labels,
    bin_probability_changes,
    rerank_beam,
)
from .metrics import EvalPair, diversity, metric_report
from .reranker import VisualReranker, corpus_vocabulary
from .text import tokenize

log = logging.getLogger("caprank")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_DATA = 2
EXIT_ADAPTER = 3

# CLI spelling -> internal expert id
_EXPERT_NAMES = {"word": WORD, "sentence": SENTENCE_BUILTIN, "external": SENTENCE_EXTERNAL}
_PRIOR_NAMES = {"softmax": "beam_softmax", "uniform": "uniform"}


class UsageError(Exception):
    """Bad flag combination or config content. Maps to exit code 2."""


def _fmt6(x: float) -> str:
    # fixed 6 decimals; ties round half-to-even via IEEE binary rounding
    return format(float(x), ".6f")


def parse_experts(spec: str) -> tuple[str, ...]:
    """Parse the --experts CSV ('none' disables all experts)."""
    names = [part.strip() for part in spec.split(",") if part.strip()]
    if names == ["none"]:
        return ()
    seen: list[str] = []
    for name in names:
        if name not in _EXPERT_NAMES:
            raise UsageError(
                f"unknown expert {name!r} for --experts (choose from word, sentence, external, none)"
            )
        mapped = _EXPERT_NAMES[name]
        if mapped not in seen:
            seen.append(mapped)
    if not names:
        raise UsageError("--experts must not be empty (use 'none' to disable all experts)")
    return tuple(seen)


def _parse_bins(spec: str) -> tuple[float, ...]:
    try:
        edges = tuple(float(part) for part in spec.split(","))
    except ValueError as exc:
        raise UsageError(f"--bins must be a comma-separated list of numbers: {exc}") from None
    if not edges:
        raise UsageError("--bins must list at least one edge")
    return edges


def load_config_file(path: str, allowed: Sequence[str]) -> dict:
    """Read the JSON config file (keys = flag names with underscores)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read --config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"--config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"--config {path} must hold a JSON object")
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise UsageError(f"--config {path} has unknown keys: {', '.join(unknown)}")
    return raw


# ---------------------------------------------------------------------------
# argument parsing


def _add_rerank_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--beams", help="beams.jsonl input")
    sub.add_argument("--visual", help="visual.jsonl input")
    sub.add_argument("--out", help="reranked.jsonl output")
    sub.add_argument("--embeddings", help="word-vector text file")
    sub.add_argument("--embedding-cache", dest="embedding_cache", help="binary snapshot path (read-through)")
    sub.add_argument("--experts", default="word", help="csv of word,sentence,external — or none")
    sub.add_argument("--external-cmd", dest="external_cmd", help="adapter command line")
    sub.add_argument("--visual-slot", dest="visual_slot", type=int, default=1)
    sub.add_argument("--slot-max", dest="slot_max", action="store_true", default=False)
    sub.add_argument("--keyphrases", type=int, default=2)
    sub.add_argument("--prior", choices=("softmax", "uniform"), default="softmax")
    sub.add_argument("--include-prior", dest="include_prior", action="store_true", default=False)
    sub.add_argument("--epsilon", type=float, default=1e-12)
    sub.add_argument("--cache", help="external-expert score cache (JSONL)")
    sub.add_argument("--strict", dest="strict", action="store_true")
    sub.add_argument("--lenient", dest="strict", action="store_false")
    sub.set_defaults(strict=True)
    sub.add_argument("--jobs", type=int, default=1)
    sub.add_argument("--config", help="JSON of flag defaults; explicit flags win")


def _add_hyp_source_args(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--hyps", help="refs-style JSONL; first caption per image is the hypothesis")
    sub.add_argument("--reranked", help="reranked.jsonl to draw hypotheses from")
    sub.add_argument("--use", choices=("winner", "baseline"), default="winner",
                     help="which candidate to score when reading --reranked")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="caprank",
        description="Re-rank beam-search captions against detected visual context, and score the results.",
    )
    subs = parser.add_subparsers(dest="command", required=True)
    table: dict[str, argparse.ArgumentParser] = {}

    table["rerank"] = subs.add_parser("rerank", help="fuse expert scores and re-rank each beam")
    _add_rerank_args(table["rerank"])

    table["evaluate"] = subs.add_parser("evaluate", help="BLEU/ROUGE-L/CIDEr/diversity against references")
    _add_hyp_source_args(table["evaluate"])
    table["evaluate"].add_argument("--refs", help="refs.jsonl with reference captions")
    table["evaluate"].add_argument("--out", help="optional CSV report path")
    table["evaluate"].add_argument("--bleu-smooth", dest="bleu_smooth", choices=("add1",), default=None,
                                   help="BLEU smoothing for tiny corpora")
    table["evaluate"].add_argument("--strict", dest="strict", action="store_true")
    table["evaluate"].add_argument("--lenient", dest="strict", action="store_false")
    table["evaluate"].set_defaults(strict=True)
    table["evaluate"].add_argument("--config", help="JSON of flag defaults; explicit flags win")

    table["diversity"] = subs.add_parser("diversity", help="vocabulary and caption-length statistics")
    _add_hyp_source_args(table["diversity"])
    table["diversity"].add_argument("--out", help="optional CSV report path")
    table["diversity"].add_argument("--config", help="JSON of flag defaults; explicit flags win")

    table["report"] = subs.add_parser("report", help="probability-change bins and winner changes")
    table["report"].add_argument("--reranked", help="reranked.jsonl input")
    table["report"].add_argument("--out-dir", dest="out_dir", help="directory for changes.csv and winners.txt")
    table["report"].add_argument("--bins", default=None, help="csv of bin edges (default 0,0.4,0.8)")
    table["report"].add_argument("--config", help="JSON of flag defaults; explicit flags win")

    return parser, table


def _require(args: argparse.Namespace, *names: str) -> None:
    for name in names:
        if getattr(args, name, None) in (None, ""):
            raise UsageError(f"--{name.replace('_', '-')} is required for this subcommand")


# ---------------------------------------------------------------------------
# subcommands


def _resolve_table(args, pairs):
    """Word-vector table per --embeddings/--embedding-cache, or None."""
    snapshot = args.embedding_cache
    if snapshot and os.path.exists(snapshot):
        log.info("loading embedding snapshot %s", snapshot)
        return load_table(snapshot)
    if not args.embeddings:
        return None
    if not os.path.exists(args.embeddings):
        raise DataError(f"embeddings file not found (--embeddings): {args.embeddings}")
    if snapshot:
        # snapshot the unfiltered table so other corpora can reuse it
        table = load_vectors(args.embeddings)
        save_table(table, snapshot)
        return table
    return load_vectors(args.embeddings, vocab_filter=corpus_vocabulary(pairs))


def cmd_rerank(args: argparse.Namespace) -> int:
    _require(args, "beams", "visual", "out")
    if args.jobs < 1:
        raise UsageError(f"--jobs must be >= 1, got {args.jobs}")
    experts = parse_experts(args.experts)

    beams = read_beams(args.beams)
    visual = read_visual(args.visual)
    pairs = join_corpus(beams, visual, strict=args.strict)

    table = None
    if WORD in experts or SENTENCE_BUILTIN in experts:
        if not args.embeddings and not (args.embedding_cache and os.path.exists(args.embedding_cache)):
            raise UsageError("--embeddings is required when the word or sentence expert is enabled")
        table = _resolve_table(args, pairs)

    reranker = VisualReranker(
        experts=experts,
        embeddings=table,
        visual_slot=args.visual_slot,
        slot_max=args.slot_max,
        include_prior=args.include_prior,
        epsilon_floor=args.epsilon,
        keyphrase_count=args.keyphrases,
        prior_mode=_PRIOR_NAMES[args.prior],
        external_cmd=args.external_cmd,
        cache_path=args.cache,
    )
    try:
        reranker.fit(pairs)
        engine, fcfg = reranker.engine_, reranker.fusion_config_
        if args.jobs == 1:
            results = [rerank_beam(b, v, engine, fcfg) for b, v in pairs]
        else:
            # map() preserves input order, so emission stays deterministic
            with ThreadPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(lambda bv: rerank_beam(bv[0], bv[1], engine, fcfg), pairs))
    finally:
        reranker.close()

    write_rerank_results(results, args.out)

    changed = [r for r in results if r.winner_index != 0]
    mean_delta = (
        sum(r.winner.delta for r in results) / len(results) if results else 0.0
    )
    print(f"images {len(results)}")
    print(f"winner_changed {len(changed)}")
    print(f"mean_winner_delta {_fmt6(mean_delta)}")
    return EXIT_OK


def _load_hypotheses(args) -> list[tuple[str, tuple[str, ...]]]:
    """(image_id, hypothesis tokens) pairs from --hyps or --reranked."""
    if bool(args.hyps) == bool(args.reranked):
        raise UsageError("provide exactly one of --hyps or --reranked")
    if args.hyps:
        records = read_references(args.hyps)
        if not records:
            raise DataError("hypothesis file is empty", path=args.hyps)
        return [(r.image_id, tuple(tokenize(r.references[0]))) for r in records]
    results = read_rerank_results(args.reranked)
    if not results:
        raise DataError("reranked file is empty", path=args.reranked)
    pick = (lambda r: r.winner) if args.use == "winner" else (lambda r: r.baseline)
    return [(r.image_id, tuple(tokenize(pick(r).text))) for r in results]


def _join_refs(hyps, refs, strict: bool) -> list[EvalPair]:
    by_id = {r.image_id: r for r in refs}
    missing = [image_id for image_id, _ in hyps if image_id not in by_id]
    if missing and strict:
        raise DataError(f"no references for image ids: {', '.join(missing)}")
    pairs = []
    for image_id, hyp in hyps:
        ref = by_id.get(image_id)
        if ref is None:
            log.warning("skipping %s: no references", image_id)
            continue
        pairs.append(
            EvalPair(
                image_id=image_id,
                hypothesis=hyp,
                references=tuple(tuple(tokenize(text)) for text in ref.references),
            )
        )
    if not pairs:
        raise DataError("no image ids shared between hypotheses and references")
    return pairs


def _hyp_source_name(args) -> str:
    return args.use if args.reranked else "hyps"


def _emit_metric_rows(rows: list[tuple[str, str]], out: Optional[str]) -> None:
    """Aligned-text table on stdout; metric,value CSV when out is given."""
    width = max(len(name) for name, _ in rows)
    for name, value in rows:
        print(f"{name:<{width}}  {value}")
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["metric", "value"])
            writer.writerows(rows)


def cmd_evaluate(args: argparse.Namespace) -> int:
    _require(args, "refs")
    hyps = _load_hypotheses(args)
    refs = read_references(args.refs)
    pairs = _join_refs(hyps, refs, strict=args.strict)
    report = metric_report(pairs, bleu_smooth=args.bleu_smooth)

    rows = [
        ("source", _hyp_source_name(args)),
        ("n_images", str(report.n_images)),
        ("bleu1", _fmt6(report.bleu[0])),
        ("bleu2", _fmt6(report.bleu[1])),
        ("bleu3", _fmt6(report.bleu[2])),
        ("bleu4", _fmt6(report.bleu[3])),
        ("rouge_l", _fmt6(report.rouge_l)),
        ("cider", _fmt6(report.cider)),
        ("voc", str(report.diversity.voc)),
        ("ttr", _fmt6(report.diversity.ttr)),
        ("uniq", _fmt6(report.diversity.uniq)),
        ("wpc", _fmt6(report.diversity.wpc)),
    ]
    _emit_metric_rows(rows, args.out)
    return EXIT_OK


def cmd_diversity(args: argparse.Namespace) -> int:
    hyps = _load_hypotheses(args)
    stats = diversity([tokens for _, tokens in hyps])
    rows = [
        ("source", _hyp_source_name(args)),
        ("n_captions", str(len(hyps))),
        ("voc", str(stats.voc)),
        ("ttr", _fmt6(stats.ttr)),
        ("uniq", _fmt6(stats.uniq)),
        ("wpc", _fmt6(stats.wpc)),
    ]
    _emit_metric_rows(rows, getattr(args, "out", None))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    _require(args, "reranked", "out_dir")
    edges = _parse_bins(args.bins) if args.bins else DEFAULT_BIN_EDGES
    results = read_rerank_results(args.reranked)
    try:
        os.makedirs(args.out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create --out-dir {args.out_dir}: {exc}") from None

    try:
        matrix = bin_probability_changes(results, edges)
    except ValueError as exc:
        raise UsageError(str(exc)) from None

    changes_path = os.path.join(args.out_dir, "changes.csv")
    with open(changes_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["position", *bin_labels(edges)])
        for index, row in enumerate(matrix):
            writer.writerow([index, *row])

    changed = [r for r in results if r.winner_index != 0]
    winners_path = os.path.join(args.out_dir, "winners.txt")
    with open(winners_path, "w", encoding="utf-8") as fh:
        fh.write(f"winner changed on {len(changed)} of {len(results)} images\n")
        for r in changed:
            fh.write(
                f"{r.image_id}\t0->{r.winner_index}"
                f"\t{r.baseline.text}\t{r.winner.text}\n"
            )

    print(f"images {len(results)}")
    print(f"winner_changed {len(changed)}")
    print(f"wrote {changes_path}")
    print(f"wrote {winners_path}")
    return EXIT_OK


_COMMANDS = {
    "rerank": cmd_rerank,
    "evaluate": cmd_evaluate,
    "diversity": cmd_diversity,
    "report": cmd_report,
}


# ---------------------------------------------------------------------------
# entry point


def _setup_logging() -> None:
    level_name = os.environ.get("CAPRANK_LOG", "WARNING").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")


def _parse_args(argv: list[str]) -> argparse.Namespace:
    parser, table = build_parser()
    args = parser.parse_args(argv)
    config_path = getattr(args, "config", None)
    if config_path:
        sub = table[args.command]
        allowed = [a.dest for a in sub._actions if a.dest not in ("help", "config")]
        overrides = load_config_file(config_path, allowed)
        sub.set_defaults(**overrides)
        args = parser.parse_args(argv)  # explicit flags still win over config defaults
    return args


def main(argv: Optional[list[str]] = None) -> int:
    _setup_logging()
    raw_argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = _parse_args(raw_argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AdapterError as exc:
        print(f"adapter error: {exc}", file=sys.stderr)
        return EXIT_ADAPTER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # config construction quarrels (bad epsilon, unknown expert, ...)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 — invariant violations surface as exit 1
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
