"""Command-line interface: ``modesearch <subcommand> ...``.

Exit status is 0 on success, 1 on a configuration error and 2 when some
inputs failed (their records carry an ``error`` field).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from modesearch.analysis import (
    EMPTY_REPORT_COLUMNS,
    SCATTER_COLUMNS,
    WIN_RATE_COLUMNS,
    ExperimentConfig,
    KeyMismatch,
    MethodParams,
    discover_inputs,
    empty_report_for_inputs,
    input_rng,
    read_jsonl,
    run,
    run_method,
    scatter_export,
    to_csv,
    to_jsonl,
    typicality_report,
    compare,
)
from modesearch.errors import ConfigError
from modesearch.search import SearchBudget
from modesearch.seqmodel import load_model, read_corpus, train_ngram
from modesearch.seqmodel.base import Sequence

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1); 2 is reserved for partial failures."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _ratios(text: str) -> tuple[float, ...]:
    try:
        vals = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("ratios must be positive")
    return vals


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="modesearch", description="Exact and approximate mode search for sequence models.")
    p.add_argument("--seed", type=int, default=0, help="root random seed")
    p.add_argument("--workers", type=int, default=1, help="worker processes for independent inputs")
    p.add_argument("--budget-nodes", type=int, default=1_000_000, help="DFS node expansion budget")
    p.add_argument("--out", help="output file (default: stdout)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train-ngram", help="train an n-gram model from a whitespace-tokenized corpus")
    t.add_argument("corpus")
    t.add_argument("--order", type=int, default=2)
    t.add_argument("--delta", type=float, default=0.1)

    def models(sp):
        sp.add_argument("models", nargs="+", help="model spec files or directories of *.json specs")
        sp.add_argument("--max-len", type=int, default=64)

    def targets(sp):
        g = sp.add_mutually_exclusive_group()
        g.add_argument("--target", type=int, help="target attribute value (length by default)")
        g.add_argument("--ratios", type=_ratios, help="length targets as ratios of each reference length")

    def beam_opts(sp):
        sp.add_argument("--beam-size", type=int, default=5)
        sp.add_argument("-k", type=int, default=100, help="candidates per hypothesis")
        sp.add_argument("--keep-all-complete", action="store_true")
        sp.add_argument("--dump-beam", action="store_true", help="include per-step score arrays")

    models(sub.add_parser("exact", help="exact global mode"))
    sp = sub.add_parser("exact-cond", help="exact mode conditioned on length")
    models(sp)
    targets(sp)
    sp = sub.add_parser("top-n", help="the n most probable sequences")
    models(sp)
    sp.add_argument("-n", type=int, default=5)
    sp = sub.add_parser("beam", help="standard beam search")
    models(sp)
    beam_opts(sp)
    sp = sub.add_parser("beam-forced", help="length-forced beam search")
    models(sp)
    targets(sp)
    beam_opts(sp)
    sp = sub.add_parser("beam-cond", help="attribute-conditional beam search")
    models(sp)
    targets(sp)
    beam_opts(sp)
    sp.add_argument("--alpha", type=float, default=1.0)
    sp.add_argument("--attribute", default="length", choices=["length", "empty", "rare_count", "typo_count"])
    sp.add_argument("--predictor", default="exact", choices=["exact", "mc", "tabular", "uniform"])
    sp.add_argument("--predictor-samples", type=int, default=1000)
    sp.add_argument("--unbucketed", action="store_true", help="exact remaining-length classes")
    sp = sub.add_parser("sample", help="ancestral samples")
    models(sp)
    sp.add_argument("-n", type=int, default=5, dest="n_samples")
    sp.add_argument("--temperature", type=float, default=1.0)

    sp = sub.add_parser("compare", help="win-rate table of two result files")
    sp.add_argument("results_a")
    sp.add_argument("results_b")
    sp.add_argument("--rows", action="store_true", help="emit per-input rows as JSONL instead")

    sp = sub.add_parser("scatter", help="mode vs mean sample log-probability (CSV)")
    models(sp)
    sp.add_argument("-n", type=int, default=5, dest="n_samples")

    sp = sub.add_parser("typicality", help="typical-set membership of sampled sequences")
    sp.add_argument("model")
    sp.add_argument("sequences", help="JSONL with a 'tokens' symbol list per line")
    sp.add_argument("--epsilon", type=float, required=True)
    sp.add_argument("--entropy-samples", type=int, default=1000)
    sp.add_argument("--max-len", type=int, default=256)

    sp = sub.add_parser("empty-report", help="empty-mode rate by reference-length bin (CSV)")
    models(sp)
    sp.add_argument("--bins", type=int, default=10)

    sp = sub.add_parser("run", help="run an experiment config file")
    sp.add_argument("config")
    return p


def _params(args) -> MethodParams:
    return MethodParams(
        max_len=args.max_len,
        target=getattr(args, "target", None),
        ratios=getattr(args, "ratios", None),
        n=getattr(args, "n", 5),
        beam_size=getattr(args, "beam_size", 5),
        k=getattr(args, "k", 100),
        alpha=getattr(args, "alpha", 1.0),
        keep_all_complete=getattr(args, "keep_all_complete", False),
        attribute=getattr(args, "attribute", "length"),
        predictor=getattr(args, "predictor", "exact"),
        predictor_samples=getattr(args, "predictor_samples", 1000),
        bucketed=not getattr(args, "unbucketed", False),
        n_samples=getattr(args, "n_samples", 5),
        temperature=getattr(args, "temperature", 1.0),
        dump_beam=getattr(args, "dump_beam", False),
        budget_nodes=args.budget_nodes,
    )


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _dispatch(args) -> int:
    if args.workers < 1:
        raise ConfigError("--workers", "must be >= 1")
    if args.budget_nodes < 1:
        raise ConfigError("--budget-nodes", "must be >= 1")
    budget = SearchBudget(max_nodes=args.budget_nodes)
    cmd = args.command

    if cmd == "train-ngram":
        try:
            corpus = read_corpus(args.corpus)
        except OSError as exc:
            raise ConfigError("corpus", str(exc)) from exc
        if args.order < 1 or args.delta <= 0:
            raise ConfigError("--order/--delta", "order must be >= 1 and delta positive")
        model = train_ngram(corpus, args.order, args.delta)
        _emit(json.dumps(model.to_json(), indent=1) + "\n", args.out)
        return EXIT_OK

    if cmd == "compare":
        try:
            a, b = read_jsonl(args.results_a), read_jsonl(args.results_b)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("results", str(exc)) from exc
        try:
            rows, table = compare(a, b)
        except KeyMismatch as exc:
            raise ConfigError("results", str(exc)) from exc
        if args.rows:
            _emit(to_jsonl(asdict(r) for r in rows), args.out)
        else:
            _emit(to_csv([w.to_row() for w in table], WIN_RATE_COLUMNS), args.out)
        return EXIT_OK

    if cmd == "typicality":
        model = load_model(args.model)
        try:
            records = read_jsonl(args.sequences)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("sequences", str(exc)) from exc
        seqs = []
        for i, rec in enumerate(records):
            if "tokens" not in rec:
                raise ConfigError(f"sequences[{i}].tokens", "missing")
            seqs.append(Sequence.of(model.vocab.encode(rec["tokens"]), model.vocab))
        if not args.epsilon > 0:
            raise ConfigError("--epsilon", "must be positive")
        rng = input_rng(args.seed, Path(args.model).stem)
        rows = typicality_report(model, seqs, args.epsilon, args.entropy_samples, rng, args.max_len)
        out = []
        for rec, row in zip(records, rows):
            out.append({
                "input_id": rec.get("input_id", Path(args.model).stem),
                "sample_index": rec.get("sample_index", row.index),
                "nll": row.nll,
                "entropy_estimate": row.entropy_estimate,
                "in_typical_set": bool(row.in_typical_set),
            })
        _emit(to_jsonl(out), args.out)
        return EXIT_OK

    if cmd == "run":
        config = ExperimentConfig.load(args.config)
        records = run(config)
        _emit(to_jsonl(records), config.out or args.out)
        return EXIT_PARTIAL if any("error" in r for r in records) else EXIT_OK

    if args.max_len < 1:
        raise ConfigError("--max-len", "must be >= 1")
    inputs = discover_inputs(args.models)

    if cmd == "scatter":
        rows = scatter_export(inputs, args.n_samples, args.seed, args.max_len, budget)
        _emit(to_csv([asdict(r) for r in rows], SCATTER_COLUMNS), args.out)
        return EXIT_OK
    if cmd == "empty-report":
        bins = empty_report_for_inputs(inputs, args.bins, args.seed, args.max_len, budget)
        _emit(to_csv([b.to_json() for b in bins], EMPTY_REPORT_COLUMNS), args.out)
        return EXIT_OK

    records = run_method(cmd, inputs, _params(args), args.seed, args.workers)
    _emit(to_jsonl(records), args.out)
    return EXIT_PARTIAL if any("error" in r for r in records) else EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"modesearch: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
