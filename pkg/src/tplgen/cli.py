"""Command-line pipeline: validate, count, sample, augment, eval.

Stages hand off through files so every artifact (template sets, augmented
corpora, raw model outputs, reports) is inspectable and reproducible. Each
randomized subcommand demands an explicit seed, refuses to clobber existing
outputs without --overwrite, and drops a sidecar manifest recording the tool
version, seeds, and input digests.

Exit codes: 0 ok, 1 validation failure, 2 I/O failure, 3 remote-client failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from collections import Counter
from pathlib import Path

from . import __version__
from .augment import (
    AugmentPolicy,
    CorpusError,
    apply_templates,
    load_corpus,
    write_corpus,
    write_rejects,
)
from .evalkit import (
    ClientError,
    CoverageError,
    EmbeddingScorer,
    HttpClient,
    load_eval_items,
    run_eval,
    write_report,
)
from .grammar import GrammarError, count_templates, validate_grammar
from .pattern_tree import (
    TreeStructureError,
    accumulate_weights,
    load_grammar_file,
    total_count,
)
from .sampler import read_template_set, sample_distinct, write_template_set

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_CLIENT = 3

DEFAULT_GRAMMAR = Path(__file__).parent / "data" / "default_grammar.json"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tplgen",
        description="Generate instruction templates, augment corpora, evaluate template sensitivity.",
    )
    parser.add_argument("--version", action="version", version=f"tplgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_grammar(p: argparse.ArgumentParser) -> None:
        p.add_argument("--grammar", default=str(DEFAULT_GRAMMAR), help="grammar JSON file")
        p.add_argument("--strict", action="store_true", help="reject unknown keys and orphan sets")

    p_validate = sub.add_parser("validate", help="check a grammar file")
    add_grammar(p_validate)

    p_count = sub.add_parser("count", help="per-meta template counts and total")
    add_grammar(p_count)

    p_sample = sub.add_parser("sample", help="draw K distinct templates")
    add_grammar(p_sample)
    p_sample.add_argument("--scale", type=int, required=True, help="number of templates K")
    p_sample.add_argument("--seed", type=int, required=True)
    p_sample.add_argument("--out", required=True, help="template set output file")
    p_sample.add_argument(
        "--nested",
        action="store_true",
        help="prefix mode: same seed at a larger scale extends this sample",
    )
    p_sample.add_argument("--overwrite", action="store_true")

    p_augment = sub.add_parser("augment", help="rewrite a corpus with sampled templates")
    p_augment.add_argument("--in", dest="in_path", required=True, help="input corpus JSON")
    p_augment.add_argument("--templates", required=True, help="template set file")
    p_augment.add_argument("--out", required=True, help="augmented corpus output")
    p_augment.add_argument(
        "--policy", choices=["per_record_random", "round_robin"], default="per_record_random"
    )
    p_augment.add_argument("--turns", choices=["first_human", "all_human"], default="first_human")
    p_augment.add_argument("--seed", type=int, help="required for per_record_random")
    p_augment.add_argument("--rejects", help="rejects report path (default: <out>.rejects.jsonl)")
    p_augment.add_argument("--overwrite", action="store_true")

    p_eval = sub.add_parser("eval", help="run a templated benchmark against a model")
    p_eval.add_argument("--in", dest="in_path", required=True, help="eval items (LDJSON)")
    p_eval.add_argument("--templates", required=True, help="template set file")
    p_eval.add_argument("--out", required=True, help="report JSON output (CSV twin alongside)")
    p_eval.add_argument("--endpoint", help="model endpoint URL; omit to replay from --raw")
    p_eval.add_argument("--raw", help="raw outputs file (default: <out>.raw.jsonl)")
    p_eval.add_argument("--concurrency", type=int, default=4)
    p_eval.add_argument("--retries", type=int, default=2)
    p_eval.add_argument("--timeout", type=float, default=60.0)
    p_eval.add_argument("--embed-endpoint", help="embeddings endpoint for the similarity fallback")
    p_eval.add_argument("--overwrite", action="store_true")

    return parser


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(out: Path, command: str, inputs: list[Path], seed: int | None, options: dict) -> None:
    manifest = {
        "tool": "tplgen",
        "version": __version__,
        "command": command,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "options": options,
    }
    manifest_path = Path(str(out) + ".manifest.json")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _refuse_existing(path: Path, overwrite: bool) -> None:
    if path.exists() and not overwrite:
        raise FileExistsError(f"{path} exists; pass --overwrite to replace it")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    grammar, tree = load_grammar_file(args.grammar, strict=args.strict, accumulate=False)
    diagnostics = validate_grammar(grammar, strict=args.strict)
    errors = [d for d in diagnostics if d.severity == "error"]
    for diagnostic in diagnostics:
        print(diagnostic, file=sys.stderr)
    if errors:
        print(f"{len(errors)} error(s) in {args.grammar}", file=sys.stderr)
        return EXIT_VALIDATION
    accumulate_weights(tree, grammar)
    print(f"ok: {grammar.meta_count} meta templates, {total_count(tree)} total templates")
    return EXIT_OK


def cmd_count(args: argparse.Namespace) -> int:
    grammar, tree = load_grammar_file(args.grammar, strict=args.strict)
    for meta in sorted(grammar.meta_templates, key=lambda m: m.id):
        print(f"meta {meta.id} {count_templates(meta, grammar)}")
    print(f"metas {grammar.meta_count}")
    print(f"total {total_count(tree)}")
    return EXIT_OK


def cmd_sample(args: argparse.Namespace) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.overwrite)
    grammar, tree = load_grammar_file(args.grammar, strict=args.strict)
    template_set = sample_distinct(tree, grammar, args.scale, args.seed, nested=args.nested)
    write_template_set(template_set, out)
    _write_manifest(
        out,
        "sample",
        [Path(args.grammar)],
        args.seed,
        {"scale": args.scale, "nested": args.nested},
    )
    print(f"wrote {template_set.scale} templates (space of {template_set.total}) to {out}")
    return EXIT_OK


def cmd_augment(args: argparse.Namespace) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.overwrite)
    policy = AugmentPolicy(mode=args.policy, seed=args.seed, turns=args.turns)
    corpus, rejects = load_corpus(args.in_path)
    template_set = read_template_set(args.templates)
    augmented = apply_templates(corpus, template_set, policy)
    write_corpus(augmented, out)
    rejects_path = Path(args.rejects) if args.rejects else Path(str(out) + ".rejects.jsonl")
    write_rejects(rejects, rejects_path)
    _write_manifest(
        out,
        "augment",
        [Path(args.in_path), Path(args.templates)],
        args.seed,
        {"policy": args.policy, "turns": args.turns},
    )
    print(f"records in: {len(corpus)}, out: {len(augmented)}, rejects: {len(rejects)}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    out = Path(args.out)
    _refuse_existing(out, args.overwrite)
    csv_path = out.with_suffix(".csv")
    raw_path = Path(args.raw) if args.raw else Path(str(out) + ".raw.jsonl")

    items = load_eval_items(args.in_path)
    template_set = read_template_set(args.templates)
    client = HttpClient(args.endpoint, timeout=args.timeout) if args.endpoint else None
    scorer = EmbeddingScorer(args.embed_endpoint, timeout=args.timeout) if args.embed_endpoint else None
    stats: Counter = Counter()

    report = run_eval(
        items,
        template_set,
        client,
        raw_path,
        concurrency_limit=args.concurrency,
        max_retries=args.retries,
        scorer=scorer,
        stats=stats,
    )
    write_report(report, out, csv_path)
    _write_manifest(
        out,
        "eval",
        [Path(args.in_path), Path(args.templates)],
        None,
        {"endpoint": args.endpoint, "concurrency": args.concurrency, "retries": args.retries},
    )
    if stats.get("empty_output"):
        print(f"warning: {stats['empty_output']} empty model outputs", file=sys.stderr)
    print(
        f"items {report.n_items} templates {report.n_templates} "
        f"average {report.average:.4f} max-min {report.max_min:.4f}"
    )
    return EXIT_OK


_COMMANDS = {
    "validate": cmd_validate,
    "count": cmd_count,
    "sample": cmd_sample,
    "augment": cmd_augment,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, FileExistsError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: invalid JSON input: {exc}", file=sys.stderr)
        return EXIT_IO
    except ClientError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CLIENT
    except (GrammarError, TreeStructureError, CorpusError, CoverageError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
