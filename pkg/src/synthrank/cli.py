"""Command-line entry point: ``synthrank <command> --config run.yaml ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence

from .config import load_config
from .dataset import AblationVariant
from .errors import PreconditionError, SynthRankError
from .pipeline import MODES, CommandResult, cmd_build, cmd_evaluate, cmd_index, cmd_rag, cmd_synthesize
from .rag import RAG_PRESETS

logger = logging.getLogger("synthrank")

EXIT_OK, EXIT_RUNTIME, EXIT_PRECONDITION = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="synthrank", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name: str, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="run configuration (YAML)")
        p.add_argument("--seed", type=int, help="override the config's rng seed")
        return p

    p = command("synthesize", "generate, judge and filter synthetic pairs")
    p.add_argument("--seed-queries", required=True, help="seed queries JSONL")

    p = command("build", "mix pools into an SFT file and training manifest")
    p.add_argument("--seed-pool", required=True, help="seed-pool pairs JSONL")
    p.add_argument("--synth-pairs", required=True, help="filtered synthesized pairs JSONL")
    p.add_argument("--ablation", choices=[v.value for v in AblationVariant], default=AblationVariant.FULL.value)

    p = command("index", "build and save a BM25 index")
    p.add_argument("--corpus", required=True, help="documents JSONL")

    p = command("evaluate", "retrieve (and optionally rerank), then score")
    p.add_argument("--qrels", required=True)
    p.add_argument("--corpus")
    p.add_argument("--queries")
    p.add_argument("--index", help="prebuilt index to load instead of indexing --corpus")
    p.add_argument("--mode", choices=MODES, default="retrieve_only")
    p.add_argument("--og-run", help="run under the original instructions (paired evaluation)")
    p.add_argument("--new-run", help="run under the modified instructions (paired evaluation)")

    p = command("rag", "multiple-choice QA over a retrieved and reranked corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--preset", choices=sorted(RAG_PRESETS), help="override rag.preset from the config")
    p.add_argument("--mode", choices=MODES, default="rerank")
    return parser


def dispatch(args: argparse.Namespace) -> CommandResult:
    config = load_config(args.config, seed=args.seed)
    if args.command == "synthesize":
        return cmd_synthesize(config, args.seed_queries)
    if args.command == "build":
        return cmd_build(config, args.seed_pool, args.synth_pairs, args.ablation)
    if args.command == "index":
        return cmd_index(config, args.corpus)
    if args.command == "evaluate":
        return cmd_evaluate(
            config,
            args.qrels,
            corpus_path=args.corpus,
            queries_path=args.queries,
            mode=args.mode,
            index_path=args.index,
            og_run=args.og_run,
            new_run=args.new_run,
        )
    return cmd_rag(config, args.corpus, args.questions, args.preset, args.mode)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        result = dispatch(args)
    except PreconditionError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_PRECONDITION
    except SynthRankError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME
    if result.table:
        print(result.table)
    print(json.dumps({name: str(path) for name, path in result.files.items()}, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
