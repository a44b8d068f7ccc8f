"""Command-line entry point.

Exit codes:
  0  success
  2  configuration or usage error
  3  corpus error
  4  gateway / backend failure
  5  pipeline stage failure
  6  empty export (no usable completed runs)
  7  evaluation input error (missing summary artifact, malformed ratings file)
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from importlib import resources
from pathlib import Path
from typing import Sequence

from .artifacts import load_run_dir, write_run
from .config import AppConfig, load_config
from .distill import ExportError, TaskMix, export_training_mix, load_runs, write_jsonl
from .errors import CompareError, ConfigError, CorpusError, GatewayError, StageError
from .evaluation import EvalInputError, evaluate_summary, read_ratings, throughput_bench
from .gateway import DeterministicBackend, Gateway, RemoteBackend
from .ingest import read_manifest
from .lexicon import default_lexicon
from .model import dumps, to_data
from .pipeline import resolve_query, run_pipeline_detailed

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CORPUS = 3
EXIT_GATEWAY = 4
EXIT_STAGE = 5
EXIT_EMPTY_EXPORT = 6
EXIT_EVAL_INPUT = 7

log = logging.getLogger("abcompare")


def toy_corpus_path() -> Path:
    return Path(str(resources.files("abcompare.data").joinpath("toy_corpus.json")))


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, StageError):
        return exit_code_for(exc.cause) if isinstance(exc.cause, (GatewayError, CorpusError)) else EXIT_STAGE
    for tp, code in ((ConfigError, EXIT_CONFIG), (CorpusError, EXIT_CORPUS), (GatewayError, EXIT_GATEWAY),
                     (EvalInputError, EXIT_EVAL_INPUT), (ExportError, EXIT_EMPTY_EXPORT)):
        if isinstance(exc, tp):
            return code
    return EXIT_STAGE


# ---------------------------------------------------------------------------
# shared setup
# ---------------------------------------------------------------------------

def app_config(args) -> AppConfig:
    cfg = load_config(args.config) if args.config else AppConfig()
    pipeline = cfg.pipeline
    if getattr(args, "cr", None):
        pipeline = pipeline.replace(cr_enabled=args.cr == "on")
    if getattr(args, "top_k", None) is not None:
        pipeline = pipeline.replace(top_k_rows=args.top_k)
    seed = cfg.seed if args.seed is None else args.seed
    return AppConfig(pipeline, cfg.gateway, seed)


def make_gateway(backend: str, cfg: AppConfig) -> Gateway:
    if backend == "det":
        be = DeterministicBackend(default_lexicon())
    else:
        g = cfg.gateway
        if not g.endpoint_url:
            raise ConfigError("--backend remote needs [gateway] endpoint_url in the config file")
        import random

        be = RemoteBackend(g.endpoint_url, api_key_env=g.api_key_env, timeout_ms=g.timeout_ms,
                           rate_per_s=g.rate_per_s or None, rng=random.Random(cfg.seed))
    return Gateway(be, context_window=cfg.pipeline.budget.context_window, max_parallel=cfg.gateway.max_parallel)


def _corpus(args) -> Path:
    return Path(args.corpus) if args.corpus else toy_corpus_path()


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = app_config(args)
    gateway = make_gateway(args.backend, cfg)
    started = time.perf_counter()
    result = run_pipeline_detailed((args.a, args.b), _corpus(args), cfg.pipeline, gateway)
    report = evaluate_summary(result.summary, gateway, summary_id=result.run_id,
                              alias_table=result.context.sources.aliases)
    duration_ms = int((time.perf_counter() - started) * 1000)
    run_dir = write_run(result, args.out, cfg, duration_ms=duration_ms, eval_report=report)
    for w in sorted(set(result.context.warnings)):
        log.warning(w)
    print(f"run {result.run_id}: {len(result.summary.rows)} rows -> {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = app_config(args)
    loaded = load_run_dir(args.run)
    ratings = None
    if args.ratings:
        ratings = [r for r in read_ratings(args.ratings) if r.summary_id == loaded.run_id]
        if not ratings:
            raise EvalInputError(f"{args.ratings} has no ratings for summary {loaded.run_id!r}")
    lex = default_lexicon()
    extra = [(e.display_name, e.aliases) for e in (loaded.summary.entity_a, loaded.summary.entity_b)]
    if loaded.corpus is not None:
        extra += [(e.display_name, e.aliases) for e in loaded.corpus.entities]
    gateway = make_gateway(args.backend, cfg)
    report = evaluate_summary(loaded.summary, gateway, summary_id=loaded.run_id, alias_table=lex.alias_table(extra),
                              human_ratings=ratings, k=args.k, ok_is_useful=args.ok_is_useful)
    target = Path(args.report) if args.report else (
        Path(args.run) / "eval_report.json" if Path(args.run).is_dir() else Path("eval_report.json"))
    target.write_text(dumps(report) + "\n", encoding="utf-8")
    print(json.dumps({k: v for k, v in to_data(report).items() if k != "ratings"}, indent=2))
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = app_config(args)
    gateway = make_gateway(args.backend, cfg)
    manifest = read_manifest(_corpus(args))
    if args.a and args.b:
        pair = (args.a, args.b)
    else:
        if len(manifest.entities) < 2:
            raise CorpusError("benchmark corpus needs at least two entities")
        pair = (manifest.entities[0].id, manifest.entities[1].id)
    resolve_query(manifest, *pair)
    if args.queries < 1:
        raise ConfigError("--queries must be >= 1")

    def run_one(query):
        return run_pipeline_detailed(query, manifest, cfg.pipeline, gateway).stage_seconds

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        report = throughput_bench(run_one, [pair] * (args.queries + args.warmup), warmup=args.warmup,
                                  parallel=args.parallel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench_report.json").write_text(dumps(report) + "\n", encoding="utf-8")
    print(report.table())
    return EXIT_OK


def cmd_export(args) -> int:
    cfg = app_config(args)
    mix = TaskMix.parse(args.mix)
    runs = load_runs(args.runs)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        examples = export_training_mix(runs, mix, args.target, seed=cfg.seed)
    for w in caught:
        log.warning(str(w.message))
    n = write_jsonl(args.out, examples)
    print(f"wrote {n} examples to {args.out}")
    if args.target > 0 and n == 0:
        log.error("no exportable examples found under %s", args.runs)
        return EXIT_EMPTY_EXPORT
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override it")
    common.add_argument("--backend", choices=("det", "remote"), default="det")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="abcompare", description="Attributed comparative summaries of two entities.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", parents=[common], help="run the pipeline and write runs/<run_id>/")
    run.add_argument("--corpus", help="corpus manifest (default: bundled toy corpus)")
    run.add_argument("--a", required=True, help="entity A (id or name)")
    run.add_argument("--b", required=True, help="entity B (id or name)")
    run.add_argument("--cr", choices=("on", "off"))
    run.add_argument("--top-k", type=int, dest="top_k")
    run.add_argument("--out", default="runs", help="root directory for run artifacts")
    run.set_defaults(func=cmd_run)

    ev = sub.add_parser("eval", parents=[common], help="evaluate a run directory")
    ev.add_argument("--run", required=True, help="run directory or summary.json")
    ev.add_argument("--ratings", help="human ratings CSV (summary_id,row_index,rater_id,label)")
    ev.add_argument("--k", type=int, default=5, help="k for ranking precision")
    ev.add_argument("--ok-is-useful", action="store_true", dest="ok_is_useful")
    ev.add_argument("--report", help="output path (default: <run>/eval_report.json)")
    ev.set_defaults(func=cmd_eval)

    bench = sub.add_parser("bench", parents=[common], help="throughput benchmark")
    bench.add_argument("--corpus")
    bench.add_argument("--a")
    bench.add_argument("--b")
    bench.add_argument("--queries", type=int, default=20)
    bench.add_argument("--warmup", type=int, default=2)
    bench.add_argument("--parallel", type=int, default=1)
    bench.add_argument("--cr", choices=("on", "off"))
    bench.add_argument("--top-k", type=int, dest="top_k")
    bench.add_argument("--out", default="bench", help="directory for bench_report.json")
    bench.set_defaults(func=cmd_bench)

    ex = sub.add_parser("export", parents=[common], help="export a training mixture from completed runs")
    ex.add_argument("--runs", default="runs", help="root directory holding run directories")
    ex.add_argument("--target", type=int, required=True, help="number of examples")
    ex.add_argument("--mix", default="30:1:30", help="EXTRACT:ATTRIBUTE_MERGE:COMPARE weights")
    ex.add_argument("--out", default="training_mix.jsonl")
    ex.set_defaults(func=cmd_export)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        if getattr(args, "target", 0) < 0:
            raise ConfigError("--target must be >= 0")
        return args.func(args)
    except (CompareError, ValueError) as exc:
        code = exit_code_for(exc) if isinstance(exc, CompareError) else EXIT_CONFIG
        print(f"abcompare: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
