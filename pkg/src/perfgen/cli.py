"""Command-line entry points: run, resume, convert, report.

Exit codes: 0 success, 1 infrastructure failure during execution, 2
configuration or usage error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from perfgen import __version__, dataset, metrics, runlog
from perfgen.config import ConfigError, RunConfig
from perfgen.converters import convert_file
from perfgen.dataset import Benchmark
from perfgen.pipeline import STRATEGIES, CorrectnessFlow, PipelineEngine
from perfgen.sandbox import SandboxError, SandboxExecutor

EXIT_OK = 0
EXIT_INFRA = 1
EXIT_CONFIG = 2


def _candidate_source_path(out_dir: Path, strategy: str, candidate_id: str) -> Path:
    safe = candidate_id.replace("::", "__").replace("/", "_")
    return out_dir / "sources" / strategy / f"{safe}.py"


def _save_candidate(out_dir: Path, strategy: str, result) -> None:
    if result.final_candidate is None:
        return
    path = _candidate_source_path(out_dir, strategy, result.final_candidate.id)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(result.final_candidate.source + "\n", encoding="utf-8")


def _strategy_spec(name: str, config: RunConfig):
    spec = STRATEGIES[name]
    if config.correctness_flow is not None:
        spec = dataclasses.replace(
            spec, correctness_flow=CorrectnessFlow(config.correctness_flow)
        )
    return spec


def _execute(config: RunConfig, out_dir: Path, *, append: bool, completed: set) -> int:
    load = dataset.load_corpus(config.corpus, Benchmark(config.benchmark))
    if load.rejected:
        for reject in load.rejected:
            print(f"corpus: rejected {reject.reason}", file=sys.stderr)
    backend = config.build_backend()
    shim_argv = [sys.executable, config.shim] if config.shim else None
    executor = SandboxExecutor(shim_argv, worker_cap=config.worker_cap)
    limits = config.limits()

    corpus, sanitization = dataset.sanitize(load.problems, executor, limits)
    (out_dir / "sanitization.json").write_text(
        json.dumps(
            {
                "total_in": sanitization.total_in,
                "total_out": sanitization.total_out,
                "excluded": [
                    {"problem": p, "test": t, "reason": r} for p, t, r in sanitization.excluded
                ],
            },
            indent=2,
        )
        + "\n",
        encoding="utf-8",
    )

    log_lock = threading.Lock()
    had_failure = False
    with runlog.RunLogWriter(out_dir / "run.log", append=append) as log:
        if not append:
            log.write(
                {
                    "type": runlog.HEADER_TYPE,
                    "version": 1,
                    "tool": f"perfgen {__version__}",
                    "config": config.to_dict(),
                    "host": runlog.host_fingerprint(),
                }
            )
            log.write(
                {
                    "type": runlog.SANITIZATION_TYPE,
                    "total_in": sanitization.total_in,
                    "total_out": sanitization.total_out,
                    "excluded": sanitization.excluded,
                }
            )

        def run_one(strategy_name: str, problem) -> None:
            nonlocal had_failure
            engine = PipelineEngine(
                backend,
                executor,
                limits,
                nucleus_temperature=config.nucleus_temperature,
                nucleus_top_p=config.nucleus_top_p,
            )
            result = engine.run_strategy(problem, _strategy_spec(strategy_name, config), config.k)
            with log_lock:
                for event in result.stage_log:
                    log.write(
                        {
                            "type": runlog.STAGE_TYPE,
                            "problem": problem.id,
                            "strategy": strategy_name,
                            **event,
                        }
                    )
                log.write(runlog.result_event(result, config.k))
                _save_candidate(out_dir, strategy_name, result)
            if result.failure is not None:
                had_failure = True
                print(
                    f"infrastructure failure on {problem.id} ({strategy_name}): {result.failure}",
                    file=sys.stderr,
                )

        for strategy_name in config.strategies:
            pending = [p for p in corpus if (p.id, strategy_name) not in completed]
            if config.worker_cap > 1:
                with ThreadPoolExecutor(max_workers=config.worker_cap) as pool:
                    list(pool.map(lambda p: run_one(strategy_name, p), pending))
            else:
                for problem in pending:
                    run_one(strategy_name, problem)

    _write_reports(config, out_dir)
    return EXIT_INFRA if had_failure else EXIT_OK


def _write_reports(config: RunConfig, out_dir: Path) -> None:
    state = runlog.read_log(out_dir / "run.log")
    summaries = []
    for strategy_name in config.strategies:
        outcomes = state.outcomes(strategy_name)
        if any(o.failure is None for o in outcomes):
            summaries.append(metrics.summarize(outcomes, config.k))
    if not summaries:
        return
    table = metrics.render_table(summaries)
    (out_dir / "report.txt").write_text(table, encoding="utf-8")
    metrics.write_json(summaries, out_dir / "metrics.json")
    metrics.write_csv(summaries, out_dir / "metrics.csv")
    print(table, end="")


def cmd_run(args: argparse.Namespace) -> int:
    config = RunConfig(
        corpus=args.corpus,
        benchmark=args.benchmark,
        strategies=args.strategy,
        k=args.k,
        runs_per_test=args.runs_per_test,
        wall_timeout_s=args.timeout,
        backend=args.backend,
        transcript=args.transcript,
        base_url=args.base_url,
        model=args.model,
        nucleus_temperature=args.temperature,
        nucleus_top_p=args.top_p,
        correctness_flow=args.correctness_flow,
        worker_cap=args.workers,
        out_dir=args.out,
        seed=args.seed,
        shim=args.shim,
    )
    try:
        config.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    try:
        return _execute(config, out_dir, append=False, completed=set())
    except SandboxError as exc:
        print(f"sandbox failure: {exc}", file=sys.stderr)
        return EXIT_INFRA


def cmd_resume(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    try:
        state = runlog.read_log(run_dir / "run.log")
    except runlog.RunLogError as exc:
        print(f"cannot resume: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = RunConfig.from_dict(state.header["config"])
        config.validate()
    except (KeyError, TypeError, ConfigError) as exc:
        print(f"cannot resume, bad header config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    completed = state.completed()
    print(f"resuming: {len(completed)} problem runs already complete")
    try:
        return _execute(config, run_dir, append=True, completed=completed)
    except SandboxError as exc:
        print(f"sandbox failure: {exc}", file=sys.stderr)
        return EXIT_INFRA


def cmd_convert(args: argparse.Namespace) -> int:
    try:
        benchmark = Benchmark(args.benchmark)
    except ValueError:
        print(f"unknown benchmark {args.benchmark!r}", file=sys.stderr)
        return EXIT_CONFIG
    if not Path(args.input).exists():
        print(f"input file {args.input!r} does not exist", file=sys.stderr)
        return EXIT_CONFIG
    problems, report = convert_file(args.input, benchmark)
    dataset.write_corpus(problems, args.out)
    print(f"converted {report.converted}/{report.total_in} records -> {args.out}")
    for line_no, reason in report.rejected:
        print(f"rejected line {line_no}: {reason}", file=sys.stderr)
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    try:
        state = runlog.read_log(run_dir / "run.log")
    except runlog.RunLogError as exc:
        print(f"cannot report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    config_raw = state.header.get("config", {})
    k = config_raw.get("k", 1)
    strategies = config_raw.get("strategies", [])
    by_strategy = {name: state.outcomes(name) for name in strategies}
    by_strategy = {name: rows for name, rows in by_strategy.items() if rows}
    if not by_strategy:
        print("no completed results in run log", file=sys.stderr)
        return EXIT_CONFIG
    summaries = [metrics.summarize(rows, k) for rows in by_strategy.values()]
    print(metrics.render_table(summaries), end="")
    if args.common_subset and len(by_strategy) > 1:
        shared = metrics.common_subset(by_strategy)
        shared_n = len(next(iter(shared.values()))) if shared else 0
        print(f"\ncommon subset (problems solved by every strategy, N={shared_n}):")
        shared_summaries = [
            metrics.summarize(rows, k) for rows in shared.values() if rows
        ]
        if shared_summaries:
            print(metrics.render_table(shared_summaries), end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="perfgen",
        description="Generate, repair, and runtime-optimize candidate programs over a benchmark corpus.",
    )
    parser.add_argument("--version", action="version", version=f"perfgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute strategies over a corpus")
    run.add_argument("--corpus", required=True, help="unified JSONL corpus path")
    run.add_argument("--benchmark", default="custom", choices=[b.value for b in Benchmark])
    run.add_argument(
        "--strategy",
        action="append",
        default=None,
        help="strategy name (repeatable); defaults to perfcodegen",
    )
    run.add_argument("--k", type=int, default=1, help="sampling budget per problem")
    run.add_argument("--runs-per-test", type=int, default=12, dest="runs_per_test")
    run.add_argument("--timeout", type=float, default=10.0, help="wall seconds per test execution")
    run.add_argument("--backend", default="replay", choices=["replay", "live"])
    run.add_argument("--transcript", default=None, help="replay transcript JSONL path")
    run.add_argument("--base-url", default=None, dest="base_url")
    run.add_argument("--model", default=None)
    run.add_argument("--temperature", type=float, default=0.8, help="nucleus temperature")
    run.add_argument("--top-p", type=float, default=0.95, dest="top_p")
    run.add_argument(
        "--correctness-flow",
        default=None,
        dest="correctness_flow",
        choices=[f.value for f in CorrectnessFlow],
        help="override every strategy's correctness flow",
    )
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--out", default="runs/latest", help="run directory")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--shim", default=None, help="path to the guest shim script")
    run.set_defaults(func=cmd_run)

    resume = sub.add_parser("resume", help="continue an interrupted run directory")
    resume.add_argument("run_dir")
    resume.set_defaults(func=cmd_resume)

    convert = sub.add_parser("convert", help="convert an upstream dataset to the corpus schema")
    convert.add_argument("--benchmark", required=True, choices=["humaneval", "mbpp", "apps"])
    convert.add_argument("--in", required=True, dest="input", help="upstream JSONL file")
    convert.add_argument("--out", required=True, help="corpus JSONL output path")
    convert.set_defaults(func=cmd_convert)

    report = sub.add_parser("report", help="re-render metrics from a run directory")
    report.add_argument("run_dir")
    report.add_argument("--common-subset", action="store_true", dest="common_subset")
    report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "strategy", None) is None and args.command == "run":
        args.strategy = ["perfcodegen"]
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
