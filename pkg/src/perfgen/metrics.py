"""Corpus-level metrics over per-problem outcomes, and their report renderings.

Three headline numbers per (strategy, k): the share of problems solved at all,
the share whose best correct program beats the reference by more than 10%
total runtime (strict 0.9 factor), and the aggregate speedup over solved
problems. Arithmetic stays exact (Fraction) until rendering.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from perfgen.pipeline import ProblemResult


@dataclass(frozen=True)
class RunOutcome:
    """Narrow projection of a problem run, sufficient for metric aggregation."""

    problem_id: str
    strategy: str
    solved: bool
    candidate_total: Fraction | None
    reference_total: Fraction | None
    failure: str | None = None

    @staticmethod
    def from_result(result: ProblemResult) -> "RunOutcome":
        return RunOutcome(
            problem_id=result.problem_id,
            strategy=result.strategy,
            solved=result.solved,
            candidate_total=result.final_total,
            reference_total=result.reference_total,
            failure=result.failure,
        )


@dataclass
class ProblemBreakdown:
    problem_id: str
    solved: bool
    optimized: bool
    candidate_total: Fraction | None
    reference_total: Fraction | None


@dataclass
class MetricsSummary:
    strategy: str
    k: int
    n_problems: int
    pct_correct: Fraction
    pct_opt: Fraction
    speedup: Fraction | None  # None when no problem was solved
    breakdown: list[ProblemBreakdown] = field(default_factory=list)
    n_infrastructure_failures: int = 0


def _coerce(results: Iterable) -> list[RunOutcome]:
    coerced = []
    for result in results:
        coerced.append(
            RunOutcome.from_result(result) if isinstance(result, ProblemResult) else result
        )
    return coerced


def outcome_is_optimized(candidate_total: Fraction, reference_total: Fraction) -> bool:
    # Strict: exactly 0.9x the reference is not optimized.
    return candidate_total * 10 < reference_total * 9


def summarize(results: Sequence, k: int) -> MetricsSummary:
    """Aggregate one strategy's problem outcomes into the three corpus metrics.

    Infrastructure failures are counted separately and never enter N; an
    unsolved problem contributes to N only.
    """
    outcomes = _coerce(results)
    if not outcomes:
        raise ValueError("cannot summarize an empty result set")
    strategies = {o.strategy for o in outcomes}
    if len(strategies) > 1:
        raise ValueError(f"mixed strategies in one summary: {sorted(strategies)}")
    usable = [o for o in outcomes if o.failure is None]
    n_failures = len(outcomes) - len(usable)
    if not usable:
        raise ValueError("all results are infrastructure failures")

    breakdown: list[ProblemBreakdown] = []
    n_solved = 0
    n_opt = 0
    sum_reference = Fraction(0)
    sum_candidate = Fraction(0)
    for outcome in usable:
        optimized = False
        if outcome.solved:
            if outcome.candidate_total is None or outcome.reference_total is None:
                raise ValueError(
                    f"solved problem {outcome.problem_id!r} lacks timing totals"
                )
            n_solved += 1
            sum_reference += outcome.reference_total
            sum_candidate += outcome.candidate_total
            optimized = outcome_is_optimized(outcome.candidate_total, outcome.reference_total)
            if optimized:
                n_opt += 1
        breakdown.append(
            ProblemBreakdown(
                problem_id=outcome.problem_id,
                solved=outcome.solved,
                optimized=optimized,
                candidate_total=outcome.candidate_total,
                reference_total=outcome.reference_total,
            )
        )
    total = len(usable)
    return MetricsSummary(
        strategy=next(iter(strategies)),
        k=k,
        n_problems=total,
        pct_correct=Fraction(100 * n_solved, total),
        pct_opt=Fraction(100 * n_opt, total),
        speedup=Fraction(sum_reference, sum_candidate) if n_solved else None,
        breakdown=breakdown,
        n_infrastructure_failures=n_failures,
    )


def common_subset(results_by_strategy: dict[str, Sequence]) -> dict[str, list[RunOutcome]]:
    """Restrict every strategy's results to problems all strategies solved.

    Time-derived comparisons across strategies are only consistent on this
    shared subset.
    """
    coerced = {name: _coerce(results) for name, results in results_by_strategy.items()}
    solved_sets = [
        {o.problem_id for o in outcomes if o.failure is None and o.solved}
        for outcomes in coerced.values()
    ]
    shared = set.intersection(*solved_sets) if solved_sets else set()
    return {
        name: [o for o in outcomes if o.problem_id in shared]
        for name, outcomes in coerced.items()
    }


def _fmt(value: Fraction | None, decimals: int = 2) -> str:
    if value is None:
        return "-"
    return f"{float(value):.{decimals}f}"


def _fmt_delta(value: Fraction, base: Fraction) -> str:
    delta = float(value - base)
    sign = "+" if delta >= 0 else "-"
    return f"({sign}{abs(delta):.2f})"


def render_table(summaries: Sequence[MetricsSummary], baseline: str | None = "base") -> str:
    """Aligned text table, one row per (strategy, k), with deltas vs the baseline row."""
    baselines: dict[int, MetricsSummary] = {
        s.k: s for s in summaries if baseline is not None and s.strategy == baseline
    }
    header = ["Strategy", "k", "N", "%Opt", "%Correct", "Speedup"]
    rows = [header]
    for summary in summaries:
        base = baselines.get(summary.k)
        annotate = base is not None and base is not summary
        opt = _fmt(summary.pct_opt)
        correct = _fmt(summary.pct_correct)
        if annotate:
            opt += _fmt_delta(summary.pct_opt, base.pct_opt)
            correct += _fmt_delta(summary.pct_correct, base.pct_correct)
        rows.append(
            [
                summary.strategy,
                str(summary.k),
                str(summary.n_problems),
                opt,
                correct,
                _fmt(summary.speedup),
            ]
        )
    widths = [max(len(row[col]) for row in rows) for col in range(len(header))]
    lines = []
    for index, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip())
        if index == 0:
            lines.append("  ".join("-" * width for width in widths))
    return "\n".join(lines) + "\n"


def summary_to_dict(summary: MetricsSummary) -> dict:
    return {
        "strategy": summary.strategy,
        "k": summary.k,
        "n_problems": summary.n_problems,
        "n_infrastructure_failures": summary.n_infrastructure_failures,
        "pct_correct": round(float(summary.pct_correct), 4),
        "pct_opt": round(float(summary.pct_opt), 4),
        "speedup": None if summary.speedup is None else round(float(summary.speedup), 4),
        "exact": {
            "pct_correct": str(summary.pct_correct),
            "pct_opt": str(summary.pct_opt),
            "speedup": None if summary.speedup is None else str(summary.speedup),
        },
        "problems": [
            {
                "problem_id": row.problem_id,
                "solved": row.solved,
                "optimized": row.optimized,
                "candidate_total_ns": None
                if row.candidate_total is None
                else str(row.candidate_total),
                "reference_total_ns": None
                if row.reference_total is None
                else str(row.reference_total),
            }
            for row in summary.breakdown
        ],
    }


def write_json(summaries: Sequence[MetricsSummary], path) -> None:
    payload = {"summaries": [summary_to_dict(s) for s in summaries]}
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2)
        handle.write("\n")


def render_csv(summaries: Sequence[MetricsSummary]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["strategy", "k", "n_problems", "pct_opt", "pct_correct", "speedup"])
    for summary in summaries:
        writer.writerow(
            [
                summary.strategy,
                summary.k,
                summary.n_problems,
                float(summary.pct_opt),
                float(summary.pct_correct),
                "" if summary.speedup is None else float(summary.speedup),
            ]
        )
    return buffer.getvalue()


def write_csv(summaries: Sequence[MetricsSummary], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(render_csv(summaries))
