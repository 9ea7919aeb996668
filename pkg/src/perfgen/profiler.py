"""Trimmed-mean runtime estimation and fastest-candidate selection.

Raw observations are integer nanoseconds; estimates are exact rationals
(Fraction) end-to-end so comparisons never suffer float drift. Rendering to
real numbers happens only at report time.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from perfgen.sandbox import ExecMode, ExecStatus, ExecutionReport


@dataclass(frozen=True)
class TimingEstimate:
    """Per-test trimmed-mean runtimes for one candidate, plus the costliest test."""

    candidate_id: str
    per_test: dict[str, Fraction]
    total: Fraction
    costliest_test: str


def trimmed_mean_ns(observations: Sequence[int]) -> Fraction:
    """Mean of the observations after dropping the single smallest and largest.

    With E observations this is the mean of the E-2 middle order statistics;
    at E = 3 it degenerates to the median.
    """
    if len(observations) < 3:
        raise ValueError("trimmed mean needs at least 3 observations")
    middle = sorted(observations)[1:-1]
    return Fraction(sum(middle), len(middle))


def estimate(report: ExecutionReport) -> TimingEstimate:
    """Turn a passing timing report into per-test estimates and their total.

    The costliest test is the argmax of the per-test estimate; ties break
    toward the lowest test index in the report's order.
    """
    if report.mode != ExecMode.TIMING:
        raise ValueError("estimate requires a timing-mode report")
    per_test: dict[str, Fraction] = {}
    costliest: str | None = None
    best = Fraction(-1)
    for outcome in report.outcomes:
        if outcome.status != ExecStatus.PASS:
            raise ValueError(
                f"cannot estimate from non-passing outcome for test {outcome.test_id!r}"
            )
        value = trimmed_mean_ns(outcome.timings_ns)
        per_test[outcome.test_id] = value
        if value > best:
            best = value
            costliest = outcome.test_id
    if costliest is None:
        raise ValueError("report carries no outcomes")
    return TimingEstimate(
        candidate_id=report.candidate_id,
        per_test=per_test,
        total=sum(per_test.values(), Fraction(0)),
        costliest_test=costliest,
    )


def fastest(estimates: Sequence[TimingEstimate]) -> str:
    """Candidate id with the minimal total; ties break toward the earliest entry."""
    if not estimates:
        raise ValueError("fastest requires at least one estimate")
    winner = estimates[0]
    for candidate in estimates[1:]:
        if candidate.total < winner.total:
            winner = candidate
    return winner.candidate_id


def is_optimized(candidate_total, reference_total) -> bool:
    """Whether the candidate beats the reference by more than 10% total runtime.

    Strict inequality: a candidate at exactly 0.9x the reference does not
    count as optimized.
    """
    cand = Fraction(candidate_total)
    ref = Fraction(reference_total)
    if cand <= 0 or ref <= 0:
        raise ValueError("totals must be positive")
    return cand * 10 < ref * 9
