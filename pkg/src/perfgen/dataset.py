"""Benchmark corpus ingestion, normalization, and ground-truth sanitization.

A corpus is a UTF-8 JSONL file, one problem per line. Unit tests come in two
modes: ``call_based`` (an invocation expression plus an expected-value
expression) and ``stdio`` (stdin text plus expected stdout text).
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from perfgen.sandbox import ExecLimits


class Benchmark(str, Enum):
    HUMANEVAL = "humaneval"
    MBPP = "mbpp"
    APPS = "apps"
    CUSTOM = "custom"


class TestMode(str, Enum):
    CALL_BASED = "call_based"
    STDIO = "stdio"


class CorpusError(ValueError):
    """A corpus record violates the schema or a domain invariant."""


@dataclass(frozen=True)
class UnitTest:
    """One unit test; exactly the payload matching ``mode`` is populated."""

    id: str
    mode: TestMode
    call: str | None = None
    expected: str | None = None
    input: str | None = None
    output: str | None = None

    def __post_init__(self) -> None:
        if self.mode == TestMode.CALL_BASED:
            if self.call is None or self.expected is None:
                raise CorpusError(f"test {self.id!r}: call_based requires call and expected")
            if self.input is not None or self.output is not None:
                raise CorpusError(f"test {self.id!r}: call_based must not carry io payload")
        else:
            if self.input is None or self.output is None:
                raise CorpusError(f"test {self.id!r}: stdio requires input and output")
            if self.call is not None or self.expected is not None:
                raise CorpusError(f"test {self.id!r}: stdio must not carry call payload")


@dataclass
class Problem:
    """A benchmark task: description, unit tests, and reference solution(s)."""

    id: str
    benchmark: Benchmark
    description: str
    entry_point: str | None
    unit_tests: list[UnitTest]
    ground_truths: list[str]

    def __post_init__(self) -> None:
        if not self.unit_tests:
            raise CorpusError(f"problem {self.id!r}: unit_tests must be non-empty")
        if not self.ground_truths:
            raise CorpusError(f"problem {self.id!r}: ground_truths must be non-empty")
        seen = set()
        for test in self.unit_tests:
            if test.id in seen:
                raise CorpusError(f"problem {self.id!r}: duplicate test id {test.id!r}")
            seen.add(test.id)


@dataclass
class RejectedRecord:
    line: int
    reason: str


@dataclass
class CorpusLoad:
    """Well-formed problems plus per-line rejection details for the rest."""

    problems: list[Problem]
    rejected: list[RejectedRecord] = field(default_factory=list)


@dataclass
class SanitizationReport:
    """Outcome of excluding problems whose reference solutions fail their own tests."""

    total_in: int
    excluded: list[tuple[str, str, str]]  # (problem id, failing test id, reason)
    total_out: int

    def excluded_problem_ids(self) -> list[str]:
        seen: list[str] = []
        for problem_id, _, _ in self.excluded:
            if problem_id not in seen:
                seen.append(problem_id)
        return seen


def _require(record: dict, key: str, kinds: tuple[type, ...], *, nullable: bool = False):
    if key not in record:
        raise CorpusError(f"missing field {key!r}")
    value = record[key]
    if value is None:
        if nullable:
            return None
        raise CorpusError(f"field {key!r} must not be null")
    if not isinstance(value, kinds):
        raise CorpusError(f"field {key!r} has wrong type {type(value).__name__}")
    return value


def _test_from_record(index: int, raw: dict) -> UnitTest:
    if not isinstance(raw, dict):
        raise CorpusError(f"field 'tests[{index}]' must be an object")
    mode_raw = _require(raw, "mode", (str,))
    try:
        mode = TestMode(mode_raw)
    except ValueError:
        raise CorpusError(f"field 'tests[{index}].mode' has unknown value {mode_raw!r}") from None
    test_id = raw.get("id", f"t{index}")
    if not isinstance(test_id, str):
        raise CorpusError(f"field 'tests[{index}].id' has wrong type")

    def opt(key: str) -> str | None:
        value = raw.get(key)
        if value is not None and not isinstance(value, str):
            raise CorpusError(f"field 'tests[{index}].{key}' has wrong type")
        return value

    return UnitTest(
        id=test_id,
        mode=mode,
        call=opt("call"),
        expected=opt("expected"),
        input=opt("input"),
        output=opt("output"),
    )


def problem_from_record(record: dict, benchmark: Benchmark) -> Problem:
    """Build a Problem from one decoded JSONL record, validating the schema."""
    if not isinstance(record, dict):
        raise CorpusError("record is not a JSON object")
    problem_id = _require(record, "id", (str,))
    description = _require(record, "description", (str,))
    entry_point = _require(record, "entry_point", (str,), nullable=True)
    tests_raw = _require(record, "tests", (list,))
    ground_truths = _require(record, "ground_truths", (list,))
    if not all(isinstance(g, str) for g in ground_truths):
        raise CorpusError("field 'ground_truths' must contain strings")
    tests = [_test_from_record(i, t) for i, t in enumerate(tests_raw)]
    return Problem(
        id=problem_id,
        benchmark=benchmark,
        description=description,
        entry_point=entry_point,
        unit_tests=tests,
        ground_truths=list(ground_truths),
    )


def load_corpus(path: str | Path, benchmark: Benchmark) -> CorpusLoad:
    """Load a JSONL corpus; malformed records are rejected with line numbers."""
    problems: list[Problem] = []
    rejected: list[RejectedRecord] = []
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                problem = problem_from_record(record, benchmark)
                if problem.id in seen_ids:
                    raise CorpusError(f"duplicate problem id {problem.id!r}")
            except (json.JSONDecodeError, CorpusError) as exc:
                rejected.append(RejectedRecord(line=line_no, reason=f"line {line_no}: {exc}"))
                continue
            seen_ids.add(problem.id)
            problems.append(problem)
    return CorpusLoad(problems=problems, rejected=rejected)


def test_to_record(test: UnitTest) -> dict:
    record: dict = {"id": test.id, "mode": test.mode.value}
    if test.mode == TestMode.CALL_BASED:
        record["call"] = test.call
        record["expected"] = test.expected
    else:
        record["input"] = test.input
        record["output"] = test.output
    return record


def problem_to_record(problem: Problem) -> dict:
    return {
        "id": problem.id,
        "description": problem.description,
        "entry_point": problem.entry_point,
        "tests": [test_to_record(t) for t in problem.unit_tests],
        "ground_truths": list(problem.ground_truths),
    }


def dumps_corpus(problems: Iterable[Problem]) -> str:
    """Serialize to the canonical JSONL form that load_corpus round-trips."""
    lines = [json.dumps(problem_to_record(p), ensure_ascii=False) for p in problems]
    return "".join(line + "\n" for line in lines)


def write_corpus(problems: Iterable[Problem], path: str | Path) -> None:
    Path(path).write_text(dumps_corpus(problems), encoding="utf-8")


def sanitize(
    corpus: list[Problem],
    executor,
    limits: "ExecLimits | None" = None,
) -> tuple[list[Problem], SanitizationReport]:
    """Drop problems whose reference solutions cannot pass their own tests.

    A problem is retained when at least one ground truth passes every unit
    test; retained problems keep only the passing subset. Ground-truth
    timeouts count as failures, not errors; sandbox infrastructure failures
    propagate.
    """
    from perfgen.sandbox import ExecLimits, ExecStatus

    if limits is None:
        limits = ExecLimits()
    retained: list[Problem] = []
    excluded: list[tuple[str, str, str]] = []
    for problem in corpus:
        passing: list[str] = []
        failures: list[tuple[str, str, str]] = []
        for index, source in enumerate(problem.ground_truths):
            report = executor.run_correctness(
                source, problem, limits, candidate_id=f"{problem.id}::gt{index}"
            )
            if report.all_passed:
                passing.append(source)
                continue
            first_bad = next(o for o in report.outcomes if o.status != ExecStatus.PASS)
            failures.append(
                (
                    problem.id,
                    first_bad.test_id,
                    f"ground truth {index}: {first_bad.status.value}",
                )
            )
        if passing:
            retained.append(dataclasses.replace(problem, ground_truths=passing))
        else:
            excluded.extend(failures)
    report = SanitizationReport(
        total_in=len(corpus),
        excluded=excluded,
        total_out=len(retained),
    )
    return retained, report
