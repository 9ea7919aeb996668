"""Shared fixtures: an in-process executor standing in for the real sandbox,
and helpers for building replay transcripts by mirroring engine conversations.

The in-process executor is protocol-conformant at the ExecutionReport level
(same statuses, same timing semantics) but runs guest code directly in this
interpreter, so the primary suite never depends on the guest shim package.
"""

from __future__ import annotations

import io
import sys
import time
import traceback
from collections.abc import Iterator as ABCIterator
from pathlib import Path

import pytest

from perfgen.dataset import Benchmark, Problem, TestMode, UnitTest
from perfgen.llm import (
    ChatTurn,
    ReplayBackend,
    SamplingSpec,
    TranscriptEntry,
    request_fingerprint,
)
from perfgen.sandbox import (
    ExecLimits,
    ExecMode,
    ExecStatus,
    ExecutionReport,
    TestOutcome,
)

TESTS_DIR = Path(__file__).parent
FAKE_SHIM = TESTS_DIR / "fake_shim.py"


def deep_eq(actual, expected, tol: float) -> bool:
    if isinstance(actual, (int, float)) and isinstance(expected, (int, float)):
        return abs(actual - expected) <= tol
    if isinstance(actual, str) or isinstance(expected, str):
        return actual == expected
    if isinstance(actual, (list, tuple)):
        return (
            type(actual) is type(expected)
            and len(actual) == len(expected)
            and all(deep_eq(a, e, tol) for a, e in zip(actual, expected))
        )
    if isinstance(actual, dict):
        return (
            isinstance(expected, dict)
            and actual.keys() == expected.keys()
            and all(deep_eq(actual[k], expected[k], tol) for k in actual)
        )
    return actual == expected


class _Capture:
    def __enter__(self):
        self._stdout, self._stderr = sys.stdout, sys.stderr
        sys.stdout = io.StringIO()
        sys.stderr = io.StringIO()
        return sys.stdout

    def __exit__(self, *exc_info):
        sys.stdout, sys.stderr = self._stdout, self._stderr


class InProcessExecutor:
    """Protocol-conformant fake executor: real execution, no subprocess.

    Guest code is trusted test fixture code here; timeouts are not enforced.
    """

    def __init__(self):
        self.correctness_calls = 0
        self.timing_calls = 0

    def run_correctness(self, source, problem, limits, candidate_id="candidate"):
        self.correctness_calls += 1
        outcomes = self._run(source, problem, limits, runs=1)
        return ExecutionReport(candidate_id, ExecMode.CORRECTNESS, outcomes)

    def run_timing(self, source, problem, limits, candidate_id="candidate"):
        self.timing_calls += 1
        outcomes = self._run(source, problem, limits, runs=limits.runs_per_test)
        return ExecutionReport(candidate_id, ExecMode.TIMING, outcomes)

    def _run(self, source, problem, limits, runs):
        try:
            code = compile(source, "<candidate>", "exec")
        except SyntaxError:
            diagnostic = traceback.format_exc(limit=0)
            return [
                TestOutcome(t.id, ExecStatus.ERROR, message=diagnostic)
                for t in problem.unit_tests
            ]
        module_globals = None
        outcomes = []
        for test in problem.unit_tests:
            if test.mode == TestMode.CALL_BASED and module_globals is None:
                module_globals = {}
                try:
                    with _Capture():
                        exec(code, module_globals)
                except BaseException:
                    message = traceback.format_exc()
                    return [
                        TestOutcome(t.id, ExecStatus.ERROR, message=message)
                        for t in problem.unit_tests
                    ]
            outcomes.append(self._run_test(code, module_globals, test, limits, runs))
        return outcomes

    def _run_test(self, code, module_globals, test, limits, runs):
        timings = []
        for _ in range(runs):
            try:
                if test.mode == TestMode.CALL_BASED:
                    scope = dict(module_globals)
                    with _Capture():
                        start = time.perf_counter_ns()
                        value = eval(test.call, scope)
                        if isinstance(value, ABCIterator):
                            value = list(value)
                        elapsed = time.perf_counter_ns() - start
                    expected = eval(test.expected, dict(module_globals))
                else:
                    scope = {"__name__": "__main__"}
                    stdin = sys.stdin
                    sys.stdin = io.StringIO(test.input)
                    try:
                        with _Capture() as captured:
                            start = time.perf_counter_ns()
                            try:
                                exec(code, scope)
                            except SystemExit:
                                pass
                            elapsed = time.perf_counter_ns() - start
                            printed = captured.getvalue()
                    finally:
                        sys.stdin = stdin
                    value, expected = _strip_one_newline(printed), _strip_one_newline(test.output)
            except BaseException:
                return TestOutcome(test.id, ExecStatus.ERROR, message=traceback.format_exc())
            if test.mode == TestMode.CALL_BASED:
                ok = deep_eq(value, expected, limits.float_tolerance)
            else:
                ok = value == expected
            if not ok:
                return TestOutcome(
                    test.id,
                    ExecStatus.FAIL,
                    message=f"expected {expected!r}, got {value!r}"[:2000],
                )
            timings.append(max(1, elapsed))
        return TestOutcome(test.id, ExecStatus.PASS, timings_ns=timings)


def _strip_one_newline(text: str) -> str:
    return text[:-1] if text.endswith("\n") else text


# --- corpus builders --------------------------------------------------------


def call_test(test_id: str, call: str, expected: str) -> UnitTest:
    return UnitTest(id=test_id, mode=TestMode.CALL_BASED, call=call, expected=expected)


def stdio_test(test_id: str, input_text: str, output_text: str) -> UnitTest:
    return UnitTest(id=test_id, mode=TestMode.STDIO, input=input_text, output=output_text)


def make_problem(
    problem_id="p1",
    description="add two numbers",
    tests=None,
    ground_truths=None,
    benchmark=Benchmark.CUSTOM,
    entry_point=None,
) -> Problem:
    return Problem(
        id=problem_id,
        benchmark=benchmark,
        description=description,
        entry_point=entry_point,
        unit_tests=tests or [call_test("t0", "add(1, 2)", "3")],
        ground_truths=ground_truths or ["def add(a, b):\n    return a + b"],
    )


# --- scripted execution -----------------------------------------------------


class ScriptedExecutor:
    """Executor double with fully scripted outcomes and constant timings.

    Constant per-test durations make trimmed means, totals, and any prompt
    text derived from measurements deterministic, which replay transcripts
    require. Unscripted sources fail the test loudly.
    """

    def __init__(self):
        self._behaviors: dict[str, tuple[set[str], dict[str, int] | int]] = {}
        self.correctness_calls = 0
        self.timing_calls = 0

    def script(self, source: str, *, failing=(), ns: dict[str, int] | int = 1_000_000):
        self._behaviors[source.strip()] = (set(failing), ns)
        return self

    def _outcomes(self, source, problem, runs):
        try:
            failing, ns = self._behaviors[source.strip()]
        except KeyError:
            raise AssertionError(f"unscripted source reached executor: {source[:80]!r}") from None
        outcomes = []
        for test in problem.unit_tests:
            if test.id in failing:
                outcomes.append(
                    TestOutcome(test.id, ExecStatus.FAIL, message="expected 1, got 2")
                )
            else:
                duration = ns[test.id] if isinstance(ns, dict) else ns
                outcomes.append(
                    TestOutcome(test.id, ExecStatus.PASS, timings_ns=[duration] * runs)
                )
        return outcomes

    def run_correctness(self, source, problem, limits, candidate_id="candidate"):
        self.correctness_calls += 1
        return ExecutionReport(
            candidate_id, ExecMode.CORRECTNESS, self._outcomes(source, problem, 1)
        )

    def run_timing(self, source, problem, limits, candidate_id="candidate"):
        self.timing_calls += 1
        return ExecutionReport(
            candidate_id,
            ExecMode.TIMING,
            self._outcomes(source, problem, limits.runs_per_test),
        )


# --- transcript building ----------------------------------------------------


def fenced(code: str) -> str:
    return f"```python\n{code}\n```"


class TranscriptBuilder:
    """Accumulates (history, spec) -> responses pairs into a replay transcript."""

    def __init__(self):
        self.entries: list[TranscriptEntry] = []

    def add(
        self,
        history: list[ChatTurn],
        spec: SamplingSpec,
        responses: list[str],
        repeatable: bool = False,
    ) -> None:
        fingerprint = request_fingerprint(history, spec)
        for existing in self.entries:
            if existing.fingerprint == fingerprint:
                if existing.responses != list(responses):
                    raise AssertionError("conflicting transcript entry for one fingerprint")
                existing.repeatable = True
                return
        self.entries.append(TranscriptEntry(fingerprint, list(responses), repeatable))

    def backend(self) -> ReplayBackend:
        return ReplayBackend(self.entries)


@pytest.fixture
def executor() -> InProcessExecutor:
    return InProcessExecutor()


@pytest.fixture
def limits() -> ExecLimits:
    return ExecLimits(runs_per_test=4)
