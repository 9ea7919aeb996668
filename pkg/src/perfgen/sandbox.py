"""Isolated execution of guest programs against unit tests.

Guest code runs in a child "shim" process that speaks a line-delimited JSON
protocol: the orchestrator writes a job file, the shim prints one record per
test and a terminal done record. Two regimes exist:

- correctness: one run per test, parallelizable up to a worker cap;
- timing: E runs per test, serialized behind a machine-wide exclusive slot so
  that no two guest programs ever execute concurrently.

Per-test wall timeouts are enforced here, not in the shim: a hung test gets
its process tree killed and the shim is relaunched for the remaining tests,
so every test is attempted exactly once.
"""

from __future__ import annotations

import fcntl
import json
import os
import queue
import resource
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from perfgen.dataset import Problem, UnitTest

_STATUS_VALUES = ("pass", "fail", "error", "timeout")
_MAX_PROTOCOL_LINE = 8 * 1024 * 1024
_STDERR_TAIL = 64 * 1024


class ExecStatus(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    ERROR = "error"
    TIMEOUT = "timeout"


class ExecMode(str, Enum):
    CORRECTNESS = "correctness"
    TIMING = "timing"


class SandboxError(RuntimeError):
    """Sandbox infrastructure failure, distinct from any guest outcome."""


@dataclass(frozen=True)
class ExecLimits:
    """Resource budget for one guest execution job.

    ``runs_per_test`` is the number of independent timed executions per
    solution-test pair in timing mode; the trimmed-mean estimator needs at
    least 3 observations.
    """

    wall_timeout_s: float = 10.0
    memory_bytes: int = 1 << 30
    output_cap_bytes: int = 1 << 20
    runs_per_test: int = 12
    float_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.wall_timeout_s <= 0:
            raise ValueError("wall_timeout_s must be positive")
        if self.runs_per_test < 3:
            raise ValueError("runs_per_test must be at least 3")
        if self.memory_bytes <= 0 or self.output_cap_bytes <= 0:
            raise ValueError("memory and output caps must be positive")


@dataclass
class TestOutcome:
    """Per-test result; timings carry one entry per execution on pass."""

    test_id: str
    status: ExecStatus
    message: str = ""
    timings_ns: list[int] = field(default_factory=list)


@dataclass
class ExecutionReport:
    candidate_id: str
    mode: ExecMode
    outcomes: list[TestOutcome]

    @property
    def all_passed(self) -> bool:
        return all(o.status == ExecStatus.PASS for o in self.outcomes)

    def first_failure(self) -> TestOutcome | None:
        for outcome in self.outcomes:
            if outcome.status != ExecStatus.PASS:
                return outcome
        return None


class ExecutionScheduler:
    """Shared slots for correctness jobs, one exclusive slot for timing jobs.

    Timing tickets are served strictly FIFO; while any timing job is queued
    or active, no correctness job may start, and a timing job starts only
    once every shared slot has drained. A file lock extends exclusivity to
    other harness processes on the same machine.
    """

    def __init__(self, worker_cap: int = 4, lock_path: str | Path | None = None):
        if worker_cap < 1:
            raise ValueError("worker_cap must be at least 1")
        self._cond = threading.Condition()
        self._worker_cap = worker_cap
        self._active_shared = 0
        self._tickets = 0
        self._served = 0
        self._timing_active = False
        self._lock_path = Path(lock_path or Path(tempfile.gettempdir()) / "perfgen-timing.lock")
        self._lock_file: IO[bytes] | None = None

    @contextmanager
    def correctness_slot(self) -> Iterator[None]:
        with self._cond:
            self._cond.wait_for(
                lambda: self._served == self._tickets and self._active_shared < self._worker_cap
            )
            self._active_shared += 1
        try:
            yield
        finally:
            with self._cond:
                self._active_shared -= 1
                self._cond.notify_all()

    @contextmanager
    def timing_slot(self) -> Iterator[None]:
        with self._cond:
            ticket = self._tickets
            self._tickets += 1
            self._cond.wait_for(
                lambda: self._served == ticket
                and self._active_shared == 0
                and not self._timing_active
            )
            self._timing_active = True
        self._acquire_machine_lock()
        try:
            yield
        finally:
            self._release_machine_lock()
            with self._cond:
                self._timing_active = False
                self._served += 1
                self._cond.notify_all()

    def _acquire_machine_lock(self) -> None:
        self._lock_file = open(self._lock_path, "wb")
        fcntl.flock(self._lock_file, fcntl.LOCK_EX)

    def _release_machine_lock(self) -> None:
        if self._lock_file is not None:
            fcntl.flock(self._lock_file, fcntl.LOCK_UN)
            self._lock_file.close()
            self._lock_file = None


def build_job(
    source: str,
    entry_point: str | None,
    tests: Sequence[UnitTest],
    mode: ExecMode,
    runs: int,
    float_tolerance: float,
) -> dict:
    """Assemble the job object the shim consumes; field names are the wire format."""
    return {
        "source": source,
        "entry_point": entry_point,
        "tests": [
            {
                "id": t.id,
                "mode": t.mode.value,
                "call": t.call,
                "expected": t.expected,
                "input": t.input,
                "output": t.output,
            }
            for t in tests
        ],
        "mode": mode.value,
        "E": runs,
        "float_tolerance": float_tolerance,
    }


_DONE = object()


def parse_record(line: str):
    """Decode one protocol line into a TestOutcome, or the done sentinel.

    Any non-conforming line is an infrastructure error carrying the bytes.
    """
    try:
        raw = json.loads(line)
    except json.JSONDecodeError:
        raise SandboxError(f"malformed shim output: {line!r}") from None
    if not isinstance(raw, dict):
        raise SandboxError(f"malformed shim output: {line!r}")
    if raw.get("done") is True:
        return _DONE
    test_id = raw.get("test_id")
    status = raw.get("status")
    message = raw.get("message", "")
    timings = raw.get("timings_ns", [])
    if (
        not isinstance(test_id, str)
        or status not in _STATUS_VALUES
        or not isinstance(message, str)
        or not isinstance(timings, list)
        or not all(isinstance(t, int) and not isinstance(t, bool) and t > 0 for t in timings)
    ):
        raise SandboxError(f"malformed shim record: {line!r}")
    if (status == "pass") != (message == ""):
        raise SandboxError(f"shim record violates status/message invariant: {line!r}")
    return TestOutcome(
        test_id=test_id,
        status=ExecStatus(status),
        message=message,
        timings_ns=list(timings),
    )


def harvest_output(lines: Iterable[str], tests: Sequence[UnitTest]) -> list[TestOutcome]:
    """Decode a complete shim stream; tests without records become shim-death errors."""
    by_id: dict[str, TestOutcome] = {}
    known = {t.id for t in tests}
    for line in lines:
        if not line.strip():
            continue
        record = parse_record(line)
        if record is _DONE:
            break
        if record.test_id not in known:
            raise SandboxError(f"shim reported unknown test id {record.test_id!r}")
        by_id[record.test_id] = record
    return [
        by_id.get(t.id, TestOutcome(t.id, ExecStatus.ERROR, message="shim died"))
        for t in tests
    ]


def _default_shim_argv() -> list[str]:
    env_path = os.environ.get("PERFGEN_SHIM")
    if env_path:
        return [sys.executable, env_path]
    repo_root = Path(__file__).resolve().parents[2]
    bundled = repo_root / "shim" / "guest_shim.py"
    if bundled.exists():
        return [sys.executable, str(bundled)]
    raise SandboxError(
        "no guest shim configured: set PERFGEN_SHIM or pass shim_argv explicitly"
    )


def _make_preexec(limits: ExecLimits, cpu_budget_s: float):
    def apply() -> None:
        mem = limits.memory_bytes
        resource.setrlimit(resource.RLIMIT_AS, (mem, mem))
        cpu = max(2, int(cpu_budget_s) + 5)
        resource.setrlimit(resource.RLIMIT_CPU, (cpu, cpu + 5))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    return apply


def _kill_tree(proc: subprocess.Popen) -> None:
    try:
        os.killpg(os.getpgid(proc.pid), signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        try:
            proc.kill()
        except ProcessLookupError:
            pass
    proc.wait()


def _pump_lines(stream: IO[str], sink: "queue.Queue") -> None:
    try:
        for line in stream:
            sink.put(line)
    except ValueError:
        pass  # stream closed during shutdown
    finally:
        sink.put(None)


class SandboxExecutor:
    """Runs guest jobs through the shim with limits, timeouts, and scheduling."""

    def __init__(
        self,
        shim_argv: Sequence[str] | None = None,
        *,
        worker_cap: int = 4,
        scheduler: ExecutionScheduler | None = None,
        startup_grace_s: float = 0.4,
    ):
        self._shim_argv = list(shim_argv) if shim_argv is not None else None
        self.scheduler = scheduler if scheduler is not None else ExecutionScheduler(worker_cap)
        self._grace = startup_grace_s

    def _argv(self) -> list[str]:
        if self._shim_argv is None:
            self._shim_argv = _default_shim_argv()
        return self._shim_argv

    def run_correctness(
        self,
        source: str,
        problem: Problem,
        limits: ExecLimits,
        candidate_id: str = "candidate",
    ) -> ExecutionReport:
        with self.scheduler.correctness_slot():
            outcomes = self._run_job(
                source, problem.entry_point, problem.unit_tests, ExecMode.CORRECTNESS, 1, limits
            )
        return ExecutionReport(candidate_id=candidate_id, mode=ExecMode.CORRECTNESS, outcomes=outcomes)

    def run_timing(
        self,
        source: str,
        problem: Problem,
        limits: ExecLimits,
        candidate_id: str = "candidate",
    ) -> ExecutionReport:
        with self.scheduler.timing_slot():
            outcomes = self._run_job(
                source,
                problem.entry_point,
                problem.unit_tests,
                ExecMode.TIMING,
                limits.runs_per_test,
                limits,
            )
        return ExecutionReport(candidate_id=candidate_id, mode=ExecMode.TIMING, outcomes=outcomes)

    def _run_job(
        self,
        source: str,
        entry_point: str | None,
        tests: Sequence[UnitTest],
        mode: ExecMode,
        runs: int,
        limits: ExecLimits,
    ) -> list[TestOutcome]:
        outcomes: dict[str, TestOutcome] = {}
        remaining = list(tests)
        while remaining:
            records, saw_done, timed_out = self._attempt(
                source, entry_point, remaining, mode, runs, limits
            )
            outcomes.update(records)
            still = [t for t in remaining if t.id not in outcomes]
            if timed_out and still:
                hung = still[0]
                outcomes[hung.id] = TestOutcome(
                    hung.id,
                    ExecStatus.TIMEOUT,
                    message=f"wall timeout exceeded ({limits.wall_timeout_s:g} s per execution)",
                )
                remaining = still[1:]
                continue
            # Process finished (done record or death): anything still missing
            # is a shim death, not a guest outcome.
            for test in still:
                outcomes[test.id] = TestOutcome(test.id, ExecStatus.ERROR, message="shim died")
            break
        return [outcomes[t.id] for t in tests]

    def _attempt(
        self,
        source: str,
        entry_point: str | None,
        tests: Sequence[UnitTest],
        mode: ExecMode,
        runs: int,
        limits: ExecLimits,
    ) -> tuple[dict[str, TestOutcome], bool, bool]:
        job = build_job(source, entry_point, tests, mode, runs, limits.float_tolerance)
        workdir = tempfile.mkdtemp(prefix="perfgen-job-")
        job_path = os.path.join(workdir, "job.json")
        with open(job_path, "w", encoding="utf-8") as handle:
            json.dump(job, handle)
        per_test_budget = limits.wall_timeout_s * runs + self._grace
        cpu_budget = limits.wall_timeout_s * runs * len(tests)
        try:
            try:
                proc = subprocess.Popen(
                    self._argv() + [job_path],
                    stdin=subprocess.DEVNULL,
                    stdout=subprocess.PIPE,
                    stderr=subprocess.PIPE,
                    cwd=workdir,
                    text=True,
                    errors="replace",
                    start_new_session=True,
                    preexec_fn=_make_preexec(limits, cpu_budget),
                )
            except OSError as exc:
                raise SandboxError(f"cannot launch shim: {exc}") from exc
            return self._read_stream(proc, tests, per_test_budget)
        finally:
            shutil.rmtree(workdir, ignore_errors=True)

    def _read_stream(
        self,
        proc: subprocess.Popen,
        tests: Sequence[UnitTest],
        per_test_budget: float,
    ) -> tuple[dict[str, TestOutcome], bool, bool]:
        assert proc.stdout is not None and proc.stderr is not None
        out_q: "queue.Queue" = queue.Queue()
        err_chunks: list[str] = []
        threading.Thread(target=_pump_lines, args=(proc.stdout, out_q), daemon=True).start()
        threading.Thread(
            target=lambda: err_chunks.append(proc.stderr.read(_STDERR_TAIL)), daemon=True
        ).start()

        known = {t.id for t in tests}
        records: dict[str, TestOutcome] = {}
        saw_done = False
        timed_out = False
        deadline = time.monotonic() + per_test_budget
        while True:
            try:
                line = out_q.get(timeout=max(0.0, deadline - time.monotonic()))
            except queue.Empty:
                timed_out = True
                _kill_tree(proc)
                break
            if line is None:
                break
            if len(line) > _MAX_PROTOCOL_LINE:
                _kill_tree(proc)
                raise SandboxError("shim protocol line exceeds size cap")
            if not line.strip():
                continue
            try:
                record = parse_record(line)
            except SandboxError:
                _kill_tree(proc)
                raise
            if record is _DONE:
                saw_done = True
                break
            if record.test_id not in known or record.test_id in records:
                _kill_tree(proc)
                raise SandboxError(f"shim emitted unexpected test id {record.test_id!r}")
            records[record.test_id] = record
            deadline = time.monotonic() + per_test_budget

        if not timed_out:
            try:
                proc.wait(timeout=5.0)
            except subprocess.TimeoutExpired:
                _kill_tree(proc)
        if not saw_done and not timed_out and not records:
            stderr_tail = (err_chunks[0] if err_chunks else "").strip()
            raise SandboxError(
                "shim produced no records"
                + (f"; stderr: {stderr_tail[-2000:]}" if stderr_tail else "")
            )
        return records, saw_done, timed_out
