#!/usr/bin/env python3
"""In-sandbox test runner for candidate programs.

Reads a JSON job file (path in argv[1]) describing a source program and its
unit tests, executes every test in order, and emits one JSON record per test
on stdout followed by a terminal done record:

    {"test_id": ..., "status": "pass|fail|error", "message": ..., "timings_ns": [...]}
    {"done": true}

Guest prints are captured so they can never corrupt the protocol stream.
Resource limits and wall timeouts are imposed by the parent process; this
program only disables network sockets before touching guest code.

Standalone by design: no imports beyond the standard library, so it can run
under any host that speaks the job/record wire format.
"""

import io
import json
import sys
import time
import traceback
from collections.abc import Iterator

CAPTURE_CAP_BYTES = 8 * 1024 * 1024
MESSAGE_CAP_CHARS = 64 * 1024

PASS = "pass"
FAIL = "fail"
ERROR = "error"


class CappedWriter(io.StringIO):
    """StringIO that silently stops growing past a byte budget."""

    def __init__(self, cap: int):
        super().__init__()
        self._cap = cap
        self.truncated = False

    def write(self, text):
        if self.tell() >= self._cap:
            self.truncated = True
            return len(text)
        return super().write(text)


class GuestIO:
    """Swap the guest's stdio in and out around an execution."""

    def __init__(self, stdin_text=""):
        self.out = CappedWriter(CAPTURE_CAP_BYTES)
        self.err = CappedWriter(CAPTURE_CAP_BYTES)
        self._stdin_text = stdin_text

    def __enter__(self):
        self._saved = (sys.stdin, sys.stdout, sys.stderr)
        sys.stdin = io.StringIO(self._stdin_text)
        sys.stdout = self.out
        sys.stderr = self.err
        return self

    def __exit__(self, *exc_info):
        sys.stdin, sys.stdout, sys.stderr = self._saved


def disable_network():
    import socket

    def deny(*args, **kwargs):
        raise RuntimeError("network access is disabled inside the sandbox")

    socket.socket = deny
    socket.create_connection = deny
    socket.socketpair = deny


def deep_equal(actual, expected, tolerance):
    """Structural equality with absolute float tolerance inside containers."""
    if isinstance(actual, (int, float)) and isinstance(expected, (int, float)):
        if actual != actual or expected != expected:  # NaN never compares equal
            return False
        return abs(actual - expected) <= tolerance
    if isinstance(actual, str) or isinstance(expected, str):
        return actual == expected
    if isinstance(actual, (list, tuple)):
        return (
            type(actual) is type(expected)
            and len(actual) == len(expected)
            and all(deep_equal(a, e, tolerance) for a, e in zip(actual, expected))
        )
    if isinstance(actual, dict):
        if not isinstance(expected, dict) or actual.keys() != expected.keys():
            return False
        return all(deep_equal(actual[k], expected[k], tolerance) for k in actual)
    return actual == expected


def strip_one_newline(text):
    return text[:-1] if text.endswith("\n") else text


def clip(message):
    if len(message) <= MESSAGE_CAP_CHARS:
        return message
    return message[:MESSAGE_CAP_CHARS] + "... [message truncated]"


def record(test_id, status, message="", timings_ns=None):
    return {
        "test_id": test_id,
        "status": status,
        "message": clip(message),
        "timings_ns": timings_ns or [],
    }


def error_record(test_id):
    return record(test_id, ERROR, message=traceback.format_exc())


def run_call_test(test, code, module_globals, runs, tolerance):
    """Evaluate the call expression against the expected value, timing each run.

    Every invocation gets a fresh shallow copy of the module globals; the
    clock wraps only the invocation (plus draining of lazy iterators).
    """
    try:
        expected = eval(test["call_expected"], dict(module_globals))
    except BaseException:
        return error_record(test["id"])
    timings = []
    for _ in range(runs):
        scope = dict(module_globals)
        try:
            with GuestIO():
                started = time.perf_counter_ns()
                value = eval(test["call_code"], scope)
                if isinstance(value, Iterator):
                    value = list(value)
                elapsed = time.perf_counter_ns() - started
        except BaseException:
            return error_record(test["id"])
        if not deep_equal(value, expected, tolerance):
            return record(
                test["id"],
                FAIL,
                message=f"wrong answer: expected {expected!r}, got {value!r}",
            )
        timings.append(max(1, elapsed))
    return record(test["id"], PASS, timings_ns=timings)


def run_stdio_test(test, code, runs):
    """Re-execute the whole program per run with stdin bound to the test input.

    A pass requires byte equality of stdout after stripping one trailing
    newline from each side; SystemExit is a normal program ending.
    """
    expected = strip_one_newline(test["output"])
    timings = []
    for _ in range(runs):
        scope = {"__name__": "__main__", "__builtins__": __builtins__}
        guest_io = GuestIO(stdin_text=test["input"])
        try:
            with guest_io:
                started = time.perf_counter_ns()
                try:
                    exec(code, scope)
                except SystemExit:
                    pass
                elapsed = time.perf_counter_ns() - started
        except BaseException:
            return error_record(test["id"])
        if guest_io.out.truncated:
            return record(test["id"], ERROR, message="guest output exceeded the capture cap")
        printed = strip_one_newline(guest_io.out.getvalue())
        if printed != expected:
            return record(
                test["id"],
                FAIL,
                message=f"wrong answer: expected {expected!r}, got {printed!r}",
            )
        timings.append(max(1, elapsed))
    return record(test["id"], PASS, timings_ns=timings)


def prepare_tests(raw_tests):
    """Pre-compile call expressions so eval cost stays out of the timed region."""
    prepared = []
    for raw in raw_tests:
        test = {"id": raw["id"], "mode": raw["mode"]}
        if raw["mode"] == "call_based":
            test["call_code"] = compile(raw["call"], "<test-call>", "eval")
            test["call_expected"] = compile(raw["expected"], "<test-expected>", "eval")
        else:
            test["input"] = raw["input"]
            test["output"] = raw["output"]
        prepared.append(test)
    return prepared


def execute_job(job):
    """Yield one record per test, in order; a bad test never ends the stream."""
    runs = job["E"] if job["mode"] == "timing" else 1
    tolerance = job["float_tolerance"]
    raw_tests = job["tests"]

    try:
        code = compile(job["source"], "<candidate>", "exec")
    except (SyntaxError, ValueError):
        diagnostic = traceback.format_exc()
        for raw in raw_tests:
            yield record(raw["id"], ERROR, message=diagnostic)
        return

    try:
        tests = prepare_tests(raw_tests)
    except (SyntaxError, ValueError, KeyError):
        diagnostic = traceback.format_exc()
        for raw in raw_tests:
            yield record(raw["id"], ERROR, message=diagnostic)
        return

    # Call-based tests share one module execution; stdio tests re-run the
    # whole program each time (judge-style programs read stdin at import).
    module_globals = None
    module_error = None
    if any(t["mode"] == "call_based" for t in tests):
        module_globals = {"__name__": "__candidate__", "__builtins__": __builtins__}
        try:
            with GuestIO():
                exec(code, module_globals)
        except BaseException:
            module_error = traceback.format_exc()

    for test in tests:
        if test["mode"] == "call_based":
            if module_error is not None:
                yield record(test["id"], ERROR, message=module_error)
            else:
                yield run_call_test(test, code, module_globals, runs, tolerance)
        else:
            yield run_stdio_test(test, code, runs)


def validate_job(job):
    if not isinstance(job, dict):
        raise ValueError("job must be a JSON object")
    for key in ("source", "tests", "mode", "E", "float_tolerance"):
        if key not in job:
            raise ValueError(f"job is missing field {key!r}")
    if job["mode"] not in ("correctness", "timing"):
        raise ValueError(f"unknown job mode {job['mode']!r}")
    if not isinstance(job["E"], int) or job["E"] < 1:
        raise ValueError("E must be a positive integer")
    if job["mode"] == "timing" and job["E"] < 3:
        raise ValueError("timing mode requires at least 3 runs per test")


def main(argv):
    if len(argv) != 2:
        print("usage: guest_shim.py JOB_FILE", file=sys.stderr)
        return 2
    with open(argv[1], encoding="utf-8") as handle:
        job = json.load(handle)
    validate_job(job)
    disable_network()
    protocol = sys.stdout
    for rec in execute_job(job):
        protocol.write(json.dumps(rec) + "\n")
        protocol.flush()
    protocol.write(json.dumps({"done": True}) + "\n")
    protocol.flush()
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
