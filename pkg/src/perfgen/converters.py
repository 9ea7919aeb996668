"""Adapters from upstream benchmark layouts to the unified corpus schema.

Each converter maps one upstream JSONL record to a corpus Problem record;
records that cannot be represented (no ground truth, unparseable tests,
call-style judge records in an IO dataset) are reported, not silently dropped.
"""

from __future__ import annotations

import ast
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from perfgen.dataset import Benchmark, Problem, TestMode, UnitTest


@dataclass
class ConversionReport:
    total_in: int
    converted: int
    rejected: list[tuple[int, str]]  # (line number, reason)


class _CandidateRename(ast.NodeTransformer):
    def __init__(self, entry_point: str):
        self.entry_point = entry_point

    def visit_Name(self, node: ast.Name) -> ast.Name:
        if node.id == "candidate":
            return ast.copy_location(ast.Name(id=self.entry_point, ctx=node.ctx), node)
        return node


def _split_assertion(node: ast.Assert) -> tuple[str, str]:
    """An assert becomes (call expression, expected expression).

    ``assert f(x) == v`` splits at the comparison; any other assert shape is
    wrapped so the whole expression must evaluate truthy.
    """
    test = node.test
    if (
        isinstance(test, ast.Compare)
        and len(test.ops) == 1
        and isinstance(test.ops[0], ast.Eq)
    ):
        return ast.unparse(test.left), ast.unparse(test.comparators[0])
    return f"bool({ast.unparse(test)})", "True"


def _free_names(expr: str) -> set[str]:
    names = set()
    for node in ast.walk(ast.parse(expr, mode="eval")):
        if isinstance(node, ast.Name):
            names.add(node.id)
    return names


def assertion_tests(
    test_code: str, entry_point: str | None, allowed_names: set[str] | None = None
) -> list[UnitTest]:
    """Extract call_based tests from a block of assert statements.

    Asserts referencing names outside the candidate function, builtins, and
    ``allowed_names`` are skipped (loop variables, helper state), since their
    expressions cannot be evaluated standalone.
    """
    tree = ast.parse(test_code)
    if entry_point:
        tree = _CandidateRename(entry_point).visit(tree)
        ast.fix_missing_locations(tree)
    permitted = set(__builtins__ if isinstance(__builtins__, dict) else vars(__builtins__))
    permitted |= {entry_point} if entry_point else set()
    permitted |= allowed_names or set()
    tests: list[UnitTest] = []
    for node in ast.walk(tree):
        if not isinstance(node, ast.Assert):
            continue
        call_expr, expected_expr = _split_assertion(node)
        used = _free_names(call_expr) | _free_names(expected_expr)
        if not used <= permitted:
            continue
        tests.append(
            UnitTest(
                id=f"t{len(tests)}",
                mode=TestMode.CALL_BASED,
                call=call_expr,
                expected=expected_expr,
            )
        )
    return tests


def convert_humaneval_record(record: dict) -> Problem:
    """Incomplete-program prompt; ground truth is prompt plus canonical body."""
    prompt = record["prompt"]
    entry_point = record["entry_point"]
    tests = assertion_tests(record["test"], entry_point)
    if not tests:
        raise ValueError("no usable assertion tests")
    if not record.get("canonical_solution"):
        raise ValueError("record has no ground truth")
    return Problem(
        id=str(record["task_id"]),
        benchmark=Benchmark.HUMANEVAL,
        description=prompt,
        entry_point=entry_point,
        unit_tests=tests,
        ground_truths=[prompt + record["canonical_solution"]],
    )


def convert_mbpp_record(record: dict) -> Problem:
    description = record.get("text") or record.get("prompt")
    if not description:
        raise ValueError("record has no task text")
    code = record.get("code")
    if not code:
        raise ValueError("record has no ground truth")
    imports = record.get("test_imports") or []
    setup = "".join(line + "\n" for line in imports)
    test_lines = record.get("test_list") or []
    module_names = set()
    for line in imports:
        try:
            for node in ast.walk(ast.parse(line)):
                if isinstance(node, ast.Import):
                    module_names.update(alias.asname or alias.name for alias in node.names)
                elif isinstance(node, ast.ImportFrom):
                    module_names.update(alias.asname or alias.name for alias in node.names)
        except SyntaxError:
            raise ValueError(f"bad test import {line!r}") from None
    entry_point = _mbpp_entry_point(test_lines)
    allowed = module_names | ({entry_point} if entry_point else set())
    tests = assertion_tests("\n".join(test_lines), None, allowed_names=allowed)
    if not tests:
        raise ValueError("no usable assertion tests")
    return Problem(
        id=str(record["task_id"]),
        benchmark=Benchmark.MBPP,
        description=description,
        entry_point=entry_point,
        unit_tests=tests,
        ground_truths=[setup + code],
    )


def _mbpp_entry_point(test_lines: list[str]) -> str | None:
    for line in test_lines:
        try:
            tree = ast.parse(line)
        except SyntaxError:
            continue
        for node in ast.walk(tree):
            if isinstance(node, ast.Call) and isinstance(node.func, ast.Name):
                return node.func.id
    return None


def convert_apps_record(record: dict) -> Problem:
    description = record.get("question")
    if not description:
        raise ValueError("record has no question text")
    solutions = record.get("solutions") or "[]"
    if isinstance(solutions, str):
        solutions = json.loads(solutions)
    if not solutions:
        raise ValueError("record has no ground truth")
    io_spec = record.get("input_output") or "{}"
    if isinstance(io_spec, str):
        io_spec = json.loads(io_spec)
    if io_spec.get("fn_name"):
        raise ValueError("call-style judge records are not supported; expected stdio pairs")
    inputs = io_spec.get("inputs") or []
    outputs = io_spec.get("outputs") or []
    if not inputs or len(inputs) != len(outputs):
        raise ValueError("record has no usable input/output pairs")
    tests = []
    for index, (stdin, stdout) in enumerate(zip(inputs, outputs)):
        if not isinstance(stdin, str) or not isinstance(stdout, str):
            raise ValueError(f"io pair {index} is not text")
        tests.append(UnitTest(id=f"t{index}", mode=TestMode.STDIO, input=stdin, output=stdout))
    problem_id = record.get("problem_id", record.get("id"))
    if problem_id is None:
        raise ValueError("record has no problem id")
    return Problem(
        id=str(problem_id),
        benchmark=Benchmark.APPS,
        description=description,
        entry_point=None,
        unit_tests=tests,
        ground_truths=[s for s in solutions if isinstance(s, str)],
    )


_CONVERTERS: dict[Benchmark, Callable[[dict], Problem]] = {
    Benchmark.HUMANEVAL: convert_humaneval_record,
    Benchmark.MBPP: convert_mbpp_record,
    Benchmark.APPS: convert_apps_record,
}


def convert_file(
    upstream_path: str | Path, benchmark: Benchmark
) -> tuple[list[Problem], ConversionReport]:
    """Convert an upstream JSONL file; returns problems plus a rejection report."""
    try:
        converter = _CONVERTERS[benchmark]
    except KeyError:
        raise ValueError(f"no converter for benchmark {benchmark.value!r}") from None
    problems: list[Problem] = []
    rejected: list[tuple[int, str]] = []
    total = 0
    with open(upstream_path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                record = json.loads(line)
                problems.append(converter(record))
            except (ValueError, KeyError, SyntaxError, TypeError) as exc:
                rejected.append((line_no, str(exc)))
    return problems, ConversionReport(total_in=total, converted=len(problems), rejected=rejected)
