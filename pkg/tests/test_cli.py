from __future__ import annotations

import json

import pytest

from perfgen import prompts
from perfgen.cli import main
from perfgen.converters import convert_apps_record, convert_humaneval_record, convert_mbpp_record
from perfgen.dataset import Benchmark, TestMode, load_corpus, write_corpus
from perfgen.llm import SamplingSpec, dump_transcript, user
from perfgen.runlog import RunLogError, read_log
from perfgen.sandbox import ExecLimits
from tests.conftest import (
    FAKE_SHIM,
    InProcessExecutor,
    TranscriptBuilder,
    call_test,
    make_problem,
)


def directive_problem(problem_id: str) -> "Problem":
    # The fake shim interprets sources as directives, so ground truth and
    # candidates alike just need to be the PASS_ALL marker.
    return make_problem(
        problem_id,
        description=f"task {problem_id}",
        tests=[call_test("t0", "f(1)", "1")],
        ground_truths=["#PASS_ALL"],
    )


@pytest.fixture
def two_problem_run(tmp_path):
    problems = [directive_problem("p1"), directive_problem("p2")]
    corpus_path = tmp_path / "corpus.jsonl"
    write_corpus(problems, corpus_path)
    builder = TranscriptBuilder()
    for problem in problems:
        history = [user(prompts.render("base.general", {"problem": problem.description}))]
        builder.add(history, SamplingSpec.nucleus(1), ["```python\n#PASS_ALL\n```"])
    transcript_path = tmp_path / "transcript.jsonl"
    dump_transcript(builder.entries, transcript_path)
    out_dir = tmp_path / "run"
    argv = [
        "run",
        "--corpus",
        str(corpus_path),
        "--strategy",
        "base",
        "--k",
        "1",
        "--transcript",
        str(transcript_path),
        "--out",
        str(out_dir),
        "--shim",
        str(FAKE_SHIM),
        "--runs-per-test",
        "3",
    ]
    return argv, out_dir


class TestCmdRun:
    def test_two_problem_fixture_produces_golden_run_directory(self, two_problem_run):
        argv, out_dir = two_problem_run
        assert main(argv) == 0
        # Frozen structure of the run directory.
        assert (out_dir / "run.log").exists()
        assert (out_dir / "config.json").exists()
        assert (out_dir / "sanitization.json").exists()
        assert (out_dir / "metrics.json").exists()
        assert (out_dir / "metrics.csv").exists()
        state = read_log(out_dir / "run.log")
        results = state.result_events()
        assert len(results) == 2
        assert {r["problem"] for r in results} == {"p1", "p2"}
        assert all(r["solved"] for r in results)
        report = (out_dir / "report.txt").read_text(encoding="utf-8")
        data_rows = [
            line for line in report.splitlines() if line and not line.startswith(("Strategy", "-"))
        ]
        assert len(data_rows) == 1 and data_rows[0].startswith("base")
        sources = list((out_dir / "sources").rglob("*.py"))
        assert len(sources) == 2

    def test_invalid_k_is_config_error_and_nothing_executes(self, two_problem_run):
        argv, out_dir = two_problem_run
        argv[argv.index("--k") + 1] = "0"
        assert main(argv) == 2
        assert not (out_dir / "run.log").exists()

    def test_missing_corpus_is_config_error(self, two_problem_run):
        argv, out_dir = two_problem_run
        argv[argv.index("--corpus") + 1] = "/nonexistent.jsonl"
        assert main(argv) == 2

    def test_run_log_header_records_config_and_host(self, two_problem_run):
        argv, out_dir = two_problem_run
        assert main(argv) == 0
        state = read_log(out_dir / "run.log")
        assert state.header["config"]["strategies"] == ["base"]
        host = state.header["host"]
        assert host["cpu_count"] >= 1
        assert "platform" in host and "python" in host

    def test_infrastructure_failure_exits_one(self, two_problem_run, tmp_path):
        argv, out_dir = two_problem_run
        # Empty transcript: every sampling call is a replay miss.
        empty = tmp_path / "empty_transcript.jsonl"
        empty.write_text("", encoding="utf-8")
        argv[argv.index("--transcript") + 1] = str(empty)
        assert main(argv) == 1
        state = read_log(out_dir / "run.log")
        assert all(r["failure"] for r in state.result_events())


class TestCmdResume:
    def test_fully_complete_run_resumes_idempotently(self, two_problem_run):
        argv, out_dir = two_problem_run
        assert main(argv) == 0
        before = (out_dir / "run.log").read_text(encoding="utf-8")
        assert main(["resume", str(out_dir)]) == 0
        state = read_log(out_dir / "run.log")
        assert len(state.result_events()) == 2
        assert (out_dir / "report.txt").exists()
        # No problem re-executed: same result count per problem.
        assert before.count('"type": "result"') == 2

    def test_truncated_log_reexecutes_only_the_interrupted_problem(self, two_problem_run):
        argv, out_dir = two_problem_run
        assert main(argv) == 0
        log_path = out_dir / "run.log"
        lines = log_path.read_text(encoding="utf-8").splitlines(keepends=True)
        # Drop p2's terminal result event and leave a half-written stage line,
        # simulating a crash mid-problem.
        p2_result_index = next(
            i
            for i, line in enumerate(lines)
            if '"type": "result"' in line and '"problem": "p2"' in line
        )
        truncated = lines[:p2_result_index] + ['{"type": "stage", "problem": "p2", "ev']
        log_path.write_text("".join(truncated), encoding="utf-8")
        assert main(["resume", str(out_dir)]) == 0
        state = read_log(log_path)
        per_problem = {}
        for event in state.result_events():
            per_problem[event["problem"]] = per_problem.get(event["problem"], 0) + 1
        assert per_problem == {"p1": 1, "p2": 1}

    def test_empty_directory_is_an_error(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        assert main(["resume", str(empty)]) == 2

    def test_corrupt_header_refuses_with_diagnosis(self, two_problem_run, capsys):
        argv, out_dir = two_problem_run
        assert main(argv) == 0
        log_path = out_dir / "run.log"
        content = log_path.read_text(encoding="utf-8").splitlines(keepends=True)
        log_path.write_text("garbage header\n" + "".join(content[1:]), encoding="utf-8")
        assert main(["resume", str(out_dir)]) == 2
        assert "header" in capsys.readouterr().err

    def test_mid_file_corruption_refuses(self, two_problem_run):
        argv, out_dir = two_problem_run
        assert main(argv) == 0
        log_path = out_dir / "run.log"
        lines = log_path.read_text(encoding="utf-8").splitlines(keepends=True)
        lines[2] = "NOT JSON\n"
        log_path.write_text("".join(lines), encoding="utf-8")
        with pytest.raises(RunLogError, match="corrupt"):
            read_log(log_path)
        assert main(["resume", str(out_dir)]) == 2


class TestDeterminism:
    def test_two_runs_produce_identical_event_streams_modulo_timing(
        self, two_problem_run, tmp_path
    ):
        argv, out_dir = two_problem_run

        def run_into(directory):
            local = list(argv)
            local[local.index("--out") + 1] = str(directory)
            assert main(local) == 0
            state = read_log(directory / "run.log")
            body = []
            for event in state.events:
                body.append({k: v for k, v in event.items() if k != "total_ns"})
            return json.dumps(body, sort_keys=True)

        first = run_into(tmp_path / "run_a")
        second = run_into(tmp_path / "run_b")
        assert first == second

    def test_worker_pool_completes_all_problems(self, two_problem_run):
        argv, out_dir = two_problem_run
        argv += ["--workers", "2"]
        assert main(argv) == 0
        state = read_log(out_dir / "run.log")
        assert {r["problem"] for r in state.result_events()} == {"p1", "p2"}


class TestCorrectnessFlowOverride:
    def test_direct_flow_override_is_applied(self, tmp_path):
        from perfgen.llm import assistant

        problem = directive_problem("p1")
        corpus_path = tmp_path / "corpus.jsonl"
        write_corpus([problem], corpus_path)
        builder = TranscriptBuilder()
        history = [user(prompts.render("base.general", {"problem": problem.description}))]
        builder.add(history, SamplingSpec.nucleus(1), ["```python\n#FAIL t0\n```"])
        # With the direct flow, repair is a single round; a transcript built
        # for exactly that conversation proves the override took effect.
        bindings = {
            "testcase": prompts.verbalize_test(problem.unit_tests[0]),
            "error": "expected 1, got 2",
        }
        conv = history + [assistant("```python\n#FAIL t0\n```")]
        h1 = conv + [user(prompts.render("correctness.direct", bindings))]
        builder.add(h1, SamplingSpec.greedy(), ["```python\n#PASS_ALL\n```"])
        transcript_path = tmp_path / "transcript.jsonl"
        dump_transcript(builder.entries, transcript_path)
        out_dir = tmp_path / "run"
        code = main(
            [
                "run",
                "--corpus",
                str(corpus_path),
                "--strategy",
                "base",
                "--correctness-flow",
                "direct",
                "--transcript",
                str(transcript_path),
                "--out",
                str(out_dir),
                "--shim",
                str(FAKE_SHIM),
                "--runs-per-test",
                "3",
            ]
        )
        assert code == 0
        state = read_log(out_dir / "run.log")
        (result,) = state.result_events()
        assert result["solved"]
        assert result["final_candidate"].endswith(".cr")


class TestCmdReport:
    def test_report_reprints_table(self, two_problem_run, capsys):
        argv, out_dir = two_problem_run
        assert main(argv) == 0
        capsys.readouterr()
        assert main(["report", str(out_dir)]) == 0
        out = capsys.readouterr().out
        assert "%Opt" in out and "base" in out

    def test_report_on_missing_directory(self, tmp_path):
        assert main(["report", str(tmp_path / "nope")]) == 2

    def test_common_subset_flag_compares_strategies_on_shared_solves(self, tmp_path, capsys):
        from perfgen.llm import assistant

        problems = [directive_problem("p1"), directive_problem("p2")]
        corpus_path = tmp_path / "corpus.jsonl"
        write_corpus(problems, corpus_path)
        builder = TranscriptBuilder()
        spec = SamplingSpec.nucleus(1)
        greedy = SamplingSpec.greedy()
        # p1's sample passes everywhere; p2's fails, so the base strategy
        # leaves it unsolved while perf_prompt repairs it.
        for _ in ("base", "perf_prompt"):
            for problem, reply in ((problems[0], "#PASS_ALL"), (problems[1], "#FAIL t0")):
                history = [user(prompts.render("base.general", {"problem": problem.description}))]
                builder.add(history, spec, [f"```python\n{reply}\n```"])
        p1_conv = [
            user(prompts.render("base.general", {"problem": problems[0].description})),
            assistant("```python\n#PASS_ALL\n```"),
        ]
        vanilla = user(prompts.render("perf.vanilla", {}))
        builder.add(p1_conv + [vanilla], greedy, ["```python\n#PASS_ALL\n```"])
        p2_conv = [
            user(prompts.render("base.general", {"problem": problems[1].description})),
            assistant("```python\n#FAIL t0\n```"),
        ]
        bindings = {
            "testcase": prompts.verbalize_test(problems[1].unit_tests[0]),
            "error": "expected 1, got 2",
        }
        h1 = p2_conv + [user(prompts.render("correctness.reflect.r1", bindings))]
        builder.add(h1, greedy, ["the comparison is inverted"])
        h2 = h1 + [assistant("the comparison is inverted"), user(prompts.render("correctness.reflect.r2", {}))]
        builder.add(h2, greedy, ["```python\n#PASS_ALL\n```"])
        repaired_conv = h2 + [assistant("```python\n#PASS_ALL\n```")]
        builder.add(repaired_conv + [vanilla], greedy, ["```python\n#PASS_ALL\n```"])

        transcript_path = tmp_path / "transcript.jsonl"
        dump_transcript(builder.entries, transcript_path)
        out_dir = tmp_path / "run"
        code = main(
            [
                "run",
                "--corpus",
                str(corpus_path),
                "--strategy",
                "base",
                "--strategy",
                "perf_prompt",
                "--transcript",
                str(transcript_path),
                "--out",
                str(out_dir),
                "--shim",
                str(FAKE_SHIM),
                "--runs-per-test",
                "3",
            ]
        )
        assert code == 0
        capsys.readouterr()
        assert main(["report", str(out_dir), "--common-subset"]) == 0
        out = capsys.readouterr().out
        assert "common subset" in out
        assert "N=1" in out


HUMANEVAL_RECORD = {
    "task_id": "HumanEval/0",
    "prompt": "def double(x):\n    \"\"\"Return twice x.\"\"\"\n",
    "entry_point": "double",
    "canonical_solution": "    return 2 * x\n",
    "test": (
        "METADATA = {}\n\n\n"
        "def check(candidate):\n"
        "    assert candidate(2) == 4\n"
        "    assert candidate(0) == 0\n"
        "    assert candidate(-3) == -6\n"
    ),
}


class TestConverters:
    def test_humaneval_assertions_split_and_renamed(self):
        problem = convert_humaneval_record(HUMANEVAL_RECORD)
        assert problem.entry_point == "double"
        assert [t.call for t in problem.unit_tests] == ["double(2)", "double(0)", "double(-3)"]
        assert [t.expected for t in problem.unit_tests] == ["4", "0", "-6"]

    def test_humaneval_ground_truth_round_trips_through_execution(self):
        # Conversion verified by executing the converted ground truth against
        # the converted tests with the sandbox oracle.
        problem = convert_humaneval_record(HUMANEVAL_RECORD)
        executor = InProcessExecutor()
        report = executor.run_correctness(
            problem.ground_truths[0], problem, ExecLimits(runs_per_test=3)
        )
        assert report.all_passed

    def test_apps_io_pairs_become_stdio_tests_in_order(self):
        record = {
            "problem_id": 7,
            "question": "Echo the input.",
            "solutions": json.dumps(["import sys\nprint(sys.stdin.read().strip())"]),
            "input_output": json.dumps({"inputs": ["a\n", "b\n"], "outputs": ["a\n", "b\n"]}),
        }
        problem = convert_apps_record(record)
        assert [t.mode for t in problem.unit_tests] == [TestMode.STDIO, TestMode.STDIO]
        assert [t.input for t in problem.unit_tests] == ["a\n", "b\n"]

    def test_record_missing_ground_truth_rejected(self):
        record = dict(HUMANEVAL_RECORD, canonical_solution="")
        with pytest.raises(ValueError, match="ground truth"):
            convert_humaneval_record(record)

    def test_apps_call_style_record_rejected(self):
        record = {
            "problem_id": 1,
            "question": "q",
            "solutions": json.dumps(["pass"]),
            "input_output": json.dumps({"fn_name": "solve", "inputs": [[1]], "outputs": [[2]]}),
        }
        with pytest.raises(ValueError, match="stdio"):
            convert_apps_record(record)

    def test_mbpp_record_with_imports(self):
        record = {
            "task_id": 11,
            "text": "Write a function to find the square root floor.",
            "code": "import math\ndef root_floor(n):\n    return math.floor(math.sqrt(n))",
            "test_list": [
                "assert root_floor(10) == 3",
                "assert root_floor(16) == 4",
            ],
            "test_imports": [],
        }
        problem = convert_mbpp_record(record)
        assert problem.entry_point == "root_floor"
        assert len(problem.unit_tests) == 2
        executor = InProcessExecutor()
        report = executor.run_correctness(
            problem.ground_truths[0], problem, ExecLimits(runs_per_test=3)
        )
        assert report.all_passed

    def test_non_equality_assert_wrapped_as_truthiness(self):
        record = dict(
            HUMANEVAL_RECORD,
            test="def check(candidate):\n    assert candidate(2) > 3\n",
        )
        problem = convert_humaneval_record(record)
        assert problem.unit_tests[0].call == "bool(double(2) > 3)"
        assert problem.unit_tests[0].expected == "True"

    def test_convert_subcommand_writes_corpus(self, tmp_path):
        upstream = tmp_path / "upstream.jsonl"
        bad = {"task_id": "HumanEval/1", "prompt": "def f():\n", "entry_point": "f",
               "canonical_solution": "    pass\n", "test": "print('no asserts here')\n"}
        upstream.write_text(
            json.dumps(HUMANEVAL_RECORD) + "\n" + json.dumps(bad) + "\n", encoding="utf-8"
        )
        out = tmp_path / "corpus.jsonl"
        assert main(["convert", "--benchmark", "humaneval", "--in", str(upstream), "--out", str(out)]) == 0
        load = load_corpus(out, Benchmark.HUMANEVAL)
        assert [p.id for p in load.problems] == ["HumanEval/0"]

    def test_convert_missing_input_is_config_error(self, tmp_path):
        assert (
            main(
                [
                    "convert",
                    "--benchmark",
                    "humaneval",
                    "--in",
                    str(tmp_path / "nope.jsonl"),
                    "--out",
                    str(tmp_path / "out.jsonl"),
                ]
            )
            == 2
        )
