"""The per-problem refinement state machine and its strategy variants.

Every strategy shares the same skeleton: sample K candidates, repair failing
ones for correctness (at most one refinement iteration), run the strategy's
performance flow per correct lineage, then select the fastest surviving
refinement. When no refinement survives, fall back to the fastest member of
the correct pool, timed with the same E-run protocol.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Sequence

from perfgen import prompts
from perfgen.dataset import Benchmark, Problem
from perfgen.llm import (
    ChatBackend,
    ChatTurn,
    ReplayMissError,
    SamplingSpec,
    TransportError,
    assistant,
    extract_code,
    user,
)
from perfgen.profiler import TimingEstimate, estimate, fastest, is_optimized
from perfgen.sandbox import ExecLimits, ExecutionReport, SandboxError


class Origin(str, Enum):
    SAMPLED = "sampled"
    CORRECTNESS_REFINED = "correctness_refined"
    PERF_SELF_REFINED = "perf_self_refined"
    PERF_FEEDBACK_REFINED = "perf_feedback_refined"


class CorrectnessFlow(str, Enum):
    REFLECT_PLAN = "reflect_plan"
    DIRECT = "direct"
    NONE = "none"


@dataclass
class Candidate:
    """One generated program plus the conversation that produced it."""

    id: str
    problem_id: str
    source: str
    origin: Origin
    parent: str | None
    conversation: list[ChatTurn]

    def __post_init__(self) -> None:
        if self.origin != Origin.SAMPLED and self.parent is None:
            raise ValueError(f"candidate {self.id!r}: non-sampled origin requires a parent")


@dataclass(frozen=True)
class StrategySpec:
    """A named refinement strategy: its correctness flow and perf-round templates."""

    name: str
    correctness_flow: CorrectnessFlow
    perf_rounds: tuple[str, ...]  # template ids, in stage order (empty: no perf flow)


STRATEGIES: dict[str, StrategySpec] = {
    spec.name: spec
    for spec in [
        StrategySpec("base", CorrectnessFlow.NONE, ()),
        StrategySpec("perf_prompt", CorrectnessFlow.REFLECT_PLAN, ("perf.vanilla",)),
        StrategySpec("icl", CorrectnessFlow.REFLECT_PLAN, ("perf.icl",)),
        StrategySpec("predefined", CorrectnessFlow.REFLECT_PLAN, ("perf.predefined",)),
        StrategySpec(
            "plan_refine",
            CorrectnessFlow.REFLECT_PLAN,
            ("perf.plan_refine.r1", "perf.plan_refine.r2"),
        ),
        StrategySpec(
            "analyze_refine",
            CorrectnessFlow.REFLECT_PLAN,
            ("perf.analyze_refine.r1", "perf.analyze_refine.r2"),
        ),
        StrategySpec(
            "multiagent_reviewer",
            CorrectnessFlow.REFLECT_PLAN,
            (
                "perf.multiagent_reviewer.r1",
                "perf.multiagent_reviewer.r2",
                "perf.multiagent_reviewer.r3",
            ),
        ),
        StrategySpec(
            "multiagent_team",
            CorrectnessFlow.REFLECT_PLAN,
            (
                "perf.multiagent_team.r1",
                "perf.multiagent_team.r2",
                "perf.multiagent_team.r3",
                "perf.multiagent_team.r4",
                "perf.multiagent_team.r5",
            ),
        ),
        StrategySpec(
            "direct_exec_feedback",
            CorrectnessFlow.REFLECT_PLAN,
            (
                "perf.direct_exec_feedback.r1",
                "perf.direct_exec_feedback.r2_positive",
                "perf.direct_exec_feedback.r2_negative",
            ),
        ),
        StrategySpec(
            "perfcodegen",
            CorrectnessFlow.REFLECT_PLAN,
            ("perf.testcase_feedback.r1", "perf.testcase_feedback.r2"),
        ),
    ]
}


@dataclass
class ProblemResult:
    """Terminal outcome of one (problem, strategy) run."""

    problem_id: str
    strategy: str
    final_candidate: Candidate | None
    final_total: Fraction | None
    reference_total: Fraction | None
    solved: bool
    optimized: bool
    stage_log: list[dict]
    failure: str | None = None  # infrastructure failure, never a model failure


_REVIEW_RE = re.compile(r"^\s*\[(Agree|Disagree)\]")


def parse_review(text: str) -> tuple[str, str]:
    """Split a reviewer reply into its bracketed decision and the comment body."""
    match = _REVIEW_RE.match(text)
    decision = f"[{match.group(1)}]" if match else "[Disagree]"
    _, sep, comment = text.partition("Comment:")
    comment = comment.strip() if sep else text.strip()
    return decision, comment


def format_total_ms(total_ns: Fraction) -> str:
    """Render a total runtime for verbal feedback: milliseconds, 3 decimals."""
    return f"{float(total_ns) / 1e6:.3f} ms"


class PipelineEngine:
    """Drives one problem through sampling, repair, and performance refinement."""

    def __init__(
        self,
        backend: ChatBackend,
        executor,
        limits: ExecLimits | None = None,
        *,
        registry: prompts.PromptRegistry | None = None,
        nucleus_temperature: float = 0.8,
        nucleus_top_p: float = 0.95,
    ):
        self.backend = backend
        self.executor = executor
        self.limits = limits or ExecLimits()
        self.registry = registry or prompts.default_registry()
        self._nucleus_temperature = nucleus_temperature
        self._nucleus_top_p = nucleus_top_p
        self._log: list[dict] = []

    # -- logging ---------------------------------------------------------

    def _emit(self, event: str, **fields) -> None:
        self._log.append({"event": event, **fields})

    # -- LLM plumbing ----------------------------------------------------

    def _complete(self, history: list[ChatTurn], spec: SamplingSpec, stage: str, **fields) -> list[str]:
        self._emit("llm_call", stage=stage, n=spec.n_samples, **fields)
        return self.backend.complete(history, spec)

    def _greedy_reply(self, history: list[ChatTurn], stage: str, **fields) -> str:
        return self._complete(history, SamplingSpec.greedy(), stage, **fields)[0]

    @staticmethod
    def _source_from(text: str) -> str:
        try:
            return extract_code(text)
        except ValueError:
            return ""

    # -- stage 1: sampling -------------------------------------------------

    def base_prompt(self, problem: Problem) -> str:
        template = (
            "base.humaneval" if problem.benchmark == Benchmark.HUMANEVAL else "base.general"
        )
        return self.registry.render(template, {"problem": problem.description})

    def sample_candidates(self, problem: Problem, k: int) -> list[Candidate]:
        if k < 1:
            raise ValueError("sampling budget k must be at least 1")
        history = [user(self.base_prompt(problem))]
        spec = SamplingSpec.nucleus(
            k, temperature=self._nucleus_temperature, top_p=self._nucleus_top_p
        )
        texts = self._complete(history, spec, "sample")
        candidates = []
        for index, text in enumerate(texts):
            candidate = Candidate(
                id=f"{problem.id}::s{index}",
                problem_id=problem.id,
                source=self._source_from(text),
                origin=Origin.SAMPLED,
                parent=None,
                conversation=history + [assistant(text)],
            )
            self._emit("sampled", candidate=candidate.id)
            candidates.append(candidate)
        return candidates

    # -- stage 2: correctness ---------------------------------------------

    def _check(self, candidate: Candidate, problem: Problem, stage: str) -> ExecutionReport:
        report = self.executor.run_correctness(
            candidate.source, problem, self.limits, candidate_id=candidate.id
        )
        failing = report.first_failure()
        self._emit(
            "correctness_check",
            stage=stage,
            candidate=candidate.id,
            passed=report.all_passed,
            failing_test=None if failing is None else failing.test_id,
        )
        return report

    def correctness_phase(
        self,
        candidates: Sequence[Candidate],
        problem: Problem,
        flow: CorrectnessFlow,
    ) -> list[Candidate]:
        """Form the correct pool: passers unchanged, failers get one repair attempt."""
        if not candidates:
            raise ValueError("correctness phase requires at least one candidate")
        pool: list[Candidate] = []
        for candidate in candidates:
            report = self._check(candidate, problem, "sample")
            if report.all_passed:
                pool.append(candidate)
                continue
            if flow == CorrectnessFlow.NONE:
                continue
            refined = self._repair(candidate, problem, report, flow)
            refined_report = self._check(refined, problem, "correctness_refined")
            if refined_report.all_passed:
                pool.append(refined)
        self._emit("c_correct", members=[c.id for c in pool])
        return pool

    def _repair(
        self,
        candidate: Candidate,
        problem: Problem,
        report: ExecutionReport,
        flow: CorrectnessFlow,
    ) -> Candidate:
        failing = report.first_failure()
        assert failing is not None
        test = next(t for t in problem.unit_tests if t.id == failing.test_id)
        bindings = {
            "testcase": prompts.verbalize_test(test),
            "error": prompts.truncate_error(failing.message),
        }
        if flow == CorrectnessFlow.REFLECT_PLAN:
            history = candidate.conversation + [
                user(self.registry.render("correctness.reflect.r1", bindings))
            ]
            reflection = self._greedy_reply(history, "correctness_reflect", candidate=candidate.id)
            history = history + [
                assistant(reflection),
                user(self.registry.render("correctness.reflect.r2", {})),
            ]
            reply = self._greedy_reply(history, "correctness_refine", candidate=candidate.id)
        else:
            history = candidate.conversation + [
                user(self.registry.render("correctness.direct", bindings))
            ]
            reply = self._greedy_reply(history, "correctness_refine", candidate=candidate.id)
        return Candidate(
            id=f"{candidate.id}.cr",
            problem_id=problem.id,
            source=self._source_from(reply),
            origin=Origin.CORRECTNESS_REFINED,
            parent=candidate.id,
            conversation=history + [assistant(reply)],
        )

    # -- stage 3: performance ----------------------------------------------

    def _time(self, candidate: Candidate, problem: Problem) -> TimingEstimate | None:
        """Measure a correctness-passing candidate; None if a timed run degrades."""
        report = self.executor.run_timing(
            candidate.source, problem, self.limits, candidate_id=candidate.id
        )
        if not report.all_passed:
            failing = report.first_failure()
            self._emit(
                "timing_degraded",
                candidate=candidate.id,
                failing_test=None if failing is None else failing.test_id,
            )
            return None
        result = estimate(report)
        self._emit("timed", candidate=candidate.id, total_ns=str(result.total))
        return result

    def _derive(
        self,
        lineage: Candidate,
        history: list[ChatTurn],
        reply: str,
        round_no: int,
        origin: Origin,
    ) -> Candidate:
        return Candidate(
            id=f"{lineage.id}.p{round_no}",
            problem_id=lineage.problem_id,
            source=self._source_from(reply),
            origin=origin,
            parent=lineage.id,
            conversation=history + [assistant(reply)],
        )

    def _gate_and_time(
        self, candidate: Candidate, problem: Problem, round_no: int
    ) -> TimingEstimate | None:
        """Correctness gate followed by timing; None when either step rejects."""
        report = self._check(candidate, problem, f"perf_round{round_no}")
        if not report.all_passed:
            return None
        return self._time(candidate, problem)

    def _perf_single_round(
        self, lineage: Candidate, problem: Problem, template_id: str
    ) -> list[tuple[Candidate, TimingEstimate]]:
        bindings = {"demo": prompts.load_icl_demos()} if template_id == "perf.icl" else {}
        history = lineage.conversation + [user(self.registry.render(template_id, bindings))]
        reply = self._greedy_reply(history, "perf_round", round=1, candidate=lineage.id)
        refined = self._derive(lineage, history, reply, 1, Origin.PERF_SELF_REFINED)
        timing = self._gate_and_time(refined, problem, 1)
        if timing is None:
            self._emit("lineage_stopped", candidate=lineage.id, cause="round1_broke_correctness")
            return []
        return [(refined, timing)]

    def _perf_two_round_planned(
        self, lineage: Candidate, problem: Problem, r1_id: str, r2_id: str
    ) -> list[tuple[Candidate, TimingEstimate]]:
        history = lineage.conversation + [user(self.registry.render(r1_id, {}))]
        plan = self._greedy_reply(history, "perf_round", round=1, candidate=lineage.id)
        history = history + [assistant(plan), user(self.registry.render(r2_id, {}))]
        reply = self._greedy_reply(history, "perf_round", round=2, candidate=lineage.id)
        refined = self._derive(lineage, history, reply, 1, Origin.PERF_SELF_REFINED)
        timing = self._gate_and_time(refined, problem, 2)
        if timing is None:
            self._emit("lineage_stopped", candidate=lineage.id, cause="refinement_broke_correctness")
            return []
        return [(refined, timing)]

    def _perf_testcase_feedback(
        self, lineage: Candidate, problem: Problem
    ) -> list[tuple[Candidate, TimingEstimate]]:
        """Self-refine, measure, then feed back the costliest unit test."""
        history = lineage.conversation + [
            user(self.registry.render("perf.testcase_feedback.r1", {}))
        ]
        reply = self._greedy_reply(history, "perf_round", round=1, candidate=lineage.id)
        round1 = self._derive(lineage, history, reply, 1, Origin.PERF_SELF_REFINED)
        timing1 = self._gate_and_time(round1, problem, 1)
        if timing1 is None:
            self._emit("lineage_stopped", candidate=lineage.id, cause="round1_broke_correctness")
            return []
        costliest = next(
            t for t in problem.unit_tests if t.id == timing1.costliest_test
        )
        self._emit("costliest_test", candidate=round1.id, test=costliest.id)
        history2 = round1.conversation + [
            user(
                self.registry.render(
                    "perf.testcase_feedback.r2",
                    {"testcase": prompts.verbalize_test(costliest)},
                )
            )
        ]
        reply2 = self._greedy_reply(history2, "perf_round", round=2, candidate=lineage.id)
        round2 = Candidate(
            id=f"{lineage.id}.p2",
            problem_id=problem.id,
            source=self._source_from(reply2),
            origin=Origin.PERF_FEEDBACK_REFINED,
            parent=round1.id,
            conversation=history2 + [assistant(reply2)],
        )
        timing2 = self._gate_and_time(round2, problem, 2)
        pooled = [(round1, timing1)]
        if timing2 is not None:
            pooled.append((round2, timing2))
        else:
            self._emit("round2_dropped", candidate=round2.id, cause="broke_correctness")
        return pooled

    def _perf_direct_exec_feedback(
        self, lineage: Candidate, problem: Problem
    ) -> list[tuple[Candidate, TimingEstimate]]:
        """Self-refine, then verbalize whether the refinement measured faster."""
        history = lineage.conversation + [
            user(self.registry.render("perf.direct_exec_feedback.r1", {}))
        ]
        reply = self._greedy_reply(history, "perf_round", round=1, candidate=lineage.id)
        round1 = self._derive(lineage, history, reply, 1, Origin.PERF_SELF_REFINED)
        timing1 = self._gate_and_time(round1, problem, 1)
        if timing1 is None:
            self._emit("lineage_stopped", candidate=lineage.id, cause="round1_broke_correctness")
            return []
        original = self._time(lineage, problem)
        if original is None:
            self._emit("lineage_stopped", candidate=lineage.id, cause="original_timing_degraded")
            return [(round1, timing1)]
        faster = timing1.total < original.total
        template = (
            "perf.direct_exec_feedback.r2_positive"
            if faster
            else "perf.direct_exec_feedback.r2_negative"
        )
        self._emit("exec_feedback", candidate=round1.id, faster=faster)
        history2 = round1.conversation + [
            user(
                self.registry.render(
                    template,
                    {
                        "ori_time": format_total_ms(original.total),
                        "opt_time": format_total_ms(timing1.total),
                    },
                )
            )
        ]
        reply2 = self._greedy_reply(history2, "perf_round", round=2, candidate=lineage.id)
        round2 = Candidate(
            id=f"{lineage.id}.p2",
            problem_id=problem.id,
            source=self._source_from(reply2),
            origin=Origin.PERF_FEEDBACK_REFINED,
            parent=round1.id,
            conversation=history2 + [assistant(reply2)],
        )
        timing2 = self._gate_and_time(round2, problem, 2)
        pooled = [(round1, timing1)]
        if timing2 is not None:
            pooled.append((round2, timing2))
        else:
            self._emit("round2_dropped", candidate=round2.id, cause="broke_correctness")
        return pooled

    def _perf_multiagent_reviewer(
        self, lineage: Candidate, problem: Problem
    ) -> list[tuple[Candidate, TimingEstimate]]:
        history = lineage.conversation + [
            user(self.registry.render("perf.multiagent_reviewer.r1", {}))
        ]
        reply = self._greedy_reply(history, "perf_round", round=1, candidate=lineage.id)
        draft = self._derive(lineage, history, reply, 1, Origin.PERF_SELF_REFINED)
        reviewer_history = [
            user(
                self.registry.render(
                    "perf.multiagent_reviewer.r2",
                    {"program": lineage.source, "opt_program": draft.source},
                )
            )
        ]
        review = self._greedy_reply(reviewer_history, "perf_round", round=2, candidate=lineage.id)
        decision, comment = parse_review(review)
        self._emit("review", candidate=draft.id, decision=decision)
        history3 = draft.conversation + [
            user(
                self.registry.render(
                    "perf.multiagent_reviewer.r3",
                    {"decision": decision, "comment": comment},
                )
            )
        ]
        reply3 = self._greedy_reply(history3, "perf_round", round=3, candidate=lineage.id)
        final = Candidate(
            id=f"{lineage.id}.p2",
            problem_id=problem.id,
            source=self._source_from(reply3),
            origin=Origin.PERF_SELF_REFINED,
            parent=draft.id,
            conversation=history3 + [assistant(reply3)],
        )
        timing = self._gate_and_time(final, problem, 3)
        if timing is None:
            self._emit("lineage_stopped", candidate=lineage.id, cause="refinement_broke_correctness")
            return []
        return [(final, timing)]

    def _perf_multiagent_team(
        self, lineage: Candidate, problem: Problem
    ) -> list[tuple[Candidate, TimingEstimate]]:
        render = self.registry.render
        leader = [
            user(render("perf.multiagent_team.r1", {"problem": problem.description, "program": lineage.source}))
        ]
        plan1 = self._greedy_reply(leader, "perf_round", round=1, candidate=lineage.id)
        coder = lineage.conversation + [user(render("perf.multiagent_team.r2", {"plan": plan1}))]
        opt_reply = self._greedy_reply(coder, "perf_round", round=2, candidate=lineage.id)
        draft = self._derive(lineage, coder, opt_reply, 1, Origin.PERF_SELF_REFINED)
        reviewer = [
            user(
                render(
                    "perf.multiagent_team.r3",
                    {"program": lineage.source, "plan": plan1, "opt_program": draft.source},
                )
            )
        ]
        review = self._greedy_reply(reviewer, "perf_round", round=3, candidate=lineage.id)
        decision, comment = parse_review(review)
        self._emit("review", candidate=draft.id, decision=decision)
        leader2 = leader + [
            assistant(plan1),
            user(
                render(
                    "perf.multiagent_team.r4",
                    {"opt_program": draft.source, "decision": decision, "comment": comment},
                )
            ),
        ]
        plan2 = self._greedy_reply(leader2, "perf_round", round=4, candidate=lineage.id)
        coder2 = draft.conversation + [user(render("perf.multiagent_team.r5", {"plan": plan2}))]
        reply5 = self._greedy_reply(coder2, "perf_round", round=5, candidate=lineage.id)
        final = Candidate(
            id=f"{lineage.id}.p2",
            problem_id=problem.id,
            source=self._source_from(reply5),
            origin=Origin.PERF_SELF_REFINED,
            parent=draft.id,
            conversation=coder2 + [assistant(reply5)],
        )
        timing = self._gate_and_time(final, problem, 5)
        if timing is None:
            self._emit("lineage_stopped", candidate=lineage.id, cause="refinement_broke_correctness")
            return []
        return [(final, timing)]

    def _perf_flow(
        self, spec: StrategySpec, lineage: Candidate, problem: Problem
    ) -> list[tuple[Candidate, TimingEstimate]]:
        if spec.name == "perfcodegen":
            return self._perf_testcase_feedback(lineage, problem)
        if spec.name == "direct_exec_feedback":
            return self._perf_direct_exec_feedback(lineage, problem)
        if spec.name == "multiagent_reviewer":
            return self._perf_multiagent_reviewer(lineage, problem)
        if spec.name == "multiagent_team":
            return self._perf_multiagent_team(lineage, problem)
        if spec.name in ("plan_refine", "analyze_refine"):
            return self._perf_two_round_planned(
                lineage, problem, spec.perf_rounds[0], spec.perf_rounds[1]
            )
        if spec.name in ("perf_prompt", "icl", "predefined"):
            return self._perf_single_round(lineage, problem, spec.perf_rounds[0])
        raise ValueError(f"strategy {spec.name!r} has no performance flow")

    # -- selection and references -------------------------------------------

    def _reference_total(self, problem: Problem) -> Fraction | None:
        """Total runtime of the fastest ground truth, timed with E runs each."""
        estimates: list[TimingEstimate] = []
        for index, source in enumerate(problem.ground_truths):
            report = self.executor.run_timing(
                source, problem, self.limits, candidate_id=f"{problem.id}::gt{index}"
            )
            if report.all_passed:
                estimates.append(estimate(report))
        if not estimates:
            return None
        total = min(e.total for e in estimates)
        self._emit("reference_timed", ground_truths=len(estimates), total_ns=str(total))
        return total

    def _select_fallback(
        self, c_correct: Sequence[Candidate], problem: Problem, cause: str
    ) -> tuple[Candidate, TimingEstimate] | None:
        self._emit("fallback", cause=cause)
        timed: list[tuple[Candidate, TimingEstimate]] = []
        for candidate in c_correct:
            timing = self._time(candidate, problem)
            if timing is not None:
                timed.append((candidate, timing))
        if not timed:
            return None
        winner_id = fastest([t for _, t in timed])
        return next(pair for pair in timed if pair[1].candidate_id == winner_id)

    # -- the whole machine -----------------------------------------------

    def perfcodegen_perf_phase(
        self, c_correct: Sequence[Candidate], problem: Problem
    ) -> ProblemResult:
        """Run the flagship costliest-test feedback flow over an existing correct pool."""
        if not c_correct:
            raise ValueError("performance phase requires a non-empty correct pool")
        spec = STRATEGIES["perfcodegen"]
        try:
            return self._finish(spec, list(c_correct), problem)
        except SandboxError as exc:
            return self._infra_failure(problem, spec, f"sandbox: {exc}")
        except (TransportError, ReplayMissError) as exc:
            return self._infra_failure(problem, spec, f"backend: {exc}")

    def run_strategy(self, problem: Problem, spec: StrategySpec, k: int) -> ProblemResult:
        self._log = []
        try:
            candidates = self.sample_candidates(problem, k)
            c_correct = self.correctness_phase(candidates, problem, spec.correctness_flow)
            if not c_correct:
                reference = self._reference_total(problem)
                return self._result(problem, spec, None, None, reference)
            return self._finish(spec, c_correct, problem)
        except SandboxError as exc:
            return self._infra_failure(problem, spec, f"sandbox: {exc}")
        except (TransportError, ReplayMissError) as exc:
            return self._infra_failure(problem, spec, f"backend: {exc}")

    def _finish(
        self, spec: StrategySpec, c_correct: list[Candidate], problem: Problem
    ) -> ProblemResult:
        pooled: list[tuple[Candidate, TimingEstimate]] = []
        if spec.perf_rounds:
            for lineage in c_correct:
                for candidate, timing in self._perf_flow(spec, lineage, problem):
                    self._emit("pooled", candidate=candidate.id)
                    pooled.append((candidate, timing))
        if pooled:
            winner_id = fastest([t for _, t in pooled])
            final, final_timing = next(p for p in pooled if p[1].candidate_id == winner_id)
            self._emit("final_selected", candidate=final.id, among=len(pooled))
        else:
            cause = "no_perf_flow" if not spec.perf_rounds else "no_surviving_refinement"
            selected = self._select_fallback(c_correct, problem, cause)
            if selected is None:
                reference = self._reference_total(problem)
                return self._result(problem, spec, None, None, reference)
            final, final_timing = selected
            self._emit("final_selected", candidate=final.id, among=len(c_correct))
        reference = self._reference_total(problem)
        return self._result(problem, spec, final, final_timing.total, reference)

    def _result(
        self,
        problem: Problem,
        spec: StrategySpec,
        final: Candidate | None,
        final_total: Fraction | None,
        reference_total: Fraction | None,
    ) -> ProblemResult:
        solved = final is not None
        optimized = (
            solved
            and final_total is not None
            and reference_total is not None
            and is_optimized(final_total, reference_total)
        )
        self._emit("final", solved=solved, candidate=None if final is None else final.id)
        return ProblemResult(
            problem_id=problem.id,
            strategy=spec.name,
            final_candidate=final,
            final_total=final_total,
            reference_total=reference_total,
            solved=solved,
            optimized=optimized,
            stage_log=list(self._log),
        )

    def _infra_failure(self, problem: Problem, spec: StrategySpec, message: str) -> ProblemResult:
        self._emit("infrastructure_failure", message=message)
        return ProblemResult(
            problem_id=problem.id,
            strategy=spec.name,
            final_candidate=None,
            final_total=None,
            reference_total=None,
            solved=False,
            optimized=False,
            stage_log=list(self._log),
            failure=message,
        )
