import difflib
import json

import pytest

from formalflow.agent import (
    AgentConfig,
    AgentResult,
    AgentSessions,
    NoValidCandidate,
    StepAction,
    initial_generation,
    run_agent,
)
from formalflow.corpus import FormalRecord, Subdomain
from formalflow.gateway import ChatSession, MockBackend
from formalflow.harness import SEMANTIC_CATEGORIES, STRUCTURAL_CATEGORIES

from conftest import CLEAN_THEOREM, SYNTAX_ERROR_SOURCE, TYPE_MISMATCH_THEOREM

PERCENT = "%" * 10


def wrapped(code: str) -> str:
    return f"{PERCENT}\n{code}\n{PERCENT}"


def refdiff(a: str, b: str) -> str:
    lines = difflib.unified_diff(
        a.splitlines(keepends=True), b.splitlines(keepends=True), n=3
    )
    out = []
    for line in lines:
        out.append(line if line.endswith("\n") else line + "\n\\ No newline at end of file\n")
    return "".join(out)


def record() -> FormalRecord:
    return FormalRecord(
        id="agent-rec", field=Subdomain.EM, question="Show 1 = 1.", answer="Trivial."
    )


def sessions(gen_entries, patch_entries=None) -> tuple[AgentSessions, MockBackend, MockBackend]:
    gen_backend = MockBackend(gen_entries)
    patch_backend = MockBackend(patch_entries or [{"pattern": ".", "reply": "unused"}])
    return (
        AgentSessions(
            generation=ChatSession(backend=gen_backend),
            patch=ChatSession(backend=patch_backend),
        ),
        gen_backend,
        patch_backend,
    )


class CountingHarness:
    def __init__(self, inner):
        self.inner = inner
        self.count = 0
        self.pin = inner.pin

    def compile(self, code):
        self.count += 1
        return self.inner.compile(code)


GEN_PATTERN = "Acceptance criteria"
REGEN_PATTERN = "Rewrite the complete Lean 4 file"
PATCH_PATTERN = "unified diff"


class TestInitialGeneration:
    def test_clean_first_try(self):
        agents, gen, _ = sessions([{"pattern": GEN_PATTERN, "reply": wrapped(CLEAN_THEOREM)}])
        code, attempts = initial_generation(record(), AgentConfig(), agents.generation)
        assert attempts == 1
        assert code == CLEAN_THEOREM.strip()
        assert gen.calls == 1

    def test_sorry_then_clean_carries_reason(self):
        agents, gen, _ = sessions(
            [
                {"pattern": REGEN_PATTERN, "reply": wrapped(CLEAN_THEOREM)},
                {"pattern": GEN_PATTERN, "reply": wrapped("theorem t : 1 = 1 := by sorry")},
            ]
        )
        code, attempts = initial_generation(record(), AgentConfig(), agents.generation)
        assert attempts == 2
        regen_prompt = agents.generation.messages[-2]["content"]
        assert "incomplete proof" in regen_prompt
        assert "No compiler error" in regen_prompt

    def test_persistent_forbidden_token_exhausts_budget(self):
        bad = wrapped("theorem t : ∇ f = 0 := rfl")
        agents, gen, _ = sessions([{"pattern": ".", "reply": bad}])
        with pytest.raises(NoValidCandidate):
            initial_generation(record(), AgentConfig(max_initial_attempts=3), agents.generation)
        assert gen.calls == 3


class TestRunAgent:
    def test_semantic_error_then_valid_patch(self, harness):
        diff = refdiff(TYPE_MISMATCH_THEOREM.strip() + "\n", CLEAN_THEOREM.strip() + "\n")
        agents, _, _ = sessions(
            [{"pattern": GEN_PATTERN, "reply": wrapped(TYPE_MISMATCH_THEOREM)}],
            [{"pattern": PATCH_PATTERN, "reply": diff}],
        )
        counting = CountingHarness(harness)
        result = run_agent(record(), AgentConfig(), agents, counting)
        assert [s.action for s in result.steps] == [StepAction.PATCHED, StepAction.TERMINATED]
        assert result.success is True
        assert result.steps[0].diff_applied is not None
        assert counting.count == 2

    def test_structural_error_then_clean_regeneration(self, harness):
        agents, _, _ = sessions(
            [
                {"pattern": REGEN_PATTERN, "reply": wrapped(CLEAN_THEOREM)},
                {"pattern": GEN_PATTERN, "reply": wrapped(SYNTAX_ERROR_SOURCE)},
            ]
        )
        result = run_agent(record(), AgentConfig(), agents, harness)
        assert [s.action for s in result.steps] == [
            StepAction.REGENERATED,
            StepAction.TERMINATED,
        ]
        assert result.success is True

    def test_never_compiling_exhausts_step_budget(self, harness):
        agents, _, _ = sessions(
            [{"pattern": GEN_PATTERN, "reply": wrapped(TYPE_MISMATCH_THEOREM)}],
            [{"pattern": PATCH_PATTERN, "reply": "this is not a diff"}],
        )
        counting = CountingHarness(harness)
        config = AgentConfig(max_correction_steps=4)
        result = run_agent(record(), config, agents, counting)
        assert result.success is False
        assert len(result.steps) == 4
        assert all(s.action is StepAction.PATCHED for s in result.steps)
        assert all(s.diff_applied is None for s in result.steps)
        assert counting.count <= config.max_correction_steps + 1

    def test_guard_rejected_regeneration_keeps_code(self, harness):
        agents, _, _ = sessions(
            [
                {
                    "pattern": REGEN_PATTERN,
                    "replies": [wrapped("axiom cheat : 1 = 1"), wrapped(CLEAN_THEOREM)],
                },
                {"pattern": GEN_PATTERN, "reply": wrapped(SYNTAX_ERROR_SOURCE)},
            ]
        )
        result = run_agent(record(), AgentConfig(), agents, harness)
        actions = [s.action for s in result.steps]
        assert actions == [
            StepAction.GUARD_REJECTED_REGENERATION,
            StepAction.REGENERATED,
            StepAction.TERMINATED,
        ]
        # The rejected step left the code unchanged: the next compile saw the
        # same structural failure.
        assert result.steps[0].outcome == result.steps[1].outcome
        assert "incomplete proof" in result.steps[0].detail
        assert result.success is True

    def test_no_valid_candidate_returns_best_effort(self, harness):
        agents, _, _ = sessions(
            [{"pattern": ".", "reply": wrapped("theorem t : ∂ f = 0 := rfl")}]
        )
        result = run_agent(record(), AgentConfig(max_initial_attempts=2), agents, harness)
        assert result.success is False
        assert result.steps == []
        assert result.initial_attempts == 2

    def test_dispatch_matches_error_classes(self, harness):
        diff = refdiff(TYPE_MISMATCH_THEOREM.strip() + "\n", CLEAN_THEOREM.strip() + "\n")
        agents, _, _ = sessions(
            [{"pattern": GEN_PATTERN, "reply": wrapped(TYPE_MISMATCH_THEOREM)}],
            [{"pattern": PATCH_PATTERN, "reply": diff}],
        )
        result = run_agent(record(), AgentConfig(), agents, harness)
        for step in result.steps:
            if step.action is StepAction.PATCHED:
                assert step.outcome.category in SEMANTIC_CATEGORIES
            elif step.action in (StepAction.REGENERATED, StepAction.GUARD_REJECTED_REGENERATION):
                assert step.outcome.category in STRUCTURAL_CATEGORIES

    def test_trace_is_complete_and_ordered(self, harness):
        agents, _, _ = sessions(
            [
                {"pattern": REGEN_PATTERN, "reply": wrapped(CLEAN_THEOREM)},
                {"pattern": GEN_PATTERN, "reply": wrapped(SYNTAX_ERROR_SOURCE)},
            ]
        )
        result = run_agent(record(), AgentConfig(), agents, harness)
        assert [s.step_no for s in result.steps] == list(range(1, len(result.steps) + 1))

    def test_trace_file_jsonl(self, harness, tmp_path):
        agents, _, _ = sessions([{"pattern": GEN_PATTERN, "reply": wrapped(CLEAN_THEOREM)}])
        result = run_agent(record(), AgentConfig(), agents, harness)
        path = tmp_path / "trace.jsonl"
        result.write_trace(path)
        lines = path.read_text().strip().splitlines()
        header = json.loads(lines[0])
        assert header["success"] is True
        step = json.loads(lines[1])
        assert step["action"] == "terminated"
        assert "elapsed" not in json.dumps(step)  # timing never reaches traces

    def test_patched_code_rejected_by_guard_keeps_code(self, harness):
        # A diff that injects a banned marker is discarded with the step consumed.
        bad_patch = refdiff(
            TYPE_MISMATCH_THEOREM.strip() + "\n",
            TYPE_MISMATCH_THEOREM.strip().replace("rfl", "by sorry") + "\n",
        )
        agents, _, _ = sessions(
            [{"pattern": GEN_PATTERN, "reply": wrapped(TYPE_MISMATCH_THEOREM)}],
            [{"pattern": PATCH_PATTERN, "reply": bad_patch}],
        )
        result = run_agent(record(), AgentConfig(max_correction_steps=2), agents, harness)
        assert result.success is False
        assert all(s.diff_applied is None for s in result.steps)
        assert any("guard" in s.detail for s in result.steps)
