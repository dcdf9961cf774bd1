"""Fully automatic repair agent.

Stage 1 generates candidates until one passes the surface guard (bounded
initial attempts); stage 2 alternates compile / repair up to the correction
cap, dispatching on the error class: structural errors trigger a full
guarded regeneration, semantic errors go to a patch agent that proposes a
minimal unified diff against the line-numbered source. Failed repairs
consume their step with the code unchanged, so the loop always terminates
with a best-effort result and a complete, ordered step trace.

No human alignment happens here; that belongs to the interactive pipeline.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import FormalRecord
from .gateway import ChatSession, EmptyExtraction, extract_code, load_template, render
from .guard import GuardRules, guard
from .harness import CompileOutcome, LeanHarness, is_structural
from .patching import (
    MalformedDiff,
    PatchContextMismatch,
    UnifiedDiff,
    apply_diff,
    number_lines,
    parse_diff,
)
from .refine import qa_block

log = logging.getLogger(__name__)


class NoValidCandidate(Exception):
    """Initial-attempt budget exhausted without a guard-passing candidate."""


@dataclass(frozen=True)
class AgentConfig:
    max_initial_attempts: int = 25   # guarded generation budget
    max_correction_steps: int = 25   # compile/repair budget
    rules: GuardRules = field(default_factory=GuardRules)
    patch_proposals: int = 1         # diff proposals within one correction step
    patch_fallback_window: int = 3

    def __post_init__(self):
        if self.max_initial_attempts < 1:
            raise ValueError("max_initial_attempts must be >= 1")
        if self.max_correction_steps < 0:
            raise ValueError("max_correction_steps must be >= 0")


class StepAction(str, Enum):
    REGENERATED = "regenerated"
    PATCHED = "patched"
    GUARD_REJECTED_REGENERATION = "guard_rejected_regeneration"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class StepTrace:
    step_no: int
    outcome: CompileOutcome
    action: StepAction
    diff_applied: UnifiedDiff | None = None
    detail: str = ""

    def to_json_obj(self) -> dict:
        return {
            "step": self.step_no,
            "action": self.action.value,
            "outcome": self.outcome.to_json_obj(),
            "diff": self.diff_applied.render() if self.diff_applied else None,
            "detail": self.detail,
        }


@dataclass
class AgentResult:
    final_code: str
    success: bool
    steps: list[StepTrace]
    initial_attempts: int

    def write_trace(self, path: str | Path) -> None:
        """One StepTrace per line, JSON-lines, for audit and the run viewer."""
        lines = [json.dumps(s.to_json_obj(), ensure_ascii=False) for s in self.steps]
        header = json.dumps(
            {
                "initial_attempts": self.initial_attempts,
                "success": self.success,
                "steps": len(self.steps),
            }
        )
        Path(path).write_text("\n".join([header] + lines) + "\n", encoding="utf-8")


@dataclass
class AgentSessions:
    """Generation and patching run in separate sessions to keep patch context small."""

    generation: ChatSession
    patch: ChatSession


def initial_generation(
    x: FormalRecord | str, cfg: AgentConfig, session: ChatSession
) -> tuple[str, int]:
    """Generate until the surface guard passes; returns (code, attempts used).

    The first attempt uses the base generation prompt; after a rejection the
    regeneration prompt carries the rejection reason and no compiler error
    (compilation has not been attempted yet).
    """
    qa = x if isinstance(x, str) else qa_block(x)
    gen_template = load_template("code_gen")
    regen_template = load_template("regeneration")
    labels = {"first_label": "C1", "last_label": "C1"}

    reason = None
    candidate = ""
    for attempt in range(1, cfg.max_initial_attempts + 1):
        if reason is None:
            prompt = render(gen_template, {"qa_block": qa, **labels})
        else:
            feedback = (
                "The previous candidate was rejected before compilation: "
                f"{reason}. No compiler error is available."
            )
            prompt = render(regen_template, {"qa_block": qa, "feedback": feedback})
        try:
            candidate = extract_code(session.chat(prompt))
        except EmptyExtraction:
            reason = "empty model output"
            continue
        verdict = guard(candidate, cfg.rules)
        if verdict.passed:
            return candidate, attempt
        reason = verdict.reason
    raise NoValidCandidate(
        f"no guard-passing candidate in {cfg.max_initial_attempts} attempts "
        f"(last reason: {reason})"
    )


def _propose_patch(
    code: str,
    error_text: str,
    cfg: AgentConfig,
    session: ChatSession,
) -> tuple[str, UnifiedDiff | None, str]:
    """Ask the patch agent for a diff and apply it; (code, diff, detail)."""
    template = load_template("patch")
    numbered = number_lines(code).render()
    detail = ""
    for _ in range(max(cfg.patch_proposals, 1)):
        prompt = render(template, {"numbered_code": numbered, "error": error_text})
        try:
            reply = extract_code(session.chat(prompt))
            diff = parse_diff(reply)
            patched = apply_diff(code, diff, cfg.patch_fallback_window)
        except (EmptyExtraction, MalformedDiff, PatchContextMismatch) as exc:
            detail = f"patch failed: {exc}"
            continue
        verdict = guard(patched, cfg.rules)
        if not verdict.passed:
            # A diff may smuggle in markers the guard bans; rejecting here
            # keeps "success implies guard-clean" true by construction.
            detail = f"patched code rejected by guard: {verdict.reason}"
            continue
        return patched, diff, ""
    return code, None, detail


def run_agent(
    x: FormalRecord | str,
    cfg: AgentConfig,
    sessions: AgentSessions,
    harness: LeanHarness,
) -> AgentResult:
    """Run the two-stage agent to a best-effort result; never raises on budget."""
    qa = x if isinstance(x, str) else qa_block(x)
    try:
        code, attempts = initial_generation(qa, cfg, sessions.generation)
    except NoValidCandidate as exc:
        log.info("agent: %s", exc)
        return AgentResult(
            final_code="", success=False, steps=[], initial_attempts=cfg.max_initial_attempts
        )

    regen_template = load_template("regeneration")
    steps: list[StepTrace] = []
    for step_no in range(1, cfg.max_correction_steps + 1):
        outcome = harness.compile(code)
        if not outcome.failed:
            steps.append(StepTrace(step_no, outcome, StepAction.TERMINATED))
            return AgentResult(code, True, steps, attempts)

        if is_structural(outcome.category):
            feedback = (
                f"The previous file failed to compile with a "
                f"{outcome.category.value} error:\n{outcome.error_text}"
            )
            prompt = render(regen_template, {"qa_block": qa, "feedback": feedback})
            action = StepAction.REGENERATED
            detail = ""
            try:
                candidate = extract_code(sessions.generation.chat(prompt))
            except EmptyExtraction as exc:
                action = StepAction.GUARD_REJECTED_REGENERATION
                detail = f"empty regeneration: {exc}"
            else:
                verdict = guard(candidate, cfg.rules)
                if verdict.passed:
                    code = candidate
                else:
                    action = StepAction.GUARD_REJECTED_REGENERATION
                    detail = verdict.reason
            steps.append(StepTrace(step_no, outcome, action, detail=detail))
        else:
            code, diff, detail = _propose_patch(
                code, outcome.error_text, cfg, sessions.patch
            )
            steps.append(
                StepTrace(step_no, outcome, StepAction.PATCHED, diff_applied=diff, detail=detail)
            )

    final = harness.compile(code)
    return AgentResult(code, not final.failed, steps, attempts)
