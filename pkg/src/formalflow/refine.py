"""Baseline strategies and the reusable compile-until-success loop.

``zero_shot`` does a single statement autoformalisation with no compilation;
``self_refine`` does one error-feedback round on prior code;
``correct_until_compiles`` iterates compile -> correct until the toolchain
accepts the file or the correction cap is hit.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .corpus import FormalRecord
from .gateway import ChatSession, extract_code, load_template, render
from .harness import CompileOutcome, LeanHarness

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopLimits:
    # The correction loop is unbounded on paper; a finite cap guarantees
    # termination and mirrors the agent's correction budget.
    max_corrections: int = 25

    def __post_init__(self):
        if self.max_corrections < 0:
            raise ValueError("max_corrections must be >= 0")


class Exhausted(Exception):
    """Correction cap reached without a compiling candidate."""

    def __init__(self, code: str, outcome: CompileOutcome, iterations: int):
        self.code = code
        self.outcome = outcome
        self.iterations = iterations
        super().__init__(
            f"correction budget exhausted after {iterations} corrections: "
            f"{outcome.error_text[:200]}"
        )


def qa_block(records: list[FormalRecord] | FormalRecord) -> str:
    """Render records as a labelled Q/A block for prompt templates."""
    if isinstance(records, FormalRecord):
        records = [records]
    parts = []
    for i, rec in enumerate(records, start=1):
        parts.append(f"Q{i}: {rec.question}\nA{i}: {rec.answer}")
    return "\n\n".join(parts)


def zero_shot(statement: str, session: ChatSession) -> str:
    """Single-shot statement autoformalisation; no compilation involved."""
    prompt = render(load_template("zero_shot"), {"nl_statement": statement})
    return extract_code(session.chat(prompt))


def self_refine(
    statement: str,
    prior_code: str,
    session: ChatSession,
    harness: LeanHarness,
) -> str:
    """One round of error-feedback refinement on ``prior_code``.

    Code that already compiles is returned unchanged with no model call;
    otherwise the filtered fatal text is fed back once.
    """
    if not prior_code:
        raise ValueError("self_refine requires nonempty prior code")
    outcome = harness.compile(prior_code)
    if not outcome.failed:
        return prior_code
    prompt = render(
        load_template("self_refine"),
        {
            "nl_statement": statement,
            "formal": prior_code,
            "error_details": outcome.error_text,
        },
    )
    return extract_code(session.chat(prompt))


def correct_until_compiles(
    x: FormalRecord | str,
    code0: str,
    limits: LoopLimits,
    session: ChatSession,
    harness: LeanHarness,
) -> tuple[str, int]:
    """Iterate compile -> error-guided correction until the code compiles.

    Returns ``(code, t)`` where ``t`` is the number of corrections performed
    (0 when ``code0`` already compiles); compile invocations total ``t + 1``
    and model calls total ``t``. Raises :class:`Exhausted` at the cap.
    """
    qa = x if isinstance(x, str) else qa_block(x)
    template = load_template("correction")
    code = code0
    for t in range(limits.max_corrections + 1):
        outcome = harness.compile(code)
        if not outcome.failed:
            return code, t
        if t == limits.max_corrections:
            raise Exhausted(code, outcome, t)
        prompt = render(
            template, {"qa_block": qa, "code": code, "error": outcome.error_text}
        )
        code = extract_code(session.chat(prompt))
    raise AssertionError("unreachable")
