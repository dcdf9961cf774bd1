"""Four-stage human-in-the-loop formalisation pipeline.

Stage 1 turns batches of informal derivations into enriched QA pairs via
few-shot prompting, with an LLM alignment assessment surfaced for expert
sign-off. Stage 2 formalises a QA batch into one combined Lean file and
corrects it until it compiles. Stage 3 loops: LLM alignment report ->
binary expert verdict -> improvement prompt -> re-correction, bounded by a
patience cap. Stage 4 splits the combined file into per-item fragments that
share the import block, re-verifies each, and routes failures back through
correction and alignment one item at a time.

The expert is exactly a binary classifier; production wires the verdict
source to the console service, tests wire it to a script.
"""

from __future__ import annotations

import logging
import re
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Protocol

from .corpus import Batch, FormalRecord, GoldExample, Status
from .gateway import ChatSession, extract_code, load_template, render
from .harness import CompileOutcome, LeanHarness
from .refine import Exhausted, LoopLimits, correct_until_compiles

log = logging.getLogger(__name__)


class SplitMismatch(Exception):
    pass


class MalformedCombined(Exception):
    pass


class Stage(str, Enum):
    QA_GEN = "QAGen"
    CODE_GEN = "CodeGen"
    CORRECTING = "Correcting"
    AWAITING_VERDICT = "AwaitingVerdict"
    IMPROVING = "Improving"
    SPLITTING = "Splitting"
    REVERIFYING = "Reverifying"
    DONE = "Done"
    FAILED = "Failed"


# Correcting -> Splitting covers patience exhaustion, where the loop stops
# after a final correction round without another verdict request.
LEGAL_TRANSITIONS: dict[Stage, frozenset[Stage]] = {
    Stage.QA_GEN: frozenset({Stage.CODE_GEN, Stage.FAILED}),
    Stage.CODE_GEN: frozenset({Stage.CORRECTING, Stage.FAILED}),
    Stage.CORRECTING: frozenset(
        {Stage.AWAITING_VERDICT, Stage.IMPROVING, Stage.SPLITTING, Stage.FAILED}
    ),
    Stage.AWAITING_VERDICT: frozenset({Stage.IMPROVING, Stage.SPLITTING, Stage.FAILED}),
    Stage.IMPROVING: frozenset({Stage.CORRECTING, Stage.FAILED}),
    Stage.SPLITTING: frozenset({Stage.REVERIFYING, Stage.FAILED}),
    Stage.REVERIFYING: frozenset({Stage.DONE, Stage.FAILED}),
    Stage.DONE: frozenset(),
    Stage.FAILED: frozenset(),
}


@dataclass(frozen=True)
class PipelineConfig:
    """Every loop bound in one place."""

    patience: int = 3
    initial_attempts: int = 25
    correction_cap: int = 25
    batch_size: int = 5

    def __post_init__(self):
        if self.patience < 0 or self.batch_size < 1:
            raise ValueError("patience must be >= 0 and batch_size >= 1")

    @property
    def limits(self) -> LoopLimits:
        return LoopLimits(max_corrections=self.correction_cap)


class VerdictSourceKind(str, Enum):
    HUMAN_CONSOLE = "HumanConsole"
    SCRIPTED_TEST = "ScriptedTest"


@dataclass(frozen=True)
class AlignmentVerdict:
    aligned: int  # 0 = accept, 1 = needs work
    comment: str = ""
    source: VerdictSourceKind = VerdictSourceKind.SCRIPTED_TEST

    def __post_init__(self):
        if self.aligned not in (0, 1):
            raise ValueError("verdict must be 0 (accept) or 1 (needs work)")


class VerdictSource(Protocol):
    def verdict(self, key: str, report: str) -> AlignmentVerdict: ...


class ScriptedVerdicts:
    """Fixed verdict sequence for tests; repeats the last entry when drained."""

    def __init__(self, sequence: list[int]):
        if not sequence:
            raise ValueError("scripted verdict sequence must be nonempty")
        self._seq = list(sequence)
        self._cursor = 0
        self._lock = threading.Lock()
        self.requests: list[str] = []

    def verdict(self, key: str, report: str) -> AlignmentVerdict:
        with self._lock:
            self.requests.append(key)
            value = self._seq[min(self._cursor, len(self._seq) - 1)]
            self._cursor += 1
        return AlignmentVerdict(aligned=value, source=VerdictSourceKind.SCRIPTED_TEST)


@dataclass
class PipelineItemState:
    record_id: str
    stage: Stage = Stage.CODE_GEN
    k: int = 0
    patience: int = 3
    # Re-entry verdicts are requested while the stage stays Reverifying, so
    # "needs a verdict now" is a flag rather than a stage.
    needs_verdict: bool = False
    note: str = ""

    def advance(self, to: Stage) -> None:
        if to is self.stage:
            return
        if to not in LEGAL_TRANSITIONS[self.stage]:
            raise ValueError(f"illegal stage transition {self.stage.value} -> {to.value}")
        self.stage = to

    def bump_k(self) -> None:
        if self.k + 1 > self.patience:
            raise ValueError(f"alignment iteration would exceed patience {self.patience}")
        self.k += 1


# ---------------------------------------------------------------------------
# Stage 1: QA generation

_QA_MARKER = re.compile(r"(?m)^\s*(?:\*\*|#+\s*)?([QA])(\d+)(?:\*\*)?\s*[:.]\s*")


@dataclass(frozen=True)
class QAGenerationResult:
    pairs: tuple[tuple[str, str], ...]
    assessment: str


def split_qa_reply(reply: str, expected: int) -> tuple[tuple[str, str], ...]:
    """Split a labelled reply into (question, answer) pairs.

    Markers are lines starting Q<n>:/A<n>:; the count must match the batch.
    """
    markers = list(_QA_MARKER.finditer(reply))
    segments: list[tuple[str, str]] = []  # (kind, text)
    for i, m in enumerate(markers):
        end = markers[i + 1].start() if i + 1 < len(markers) else len(reply)
        segments.append((m.group(1), reply[m.end() : end].strip()))
    pairs: list[tuple[str, str]] = []
    i = 0
    while i + 1 < len(segments) or (i < len(segments) and segments[i][0] == "Q"):
        if i + 1 >= len(segments):
            break
        if segments[i][0] == "Q" and segments[i + 1][0] == "A":
            pairs.append((segments[i][1], segments[i + 1][1]))
            i += 2
        else:
            i += 1
    if len(pairs) != expected:
        raise SplitMismatch(
            f"expected {expected} QA pairs, found {len(pairs)} in model reply"
        )
    if any(not q or not a for q, a in pairs):
        raise SplitMismatch("empty question or answer in model reply")
    return tuple(pairs)


def generate_qa_batch(
    batch: Batch, gold: list[GoldExample], session: ChatSession
) -> QAGenerationResult:
    """Few-shot QA generation over one batch, plus the alignment assessment.

    Output labels continue the gold numbering (gold 1..N' leads to batch
    labels N'+1..N'+B'). The fixed assessment prompt is sent in the same
    session and its reply is surfaced for expert review before proceeding.
    """
    if not gold:
        raise ValueError("QA generation requires at least one gold example")
    n_gold = len(gold)
    first = n_gold + 1
    last = n_gold + len(batch.items)
    gold_block = "\n\n".join(
        f"Q{i}: {g.statement}\nA{i}: {g.proof}" for i, g in enumerate(gold, start=1)
    )
    derivation_block = "\n\n".join(
        f"D{first + i}: " + " ; ".join(d.steps) for i, d in enumerate(batch.items)
    )
    prompt = render(
        load_template("few_shot_qa"),
        {
            "gold_count": str(n_gold),
            "gold_block": gold_block,
            "derivation_block": derivation_block,
            "first_index": str(first),
            "last_index": str(last),
        },
    )
    reply = session.chat(prompt)
    pairs = split_qa_reply(reply, expected=len(batch.items))
    assessment = session.chat(render(load_template("align_assess"), {}))
    return QAGenerationResult(pairs=pairs, assessment=assessment)


# ---------------------------------------------------------------------------
# Stage 3: alignment loop

Observer = Callable[[str, dict], None]


def llm_alignment_report(
    x: FormalRecord | str, code: str, session: ChatSession
) -> str:
    """Ask the session for the fixed alignment assessment of the current code.

    The session is expected to carry the formalisation context (the original
    prompt and the code's correction history); the fixed prompt relies on it.
    """
    return session.chat(render(load_template("align_assess"), {}))


def alignment_loop(
    x: FormalRecord | str,
    code: str,
    verdict_source: VerdictSource,
    patience: int,
    session: ChatSession,
    harness: LeanHarness,
    limits: LoopLimits,
    key: str = "",
    observer: Observer | None = None,
) -> tuple[str, int]:
    """Iterate report -> verdict -> improve -> re-correct, bounded by patience.

    Returns ``(code, k)`` with k the number of improvement rounds performed;
    the returned code always compiles. A verdict of 0 accepts immediately;
    patience exhaustion accepts the current code. Compile failures that
    exhaust the inner correction loop raise :class:`Exhausted`.
    """
    emit = observer or (lambda kind, data: None)
    k = 0
    while k < patience:
        report = llm_alignment_report(x, code, session)
        emit("report_ready", {"report": report, "k": k})
        emit("awaiting_verdict", {"k": k})
        verdict = verdict_source.verdict(key, report)
        emit("verdict_recorded", {"aligned": verdict.aligned, "comment": verdict.comment, "k": k})
        if verdict.aligned == 0:
            return code, k
        emit("improving", {"k": k})
        reply = session.chat(render(load_template("align_improve"), {}))
        improved = extract_code(reply)
        emit("correcting", {"k": k})
        code, _ = correct_until_compiles(x, improved, limits, session, harness)
        k += 1
    return code, k


# ---------------------------------------------------------------------------
# Stage 4: splitting and re-verification

_LABEL_LINE = re.compile(r"^\s*(?:--+\s*|/-[!-]*\s*)?C(\d+)\b")


@dataclass(frozen=True)
class CombinedOutput:
    import_block: str
    proofs: tuple[tuple[str, str], ...]  # (label, code)

    def __post_init__(self):
        numbers = [int(label[1:]) for label, _ in self.proofs]
        if any(b <= a for a, b in zip(numbers, numbers[1:])):
            raise MalformedCombined(f"labels must be strictly increasing, got {numbers}")

    def fragments(self) -> list[str]:
        """One compilable unit per proof, each carrying the full import block."""
        return [f"{self.import_block}\n\n{code}\n" for _, code in self.proofs]

    def body(self) -> str:
        return "\n\n".join(code for _, code in self.proofs)


def split_outputs(combined: str) -> CombinedOutput:
    """Split a combined file into labelled proofs under a shared import block."""
    lines = combined.splitlines()

    import_end = None  # index one past the last leading import line
    i = 0
    while i < len(lines):
        stripped = lines[i].strip()
        if _LABEL_LINE.match(lines[i]):
            break
        if stripped.startswith("import"):
            import_end = i + 1
        elif stripped and not stripped.startswith("--") and not stripped.startswith("/-"):
            break
        i += 1
    if import_end is None:
        raise MalformedCombined("no leading import block found")
    import_block = "\n".join(lines[:import_end]).strip("\n")

    label_positions = [
        (idx, int(m.group(1)))
        for idx, line in enumerate(lines)
        if idx >= import_end
        for m in [_LABEL_LINE.match(line)]
        if m
    ]
    if not label_positions:
        raise MalformedCombined("no labelled proof blocks found")
    for idx in range(import_end, label_positions[0][0]):
        if lines[idx].strip():
            raise MalformedCombined(
                f"unlabelled content between imports and first proof at line {idx + 1}"
            )

    proofs = []
    for pos, (start, number) in enumerate(label_positions):
        end = label_positions[pos + 1][0] if pos + 1 < len(label_positions) else len(lines)
        block = "\n".join(lines[start:end]).strip("\n")
        proofs.append((f"C{number}", block))
    return CombinedOutput(import_block=import_block, proofs=tuple(proofs))


@dataclass
class ReverifyResult:
    code: str
    status: Status
    outcome: CompileOutcome
    reentered: bool = False


Realign = Callable[[int, str, CompileOutcome], str]


def reverify(
    fragments: list[str],
    harness: LeanHarness,
    realign: Realign | None = None,
) -> list[ReverifyResult]:
    """Compile each fragment; route failures through ``realign`` when given.

    ``realign(index, code, outcome)`` must return compiling code or raise
    :class:`~formalflow.refine.Exhausted`; items that cannot be fixed are
    reported Failed and kept with their diagnostics.
    """
    results = []
    for i, fragment in enumerate(fragments):
        outcome = harness.compile(fragment)
        if not outcome.failed:
            results.append(ReverifyResult(fragment, Status.COMPILED, outcome))
            continue
        if realign is None:
            results.append(ReverifyResult(fragment, Status.FAILED, outcome))
            continue
        try:
            fixed = realign(i, fragment, outcome)
        except Exhausted as exc:
            results.append(ReverifyResult(exc.code, Status.FAILED, exc.outcome, reentered=True))
            continue
        final = harness.compile(fixed)
        status = Status.COMPILED if not final.failed else Status.FAILED
        results.append(ReverifyResult(fixed, status, final, reentered=True))
    return results
