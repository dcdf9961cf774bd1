"""Corpus evaluation: formal validity, judge-based binary metrics, counts,
drift-category reporting, and inter-judge agreement.

Formal validity is decided by the toolchain; formal quality, logical
preservation, and mathematical consistency are binary LLM-as-a-judge calls
whose prompts embed the published definition of each metric and constrain
the reply to a final YES/NO line. Unparseable judgments are counted and
excluded from both numerator and denominator.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .corpus import DriftCategory, FormalRecord, Subdomain
from .gateway import ChatSession, load_template, render
from .harness import LeanHarness
from .stats import ContingencyTable2x2, ZeroMarginal, kendall, phi_coefficient

log = logging.getLogger(__name__)


class EmptySample(Exception):
    pass


class InvalidJudgment(Exception):
    pass


class Metric(str, Enum):
    FQ = "FQ"
    LP = "LP"
    MC = "MC"


METRIC_DEFINITIONS = {
    Metric.FQ: "the formal code is of high quality in regard to structural clarity and usefulness",
    Metric.LP: "the code captures the logical structure and content of the original NL statement",
    Metric.MC: "the formal code accurately represents mathematical objects and operations present in the NL statement",
}

COUNT_QUESTIONS = {
    "objects": (
        "How many math or physics objects excluding explicit numbers and "
        "variables are mentioned directly in the natural language statement?"
    ),
    "formulae": (
        "How many math or physics formulae are mentioned directly in the "
        "natural language statement?"
    ),
}


@dataclass(frozen=True)
class JudgeVerdict:
    metric: Metric
    value: int
    judge_id: str
    raw_reply: str


@dataclass
class MetricReport:
    fv: float
    fq: float
    lp: float
    mc: float
    n: int
    invalid_judgments: int = 0

    def to_json_obj(self) -> dict:
        return {
            "FV": self.fv,
            "FQ": self.fq,
            "LP": self.lp,
            "MC": self.mc,
            "n": self.n,
            "invalid_judgments": self.invalid_judgments,
        }

    def render_row(self, label: str) -> str:
        return (
            f"{label:<24} {self.fv:>8.2f} {self.fq:>8.2f} "
            f"{self.lp:>8.2f} {self.mc:>8.2f}"
        )


REPORT_HEADER = f"{'approach':<24} {'FV':>8} {'FQ':>8} {'LP':>8} {'MC':>8}"


def formal_validity(records: list[FormalRecord], harness: LeanHarness) -> float:
    """Percentage of records whose formal code the toolchain accepts."""
    if not records:
        raise EmptySample("formal validity over an empty sample is undefined")
    missing = [r.id for r in records if not r.formal_code]
    if missing:
        raise ValueError(f"records without formal code: {missing[:5]}")
    outcomes = harness.compile_many([r.formal_code for r in records])
    passing = sum(1 for o in outcomes if not o.failed)
    return passing / len(records) * 100.0


def _final_line(reply: str) -> str:
    lines = [l.strip() for l in reply.strip().splitlines() if l.strip()]
    return lines[-1] if lines else ""


def judge(
    metric: Metric,
    statement: str,
    code: str,
    judge_session: ChatSession,
    judge_id: str = "judge",
) -> JudgeVerdict:
    """One binary judgment; the reply's final line must be exactly YES or NO."""
    prompt = render(
        load_template("judge"),
        {
            "metric_definition": METRIC_DEFINITIONS[metric],
            "statement": statement,
            "code": code,
        },
    )
    reply = judge_session.chat(prompt)
    token = _final_line(reply)
    if token == "YES":
        value = 1
    elif token == "NO":
        value = 0
    else:
        raise InvalidJudgment(f"no YES/NO verdict in reply: {reply[:200]!r}")
    return JudgeVerdict(metric=metric, value=value, judge_id=judge_id, raw_reply=reply)


def count_mentions(kind: str, statement: str, judge_session: ChatSession) -> int:
    """Ask the judge for an object/formula count; digits required."""
    if kind not in COUNT_QUESTIONS:
        raise ValueError(f"kind must be one of {tuple(COUNT_QUESTIONS)}")
    prompt = (
        f"{COUNT_QUESTIONS[kind]}\n\nNatural language statement:\n{statement}\n\n"
        "Answer with a single final line containing one integer."
    )
    reply = judge_session.chat(prompt)
    token = _final_line(reply)
    if not token.isdigit():
        raise InvalidJudgment(f"no integer answer in reply: {reply[:200]!r}")
    return int(token)


# ---------------------------------------------------------------------------
# Approach-level evaluation

@dataclass
class JudgeSpec:
    """A judge identity plus a factory for fresh single-call sessions."""

    judge_id: str
    session_factory: "callable"


@dataclass
class EvaluationResult:
    primary: MetricReport
    secondary: MetricReport | None = None
    # metric name -> phi between the two judges' verdict vectors
    agreement_phi: dict[str, float] = field(default_factory=dict)

    def to_json_obj(self) -> dict:
        obj = {"primary": self.primary.to_json_obj()}
        if self.secondary is not None:
            obj["secondary"] = self.secondary.to_json_obj()
        if self.agreement_phi:
            obj["agreement_phi"] = self.agreement_phi
        return obj


def _judge_all(
    records: list[FormalRecord],
    outputs: list[str],
    spec: JudgeSpec,
) -> tuple[dict[Metric, list[int | None]], int]:
    """Per-metric verdict vectors (None marks invalid) plus the invalid count."""
    verdicts: dict[Metric, list[int | None]] = {m: [] for m in Metric}
    invalid = 0
    for rec, code in zip(records, outputs):
        for metric in Metric:
            session = spec.session_factory()
            try:
                v = judge(metric, rec.question, code, session, spec.judge_id)
                verdicts[metric].append(v.value)
            except InvalidJudgment:
                invalid += 1
                verdicts[metric].append(None)
    return verdicts, invalid


def _percent(bits: list[int | None]) -> float:
    valid = [b for b in bits if b is not None]
    if not valid:
        return 0.0
    return sum(valid) / len(valid) * 100.0


def evaluate_approach(
    records: list[FormalRecord],
    outputs: list[str],
    harness: LeanHarness,
    judge_spec: JudgeSpec,
    second_judge_spec: JudgeSpec | None = None,
) -> EvaluationResult:
    """Assemble the full metric report for one approach's outputs.

    ``outputs`` must align 1:1 with ``records``. With a second judge
    configured, a parallel report and per-metric phi agreement are emitted.
    """
    if not records:
        raise EmptySample("cannot evaluate an empty record set")
    if len(records) != len(outputs):
        raise ValueError(
            f"outputs ({len(outputs)}) must align 1:1 with records ({len(records)})"
        )

    outcomes = harness.compile_many(outputs)
    fv = sum(1 for o in outcomes if not o.failed) / len(outputs) * 100.0

    verdicts, invalid = _judge_all(records, outputs, judge_spec)
    primary = MetricReport(
        fv=fv,
        fq=_percent(verdicts[Metric.FQ]),
        lp=_percent(verdicts[Metric.LP]),
        mc=_percent(verdicts[Metric.MC]),
        n=len(records),
        invalid_judgments=invalid,
    )
    if second_judge_spec is None:
        return EvaluationResult(primary=primary)

    verdicts2, invalid2 = _judge_all(records, outputs, second_judge_spec)
    secondary = MetricReport(
        fv=fv,
        fq=_percent(verdicts2[Metric.FQ]),
        lp=_percent(verdicts2[Metric.LP]),
        mc=_percent(verdicts2[Metric.MC]),
        n=len(records),
        invalid_judgments=invalid2,
    )
    agreement = {}
    for metric in Metric:
        pairs = [
            (v1, v2)
            for v1, v2 in zip(verdicts[metric], verdicts2[metric])
            if v1 is not None and v2 is not None
        ]
        if not pairs:
            continue
        table = ContingencyTable2x2.from_pairs(
            [p[0] for p in pairs], [p[1] for p in pairs]
        )
        try:
            agreement[metric.value] = phi_coefficient(table)
        except ZeroMarginal:
            log.warning("phi undefined for metric %s (zero marginal)", metric.value)
    return EvaluationResult(primary=primary, secondary=secondary, agreement_phi=agreement)


def model_ranking_agreement(
    scores_by_model_first: dict[str, float],
    scores_by_model_second: dict[str, float],
) -> tuple[float, float]:
    """Kendall tau between two judges' model rankings on one metric."""
    models = sorted(scores_by_model_first)
    if sorted(scores_by_model_second) != models:
        raise ValueError("judges must score the same model set")
    x = [scores_by_model_first[m] for m in models]
    y = [scores_by_model_second[m] for m in models]
    return kendall(x, y)


# ---------------------------------------------------------------------------
# Drift reporting

@dataclass
class DriftReport:
    """Per-subdomain prevalence of each drift category, as fractions in [0, 1].

    ``single_only`` is the fraction of records carrying exactly one label.
    """

    by_subdomain: dict[str, dict[str, float]]
    counts: dict[str, int]

    def to_json_obj(self) -> dict:
        return {"proportions": self.by_subdomain, "n": self.counts}

    def write_csv(self, path: str | Path) -> None:
        categories = [c.value for c in DriftCategory] + ["SingleCategoryOnly"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["subdomain", "n"] + categories)
            for sub, props in self.by_subdomain.items():
                writer.writerow(
                    [sub, self.counts[sub]]
                    + [f"{props[c]:.4f}" for c in categories]
                )

    def render_table(self) -> str:
        categories = [c.value for c in DriftCategory] + ["SingleCategoryOnly"]
        width = max(len(c) for c in categories) + 2
        lines = [" " * 12 + "".join(f"{c:>{width}}" for c in categories)]
        for sub, props in self.by_subdomain.items():
            row = f"{sub:<12}" + "".join(
                f"{props[c] * 100:>{width - 1}.1f}%" for c in categories
            )
            lines.append(f"{row}  (n={self.counts[sub]})")
        return "\n".join(lines)


def drift_report(records: list[FormalRecord]) -> DriftReport:
    """Prevalence of each drift category per subdomain plus single-label rates."""
    subdomains = [s.value for s in Subdomain] + ["All"]
    by_sub: dict[str, dict[str, float]] = {}
    counts: dict[str, int] = {}
    for sub in subdomains:
        group = [
            r
            for r in records
            if sub == "All" or r.field.value == sub
        ]
        counts[sub] = len(group)
        props: dict[str, float] = {}
        for category in DriftCategory:
            hits = sum(
                1 for r in group if any(d.category is category for d in r.drift_labels)
            )
            props[category.value] = hits / len(group) if group else 0.0
        singles = sum(
            1 for r in group if len({d.category for d in r.drift_labels}) == 1
        )
        props["SingleCategoryOnly"] = singles / len(group) if group else 0.0
        by_sub[sub] = props
    return DriftReport(by_subdomain=by_sub, counts=counts)
