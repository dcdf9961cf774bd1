"""Corpus data model and JSON persistence.

Holds informal derivations, gold statement/proof pairs, generated records
(question, answer, formal code) and their drift annotations. The on-disk
format is a UTF-8 JSON array of record objects with fixed keys:
``id``, ``field``, ``question``, ``answer``, ``lean``, ``status``, ``drift``.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

log = logging.getLogger(__name__)


class CorpusError(Exception):
    """Base class for corpus failures."""


class MalformedCorpus(CorpusError):
    """Schema violation in a corpus file; carries the offending item index."""

    def __init__(self, index: int | None, reason: str):
        self.index = index
        self.reason = reason
        where = "top level" if index is None else f"index {index}"
        super().__init__(f"malformed corpus ({where}): {reason}")


class DuplicateId(CorpusError):
    def __init__(self, record_id: str):
        self.record_id = record_id
        super().__init__(f"duplicate record id: {record_id!r}")


class IoFailure(CorpusError):
    pass


class InvalidBatchSize(CorpusError):
    pass


class Subdomain(str, Enum):
    QM = "QM"
    EM = "EM"
    OTHER = "Other"


_SUBDOMAIN_ALIASES = {
    "qm": Subdomain.QM,
    "quantum mechanics": Subdomain.QM,
    "quantum_mechanics": Subdomain.QM,
    "em": Subdomain.EM,
    "electromagnetism": Subdomain.EM,
    "other": Subdomain.OTHER,
}


def parse_subdomain(raw: str) -> Subdomain:
    """Map a free-form field label onto QM / EM / Other.

    Unknown labels map to Other with a warning rather than failing the load.
    """
    key = raw.strip().lower()
    if key in _SUBDOMAIN_ALIASES:
        return _SUBDOMAIN_ALIASES[key]
    log.warning("unknown subdomain label %r, mapping to Other", raw)
    return Subdomain.OTHER


class Status(str, Enum):
    DRAFT = "Draft"
    COMPILED = "Compiled"
    ALIGNED = "Aligned"
    FAILED = "Failed"


# Draft -> Compiled -> Aligned is monotone; Failed is terminal for the run.
_STATUS_RANK = {Status.DRAFT: 0, Status.COMPILED: 1, Status.ALIGNED: 2}


class DriftCategory(str, Enum):
    NOTATIONAL_COLLAPSE = "NotationalCollapse"
    ABSTRACTION_ELEVATION = "AbstractionElevation"
    PROOF_STRATEGY_SUBSTITUTION = "ProofStrategySubstitution"
    IMPLICIT_PREMISE_SELECTION = "ImplicitPremiseSelection"


@dataclass(frozen=True)
class DriftLabel:
    category: DriftCategory
    annotator: str = ""


@dataclass(frozen=True)
class InformalDerivation:
    """One informal derivation: an ordered list of LaTeX equation steps."""

    id: str
    steps: tuple[str, ...]
    source_tag: str = ""

    def __post_init__(self):
        if not self.steps:
            raise ValueError(f"derivation {self.id!r} has no steps")
        if any(not s.strip() for s in self.steps):
            raise ValueError(f"derivation {self.id!r} has an empty step")


@dataclass(frozen=True)
class GoldExample:
    """A gold-standard informal statement/proof pair used for few-shot prompting."""

    statement: str
    proof: str

    def __post_init__(self):
        if not self.statement.strip() or not self.proof.strip():
            raise ValueError("gold example statement and proof must be nonempty")


@dataclass(frozen=True)
class FormalRecord:
    """One corpus item: informal question/answer plus its formal code and status."""

    id: str
    field: Subdomain
    question: str
    answer: str
    formal_code: str | None = None
    status: Status = Status.DRAFT
    drift_labels: frozenset[DriftLabel] = frozenset()

    def __post_init__(self):
        if self.status in (Status.COMPILED, Status.ALIGNED) and not self.formal_code:
            raise ValueError(
                f"record {self.id!r}: status {self.status.value} requires formal code"
            )

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "field": self.field.value,
            "question": self.question,
            "answer": self.answer,
            "lean": self.formal_code,
            "status": self.status.value,
            "drift": [
                {"category": d.category.value, "annotator": d.annotator}
                for d in sorted(self.drift_labels, key=lambda d: (d.category.value, d.annotator))
            ],
        }


@dataclass(frozen=True)
class Batch:
    """A batch of derivations, at most ``size_limit`` items, order-preserving."""

    items: tuple[InformalDerivation, ...]
    size_limit: int

    def __post_init__(self):
        if not 1 <= len(self.items) <= self.size_limit:
            raise ValueError(
                f"batch size {len(self.items)} outside [1, {self.size_limit}]"
            )


def make_batches(items: list[InformalDerivation], batch_size: int) -> list[Batch]:
    """Chunk ``items`` in order into batches of ``batch_size`` (last may be short)."""
    if batch_size < 1:
        raise InvalidBatchSize(f"batch size must be >= 1, got {batch_size}")
    return [
        Batch(items=tuple(items[i : i + batch_size]), size_limit=batch_size)
        for i in range(0, len(items), batch_size)
    ]


def _record_from_obj(obj, index: int, source_tag: str) -> FormalRecord:
    if not isinstance(obj, dict):
        raise MalformedCorpus(index, f"record must be an object, got {type(obj).__name__}")
    for key in ("question", "answer"):
        if key not in obj:
            raise MalformedCorpus(index, f"missing required key {key!r}")
        if not isinstance(obj[key], str):
            raise MalformedCorpus(index, f"key {key!r} must be a string")

    record_id = obj.get("id")
    if record_id is None:
        record_id = f"{source_tag}-{index:04d}"
    elif not isinstance(record_id, str) or not record_id:
        raise MalformedCorpus(index, "key 'id' must be a nonempty string")

    raw_field = obj.get("field", Subdomain.OTHER.value)
    if not isinstance(raw_field, str):
        raise MalformedCorpus(index, "key 'field' must be a string")

    code = obj.get("lean")
    if code is not None and not isinstance(code, str):
        raise MalformedCorpus(index, "key 'lean' must be a string or null")

    raw_status = obj.get("status", Status.DRAFT.value)
    try:
        status = Status(raw_status)
    except ValueError:
        raise MalformedCorpus(index, f"unknown status {raw_status!r}") from None

    labels = set()
    for entry in obj.get("drift", []):
        if not isinstance(entry, dict) or "category" not in entry:
            raise MalformedCorpus(index, "drift entries must be objects with a 'category'")
        try:
            category = DriftCategory(entry["category"])
        except ValueError:
            raise MalformedCorpus(
                index, f"unknown drift category {entry['category']!r}"
            ) from None
        labels.add(DriftLabel(category=category, annotator=entry.get("annotator", "")))

    try:
        return FormalRecord(
            id=record_id,
            field=parse_subdomain(raw_field),
            question=obj["question"],
            answer=obj["answer"],
            formal_code=code,
            status=status,
            drift_labels=frozenset(labels),
        )
    except ValueError as exc:
        raise MalformedCorpus(index, str(exc)) from None


def load_corpus(path: str | Path) -> list[FormalRecord]:
    """Load and validate a JSON corpus file; record ids must be unique."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot read corpus {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedCorpus(None, f"invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise MalformedCorpus(None, "corpus must be a JSON array of records")

    records = [_record_from_obj(obj, i, path.stem) for i, obj in enumerate(data)]
    seen: set[str] = set()
    for rec in records:
        if rec.id in seen:
            raise DuplicateId(rec.id)
        seen.add(rec.id)
    return records


def save_corpus(records: list[FormalRecord], path: str | Path) -> None:
    """Write records as a JSON array; ``load_corpus`` round-trips the result."""
    path = Path(path)
    payload = [rec.to_json_obj() for rec in records]
    try:
        path.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoFailure(f"cannot write corpus {path}: {exc}") from exc


def load_gold_examples(path: str | Path) -> list[GoldExample]:
    """Load a JSON array of ``{statement, proof}`` objects."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read gold examples {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedCorpus(None, f"invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise MalformedCorpus(None, "gold examples must be a JSON array")
    out = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict) or "statement" not in obj or "proof" not in obj:
            raise MalformedCorpus(i, "gold example needs 'statement' and 'proof'")
        try:
            out.append(GoldExample(statement=obj["statement"], proof=obj["proof"]))
        except ValueError as exc:
            raise MalformedCorpus(i, str(exc)) from None
    return out


def load_derivations(path: str | Path) -> list[InformalDerivation]:
    """Load a JSON array of ``{id?, steps, source_tag?}`` derivation objects.

    Ids default to ``source_tag-ordinal`` (file stem when no tag is given).
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(f"cannot read derivations {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise MalformedCorpus(None, f"invalid JSON: {exc}") from exc
    if not isinstance(data, list):
        raise MalformedCorpus(None, "derivations must be a JSON array")
    out = []
    for i, obj in enumerate(data):
        if not isinstance(obj, dict) or "steps" not in obj or not isinstance(obj["steps"], list):
            raise MalformedCorpus(i, "derivation needs a 'steps' array")
        tag = obj.get("source_tag", path.stem)
        try:
            out.append(
                InformalDerivation(
                    id=obj.get("id") or f"{tag}-{i:04d}",
                    steps=tuple(obj["steps"]),
                    source_tag=tag,
                )
            )
        except ValueError as exc:
            raise MalformedCorpus(i, str(exc)) from None
    return out


class CorpusStore:
    """Single-writer, concurrently-readable store of records.

    Pipelines receive immutable snapshots (frozen dataclasses); every mutation
    goes through this store under one lock, and status changes must follow
    Draft -> Compiled -> Aligned, with Failed terminal.
    """

    def __init__(self, records: list[FormalRecord] | None = None):
        self._lock = threading.Lock()
        self._records: dict[str, FormalRecord] = {}
        for rec in records or []:
            if rec.id in self._records:
                raise DuplicateId(rec.id)
            self._records[rec.id] = rec

    @classmethod
    def from_file(cls, path: str | Path) -> "CorpusStore":
        return cls(load_corpus(path))

    def add(self, record: FormalRecord) -> None:
        with self._lock:
            if record.id in self._records:
                raise DuplicateId(record.id)
            self._records[record.id] = record

    def get(self, record_id: str) -> FormalRecord:
        with self._lock:
            return self._records[record_id]

    def snapshot(self) -> list[FormalRecord]:
        with self._lock:
            return list(self._records.values())

    def update_status(
        self, record_id: str, status: Status, formal_code: str | None = None
    ) -> FormalRecord:
        with self._lock:
            rec = self._records[record_id]
            if rec.status is Status.FAILED:
                raise ValueError(f"record {record_id!r} is Failed (terminal)")
            if status is not Status.FAILED and rec.status is not status:
                if _STATUS_RANK[status] < _STATUS_RANK[rec.status]:
                    raise ValueError(
                        f"record {record_id!r}: illegal status regression "
                        f"{rec.status.value} -> {status.value}"
                    )
            updated = replace(
                rec,
                status=status,
                formal_code=formal_code if formal_code is not None else rec.formal_code,
            )
            self._records[record_id] = updated
            return updated

    def set_formal_code(self, record_id: str, code: str) -> FormalRecord:
        with self._lock:
            updated = replace(self._records[record_id], formal_code=code)
            self._records[record_id] = updated
            return updated

    def set_drift_labels(self, record_id: str, labels: frozenset[DriftLabel]) -> FormalRecord:
        with self._lock:
            updated = replace(self._records[record_id], drift_labels=labels)
            self._records[record_id] = updated
            return updated

    def save(self, path: str | Path) -> None:
        with self._lock:
            records = list(self._records.values())
        save_corpus(records, path)
