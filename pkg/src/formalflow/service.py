"""HTTP service exposing the pipeline to the expert console.

One worker thread drives each batch through the stage machine; the expert
interacts asynchronously: items surface alignment reports and wait on a
binary verdict, submitted over the API with compare-and-set semantics (one
verdict per await point; a second submission conflicts). Per-item event
logs stream over SSE with monotonic event ids so reconnects are idempotent,
and agent run traces are served read-only.

All payloads are JSON under /api/v1.
"""

from __future__ import annotations

import json
import logging
import queue
import threading
import time
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import PlainTextResponse, StreamingResponse
from pydantic import BaseModel

from .corpus import CorpusStore, DriftCategory, DriftLabel, Status
from .gateway import ChatSession, EmptyExtraction, GatewayError, extract_code, load_template, render
from .harness import CompileOutcome, LeanHarness
from .hitl import (
    AlignmentVerdict,
    MalformedCombined,
    PipelineConfig,
    PipelineItemState,
    SplitMismatch,
    Stage,
    VerdictSource,
    VerdictSourceKind,
    alignment_loop,
    split_outputs,
)
from .refine import Exhausted, correct_until_compiles, qa_block

log = logging.getLogger(__name__)

API_PREFIX = "/api/v1"


class ConflictError(Exception):
    pass


class QueueVerdictSource:
    """Blocks pipeline workers until a verdict arrives over the API."""

    def __init__(self):
        self._queues: dict[str, queue.Queue] = {}
        self._lock = threading.Lock()

    def _queue_for(self, key: str) -> queue.Queue:
        with self._lock:
            return self._queues.setdefault(key, queue.Queue())

    def verdict(self, key: str, report: str) -> AlignmentVerdict:
        return self._queue_for(key).get()

    def submit(self, key: str, verdict: AlignmentVerdict) -> None:
        self._queue_for(key).put(verdict)


class PipelineService:
    """Owns item states, event logs, and the batch worker threads."""

    def __init__(
        self,
        store: CorpusStore,
        harness: LeanHarness,
        make_session: Callable[[], ChatSession],
        config: PipelineConfig | None = None,
        verdict_source: VerdictSource | None = None,
        trace_dir: str | Path | None = None,
        corpus_out: str | Path | None = None,
    ):
        self.store = store
        self.harness = harness
        self.make_session = make_session
        self.config = config or PipelineConfig()
        self.verdict_source = verdict_source or QueueVerdictSource()
        self.trace_dir = Path(trace_dir) if trace_dir else None
        self.corpus_out = Path(corpus_out) if corpus_out else None

        self.items: dict[str, PipelineItemState] = {}
        self.batch_of: dict[str, str] = {}
        self.batches: dict[str, list[str]] = {}
        self.meta: dict[str, dict] = {}
        self.events: dict[str, list[dict]] = {}
        self._lock = threading.RLock()
        self._threads: list[threading.Thread] = []

        for rec in store.snapshot():
            self._register(rec.id)

    # -- registry and events ------------------------------------------------

    def _register(self, record_id: str) -> None:
        self.items[record_id] = PipelineItemState(
            record_id=record_id,
            stage=Stage.CODE_GEN,
            patience=self.config.patience,
        )
        self.meta[record_id] = {"code": "", "outcome": None, "report": ""}
        self.events[record_id] = []

        batch_index = (len(self.batch_of)) // self.config.batch_size
        key = f"batch-{batch_index}"
        self.batch_of[record_id] = key
        self.batches.setdefault(key, []).append(record_id)

    def emit(self, record_id: str, kind: str, data: dict | None = None) -> None:
        with self._lock:
            log_ = self.events[record_id]
            log_.append({"id": len(log_) + 1, "type": kind, "data": data or {}})

    def emit_batch(self, ids: list[str], kind: str, data: dict | None = None) -> None:
        for record_id in ids:
            self.emit(record_id, kind, data)

    def _set_stage(self, ids: list[str], stage: Stage) -> None:
        with self._lock:
            for record_id in ids:
                item = self.items[record_id]
                if item.stage is stage:
                    continue
                item.advance(stage)
                self.emit(record_id, "stage_changed", {"stage": stage.value})

    def _fail(self, ids: list[str], reason: str) -> None:
        log.warning("batch failed (%s): %s", ",".join(ids), reason)
        with self._lock:
            for record_id in ids:
                item = self.items[record_id]
                if item.stage not in (Stage.DONE, Stage.FAILED):
                    item.advance(Stage.FAILED)
                    item.note = reason
                    item.needs_verdict = False
                    self.emit(record_id, "stage_changed", {"stage": Stage.FAILED.value, "reason": reason})
                try:
                    self.store.update_status(record_id, Status.FAILED)
                except (ValueError, KeyError):
                    pass

    # -- compile wrapper emitting events ------------------------------------

    def _emitting_harness(self, ids: list[str]) -> "LeanHarness":
        service = self

        class _Emitting:
            pin = service.harness.pin
            cfg = service.harness.cfg

            def compile(self, code: str) -> CompileOutcome:
                service.emit_batch(ids, "compile_started", {})
                outcome = service.harness.compile(code)
                service.emit_batch(ids, "compile_finished", outcome.to_json_obj())
                for record_id in ids:
                    service.meta[record_id]["outcome"] = outcome
                return outcome

            def compile_many(self, codes):
                return [self.compile(c) for c in codes]

        return _Emitting()  # type: ignore[return-value]

    # -- batch driver --------------------------------------------------------

    def start(self) -> None:
        """Spawn one worker per batch; AwaitingVerdict blocks only its batch."""
        for key, ids in self.batches.items():
            thread = threading.Thread(
                target=self._run_batch, args=(key, ids), name=f"pipeline-{key}", daemon=True
            )
            self._threads.append(thread)
            thread.start()

    def join(self, timeout: float | None = None) -> bool:
        deadline = None if timeout is None else time.monotonic() + timeout
        for thread in self._threads:
            remaining = None if deadline is None else max(deadline - time.monotonic(), 0)
            thread.join(remaining)
        return not any(t.is_alive() for t in self._threads)

    def _observer(self, ids: list[str], during_reverify: bool = False):
        def observe(kind: str, data: dict) -> None:
            with self._lock:
                if kind == "report_ready":
                    for record_id in ids:
                        self.meta[record_id]["report"] = data.get("report", "")
                elif kind == "awaiting_verdict":
                    if not during_reverify:
                        self._set_stage(ids, Stage.AWAITING_VERDICT)
                    for record_id in ids:
                        self.items[record_id].needs_verdict = True
                elif kind == "verdict_recorded":
                    for record_id in ids:
                        self.items[record_id].needs_verdict = False
                    if data.get("aligned") == 1:
                        for record_id in ids:
                            self.items[record_id].bump_k()
                        if not during_reverify:
                            self._set_stage(ids, Stage.IMPROVING)
                elif kind == "correcting":
                    if not during_reverify:
                        self._set_stage(ids, Stage.CORRECTING)
            self.emit_batch(ids, kind, data)

        return observe

    def _run_batch(self, key: str, ids: list[str]) -> None:
        records = [self.store.get(record_id) for record_id in ids]
        qa = qa_block(records)
        session = self.make_session()
        harness = self._emitting_harness(ids)
        limits = self.config.limits
        try:
            prompt = render(
                load_template("code_gen"),
                {"qa_block": qa, "first_label": "C1", "last_label": f"C{len(ids)}"},
            )
            code0 = extract_code(session.chat(prompt))
            for record_id in ids:
                self.meta[record_id]["code"] = code0

            self._set_stage(ids, Stage.CORRECTING)
            code, _ = correct_until_compiles(qa, code0, limits, session, harness)
            for record_id in ids:
                self.meta[record_id]["code"] = code

            code, k = alignment_loop(
                qa,
                code,
                self.verdict_source,
                self.config.patience,
                session,
                harness,
                limits,
                key=key,
                observer=self._observer(ids),
            )
            for record_id in ids:
                self.meta[record_id]["code"] = code

            self._set_stage(ids, Stage.SPLITTING)
            combined = split_outputs(code)
            if len(combined.proofs) != len(ids):
                self._fail(
                    ids,
                    f"split produced {len(combined.proofs)} fragments for {len(ids)} items",
                )
                return
            fragments = combined.fragments()

            self._set_stage(ids, Stage.REVERIFYING)
            for record_id, fragment in zip(ids, fragments):
                self._reverify_item(record_id, fragment, limits)

            if self.corpus_out is not None:
                self.store.save(self.corpus_out)
        except Exhausted as exc:
            self._fail(ids, f"correction budget exhausted: {exc.outcome.error_text[:200]}")
        except (SplitMismatch, MalformedCombined, GatewayError, EmptyExtraction) as exc:
            self._fail(ids, f"{type(exc).__name__}: {exc}")
        except Exception:
            log.exception("batch %s crashed", key)
            self._fail(ids, "internal error")

    def _reverify_item(self, record_id: str, fragment: str, limits) -> None:
        record = self.store.get(record_id)
        harness = self._emitting_harness([record_id])
        self.meta[record_id]["code"] = fragment
        outcome = harness.compile(fragment)
        code = fragment
        if outcome.failed:
            # Post-processing introduced an error: re-correct and re-align in
            # a fresh single-item session seeded with the single-item prompt.
            self.emit(record_id, "reverify_reentry", outcome.to_json_obj())
            session = self.make_session()
            seed = render(
                load_template("code_gen"),
                {"qa_block": qa_block(record), "first_label": "C1", "last_label": "C1"},
            )
            session.messages.append({"role": "user", "content": seed})
            session.messages.append({"role": "assistant", "content": fragment})
            try:
                code, _ = correct_until_compiles(record, fragment, limits, session, harness)
                code, _ = alignment_loop(
                    record,
                    code,
                    self.verdict_source,
                    self.config.patience,
                    session,
                    harness,
                    limits,
                    key=self.batch_of[record_id],
                    observer=self._observer([record_id], during_reverify=True),
                )
            except Exhausted as exc:
                self._fail([record_id], f"re-verification exhausted: {exc.outcome.error_text[:200]}")
                return
            except (GatewayError, EmptyExtraction) as exc:
                self._fail([record_id], f"{type(exc).__name__}: {exc}")
                return
        self.meta[record_id]["code"] = code
        self.store.update_status(record_id, Status.COMPILED, formal_code=code)
        self.store.update_status(record_id, Status.ALIGNED)
        self._set_stage([record_id], Stage.DONE)

    # -- API helpers ---------------------------------------------------------

    def list_items(self) -> list[dict]:
        with self._lock:
            out = []
            for record_id, item in self.items.items():
                record = self.store.get(record_id)
                out.append(
                    {
                        "id": record_id,
                        "stage": item.stage.value,
                        "k": item.k,
                        "patience": item.patience,
                        "needs_verdict": item.needs_verdict,
                        "status": record.status.value,
                        "field": record.field.value,
                        "note": item.note,
                    }
                )
            return out

    def get_item(self, record_id: str) -> dict:
        with self._lock:
            if record_id not in self.items:
                raise KeyError(record_id)
            item = self.items[record_id]
            record = self.store.get(record_id)
            meta = self.meta[record_id]
            outcome = meta["outcome"]
            return {
                "id": record_id,
                "stage": item.stage.value,
                "k": item.k,
                "patience": item.patience,
                "needs_verdict": item.needs_verdict,
                "status": record.status.value,
                "field": record.field.value,
                "question": record.question,
                "answer": record.answer,
                "code": meta["code"] or (record.formal_code or ""),
                "compile": outcome.to_json_obj() if outcome else None,
                "report": meta["report"],
                "drift": [
                    {"category": d.category.value, "annotator": d.annotator}
                    for d in sorted(
                        record.drift_labels, key=lambda d: (d.category.value, d.annotator)
                    )
                ],
                "note": item.note,
            }

    def submit_verdict(self, record_id: str, aligned: int, comment: str = "") -> dict:
        """Compare-and-set: only an item currently awaiting a verdict accepts one."""
        with self._lock:
            if record_id not in self.items:
                raise KeyError(record_id)
            item = self.items[record_id]
            if not item.needs_verdict:
                raise ConflictError(
                    f"item {record_id} is not awaiting a verdict (stage {item.stage.value})"
                )
            key = self.batch_of[record_id]
            for sibling in self.batches[key]:
                self.items[sibling].needs_verdict = False
        verdict = AlignmentVerdict(
            aligned=aligned, comment=comment, source=VerdictSourceKind.HUMAN_CONSOLE
        )
        self.verdict_source.submit(key, verdict)  # type: ignore[attr-defined]
        return {"accepted": True, "key": key, "aligned": aligned}

    def set_drift(self, record_id: str, labels: list[dict]) -> dict:
        parsed = frozenset(
            DriftLabel(
                category=DriftCategory(entry["category"]),
                annotator=entry.get("annotator", ""),
            )
            for entry in labels
        )
        record = self.store.set_drift_labels(record_id, parsed)
        return {
            "drift": [
                {"category": d.category.value, "annotator": d.annotator}
                for d in sorted(record.drift_labels, key=lambda d: (d.category.value, d.annotator))
            ]
        }

    def get_events(self, record_id: str, after: int = 0) -> list[dict]:
        with self._lock:
            if record_id not in self.events:
                raise KeyError(record_id)
            return [e for e in self.events[record_id] if e["id"] > after]

    def item_finished(self, record_id: str) -> bool:
        with self._lock:
            return self.items[record_id].stage in (Stage.DONE, Stage.FAILED)


# ---------------------------------------------------------------------------
# FastAPI wiring

class VerdictPayload(BaseModel):
    aligned: int
    comment: str = ""


class DriftPayload(BaseModel):
    labels: list[dict]


def create_app(service: PipelineService) -> FastAPI:
    app = FastAPI(title="formalflow pipeline service")
    app.state.service = service

    @app.get(API_PREFIX + "/health")
    def health() -> dict:
        return {"ok": True, "toolchain_pin": service.harness.pin}

    @app.get(API_PREFIX + "/items")
    def items() -> list[dict]:
        return service.list_items()

    @app.get(API_PREFIX + "/items/{record_id}")
    def item(record_id: str) -> dict:
        try:
            return service.get_item(record_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {record_id}")

    @app.post(API_PREFIX + "/items/{record_id}/verdict")
    def verdict(record_id: str, payload: VerdictPayload) -> dict:
        if payload.aligned not in (0, 1):
            raise HTTPException(status_code=422, detail="aligned must be 0 or 1")
        try:
            return service.submit_verdict(record_id, payload.aligned, payload.comment)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {record_id}")
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.post(API_PREFIX + "/items/{record_id}/improve")
    def improve(record_id: str) -> dict:
        try:
            return service.submit_verdict(record_id, 1, "improvement round requested")
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {record_id}")
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))

    @app.post(API_PREFIX + "/items/{record_id}/drift")
    def drift(record_id: str, payload: DriftPayload) -> dict:
        try:
            return service.set_drift(record_id, payload.labels)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {record_id}")
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    @app.get(API_PREFIX + "/items/{record_id}/events")
    def events(record_id: str, after: int = 0) -> dict:
        try:
            return {"events": service.get_events(record_id, after)}
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {record_id}")

    @app.get(API_PREFIX + "/items/{record_id}/events/stream")
    def stream(record_id: str, request: Request, after: int = 0):
        try:
            service.get_events(record_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {record_id}")
        last_event_id = request.headers.get("last-event-id")
        start_after = int(last_event_id) if last_event_id and last_event_id.isdigit() else after

        def generate():
            cursor = start_after
            while True:
                batch = service.get_events(record_id, cursor)
                for event in batch:
                    cursor = event["id"]
                    payload = json.dumps(event["data"], ensure_ascii=False)
                    yield f"id: {event['id']}\nevent: {event['type']}\ndata: {payload}\n\n"
                if service.item_finished(record_id) and not service.get_events(record_id, cursor):
                    yield "event: end\ndata: {}\n\n"
                    return
                time.sleep(0.05)

        return StreamingResponse(generate(), media_type="text/event-stream")

    @app.get(API_PREFIX + "/traces")
    def traces() -> dict:
        if service.trace_dir is None or not service.trace_dir.is_dir():
            return {"traces": []}
        return {"traces": sorted(p.name for p in service.trace_dir.glob("*.jsonl"))}

    @app.get(API_PREFIX + "/traces/{name}", response_class=PlainTextResponse)
    def trace(name: str) -> str:
        if service.trace_dir is None:
            raise HTTPException(status_code=404, detail="no trace directory configured")
        candidates = {p.name: p for p in service.trace_dir.glob("*.jsonl")}
        if name not in candidates:
            raise HTTPException(status_code=404, detail=f"unknown trace {name}")
        return candidates[name].read_text(encoding="utf-8")

    return app
