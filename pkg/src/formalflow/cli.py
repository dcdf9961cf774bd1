"""Command-line entry point binding the pipeline modules into workflows.

Config precedence is flags > config file (JSON) > built-in defaults. Every
run writes exactly one manifest (command, config snapshot, corpus path,
timestamps, toolchain pin) next to its outputs; timestamps live only there
so identical argv plus an identical mock replay file produce byte-identical
reports. Secrets are read from the environment variable named in the
config, never from flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

from . import agent as agent_mod
from . import evalsuite
from .corpus import (
    CorpusStore,
    FormalRecord,
    Status,
    load_corpus,
    load_gold_examples,
    save_corpus,
)
from .gateway import (
    GENERATION_TEMPERATURE,
    JUDGE_TEMPERATURE,
    BackendRef,
    ChatSession,
    HttpBackend,
    MockBackend,
)
from .guard import GuardRules
from .harness import LeanHarness, ToolchainConfig, make_stub_project
from .hitl import PipelineConfig, split_outputs
from .refine import self_refine, zero_shot
from .service import PipelineService, create_app

log = logging.getLogger(__name__)

DEFAULTS = {
    "endpoint": "http://localhost:8080/v1/chat/completions",
    "model": "",
    "auth_env": "FORMALFLOW_API_KEY",
    "judge_model": "",
    "second_judge_model": "",
    "temperature": GENERATION_TEMPERATURE,
    "judge_temperature": JUDGE_TEMPERATURE,
    "token_budget": 128_000,
    "parallel": 1,
    "patience": 3,
    "n_max": 25,
    "n_initial": 25,
    "batch_size": 5,
    "compile_timeout": 300.0,
    "max_parallel_compiles": 4,
}


@dataclass
class Settings:
    endpoint: str
    model: str
    auth_env: str
    judge_model: str
    second_judge_model: str
    temperature: float
    judge_temperature: float
    token_budget: int
    parallel: int
    patience: int
    n_max: int
    n_initial: int
    batch_size: int
    compile_timeout: float
    max_parallel_compiles: int
    mock: str | None = None
    toolchain_dir: str | None = None


def resolve_settings(args: argparse.Namespace) -> Settings:
    config: dict = {}
    if getattr(args, "config", None):
        config = json.loads(Path(args.config).read_text(encoding="utf-8"))
    values = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        values[key] = flag if flag is not None else config.get(key, default)
    return Settings(
        **values,
        mock=getattr(args, "mock", None) or config.get("mock"),
        toolchain_dir=getattr(args, "toolchain_dir", None) or config.get("toolchain_dir"),
    )


def build_harness(settings: Settings, out_dir: Path) -> LeanHarness:
    project = settings.toolchain_dir or os.environ.get("LEAN_PROJECT_DIR")
    if project is None:
        project = out_dir / "toolchain-stub"
        make_stub_project(project)
        log.warning(
            "no --toolchain-dir given and LEAN_PROJECT_DIR unset; "
            "using the deterministic stub toolchain at %s",
            project,
        )
    cfg = ToolchainConfig(
        project_dir=Path(project),
        timeout=settings.compile_timeout,
        max_parallel=settings.max_parallel_compiles,
    )
    return LeanHarness(cfg)


def make_session_factory(settings: Settings, judge: bool = False):
    temperature = settings.judge_temperature if judge else settings.temperature
    if settings.mock:
        backend = MockBackend.from_file(settings.mock)

        def factory() -> ChatSession:
            return ChatSession(
                backend=backend,
                token_budget=settings.token_budget,
                temperature=temperature,
            )

        return factory

    model = settings.judge_model if judge and settings.judge_model else settings.model
    ref = BackendRef(
        endpoint=settings.endpoint, model_id=model, auth_env=settings.auth_env
    )

    def factory() -> ChatSession:
        return ChatSession(
            backend=HttpBackend(ref),
            token_budget=settings.token_budget,
            temperature=temperature,
        )

    return factory


def write_manifest(
    out_dir: Path,
    command: str,
    argv: list[str],
    settings: Settings,
    corpus_path: str | None,
    pin: str,
    started: float,
) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "config": asdict(settings),
        "corpus": corpus_path,
        "out_dir": str(out_dir),
        "toolchain_pin": pin,
        "started_at": started,
        "finished_at": time.time(),
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def _corpus_path(args: argparse.Namespace) -> str:
    positional = getattr(args, "corpus_pos", None)
    flag = getattr(args, "corpus", None)
    path = flag or positional
    if not path:
        raise SystemExit("error: usage: a corpus file is required (positional or --corpus)")
    return path


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(getattr(args, "out", None) or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# Subcommands

def cmd_compile_check(args: argparse.Namespace) -> int:
    started = time.time()
    settings = resolve_settings(args)
    out_dir = _out_dir(args)
    corpus_path = _corpus_path(args)
    records = load_corpus(corpus_path)
    harness = build_harness(settings, out_dir)
    fv = evalsuite.formal_validity(records, harness)
    print(f"FV {fv:.1f}")
    (out_dir / "compile_check.json").write_text(
        json.dumps({"FV": fv, "n": len(records)}, indent=2) + "\n", encoding="utf-8"
    )
    write_manifest(out_dir, "compile-check", args._argv, settings, corpus_path, harness.pin, started)
    return 0


def _run_per_record(records, worker, parallel: int):
    if parallel <= 1:
        return [worker(rec) for rec in records]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(worker, records))


def cmd_zero_shot(args: argparse.Namespace) -> int:
    started = time.time()
    settings = resolve_settings(args)
    out_dir = _out_dir(args)
    corpus_path = _corpus_path(args)
    records = load_corpus(corpus_path)
    factory = make_session_factory(settings)

    def worker(rec: FormalRecord) -> FormalRecord:
        code = zero_shot(rec.question, factory())
        return FormalRecord(
            id=rec.id,
            field=rec.field,
            question=rec.question,
            answer=rec.answer,
            formal_code=code,
            status=Status.DRAFT,
            drift_labels=rec.drift_labels,
        )

    updated = _run_per_record(records, worker, settings.parallel)
    save_corpus(updated, out_dir / "zero_shot.json")
    print(f"zero-shot: {len(updated)} records written to {out_dir / 'zero_shot.json'}")
    write_manifest(out_dir, "zero-shot", args._argv, settings, corpus_path, "n/a", started)
    return 0


def cmd_self_refine(args: argparse.Namespace) -> int:
    started = time.time()
    settings = resolve_settings(args)
    out_dir = _out_dir(args)
    corpus_path = _corpus_path(args)
    records = load_corpus(corpus_path)
    missing = [r.id for r in records if not r.formal_code]
    if missing:
        raise SystemExit(
            f"error: MissingPriorCode: records without formal code: {missing[:5]}"
        )
    harness = build_harness(settings, out_dir)
    factory = make_session_factory(settings)

    def worker(rec: FormalRecord) -> FormalRecord:
        code = self_refine(rec.question, rec.formal_code, factory(), harness)
        return FormalRecord(
            id=rec.id,
            field=rec.field,
            question=rec.question,
            answer=rec.answer,
            formal_code=code,
            status=Status.DRAFT,
            drift_labels=rec.drift_labels,
        )

    updated = _run_per_record(records, worker, settings.parallel)
    save_corpus(updated, out_dir / "self_refine.json")
    print(f"self-refine: {len(updated)} records written to {out_dir / 'self_refine.json'}")
    write_manifest(out_dir, "self-refine", args._argv, settings, corpus_path, harness.pin, started)
    return 0


def cmd_agent(args: argparse.Namespace) -> int:
    started = time.time()
    settings = resolve_settings(args)
    out_dir = _out_dir(args)
    corpus_path = _corpus_path(args)
    records = load_corpus(corpus_path)
    harness = build_harness(settings, out_dir)
    factory = make_session_factory(settings)
    cfg = agent_mod.AgentConfig(
        max_initial_attempts=settings.n_initial,
        max_correction_steps=settings.n_max,
        rules=GuardRules(),
    )
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)

    def worker(rec: FormalRecord):
        sessions = agent_mod.AgentSessions(generation=factory(), patch=factory())
        result = agent_mod.run_agent(rec, cfg, sessions, harness)
        result.write_trace(trace_dir / f"{rec.id}.jsonl")
        return rec, result

    results = _run_per_record(records, worker, settings.parallel)
    updated = []
    summary = {}
    for rec, result in results:
        status = Status.COMPILED if result.success else Status.FAILED
        updated.append(
            FormalRecord(
                id=rec.id,
                field=rec.field,
                question=rec.question,
                answer=rec.answer,
                formal_code=result.final_code or None,
                status=status if result.final_code else Status.FAILED,
                drift_labels=rec.drift_labels,
            )
        )
        summary[rec.id] = {
            "success": result.success,
            "steps": len(result.steps),
            "initial_attempts": result.initial_attempts,
        }
    save_corpus(updated, out_dir / "agent.json")
    (out_dir / "agent_summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    succeeded = sum(1 for _, r in results if r.success)
    print(f"agent: {succeeded}/{len(records)} compiled; traces in {trace_dir}")
    write_manifest(out_dir, "agent", args._argv, settings, corpus_path, harness.pin, started)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    started = time.time()
    settings = resolve_settings(args)
    out_dir = _out_dir(args)
    corpus_path = _corpus_path(args)
    records = load_corpus(corpus_path)
    missing = [r.id for r in records if not r.formal_code]
    if missing:
        raise SystemExit(f"error: MissingCode: records without formal code: {missing[:5]}")
    harness = build_harness(settings, out_dir)
    judge_spec = evalsuite.JudgeSpec(
        judge_id=settings.judge_model or "judge",
        session_factory=make_session_factory(settings, judge=True),
    )
    second = None
    if settings.second_judge_model:
        second_settings = Settings(**{**asdict(settings), "judge_model": settings.second_judge_model})
        second = evalsuite.JudgeSpec(
            judge_id=settings.second_judge_model,
            session_factory=make_session_factory(second_settings, judge=True),
        )
    outputs = [r.formal_code for r in records]
    result = evalsuite.evaluate_approach(records, outputs, harness, judge_spec, second)
    (out_dir / "report.json").write_text(
        json.dumps(result.to_json_obj(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(evalsuite.REPORT_HEADER)
    print(result.primary.render_row("corpus"))
    if result.secondary is not None:
        print(result.secondary.render_row("corpus (judge 2)"))
        print("agreement phi:", json.dumps(result.agreement_phi, sort_keys=True))
    write_manifest(out_dir, "eval", args._argv, settings, corpus_path, harness.pin, started)
    return 0


def cmd_drift_report(args: argparse.Namespace) -> int:
    started = time.time()
    settings = resolve_settings(args)
    out_dir = _out_dir(args)
    corpus_path = _corpus_path(args)
    records = load_corpus(corpus_path)
    report = evalsuite.drift_report(records)
    (out_dir / "drift.json").write_text(
        json.dumps(report.to_json_obj(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    report.write_csv(out_dir / "drift.csv")
    if getattr(args, "chart", False):
        _write_drift_chart(report, out_dir / "drift.png")
    print(report.render_table())
    write_manifest(out_dir, "drift-report", args._argv, settings, corpus_path, "n/a", started)
    return 0


def _write_drift_chart(report, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    from .corpus import DriftCategory

    categories = [c.value for c in DriftCategory] + ["SingleCategoryOnly"]
    subdomains = [s for s in report.by_subdomain if s != "All"]
    width = 0.8 / len(subdomains)
    x = np.arange(len(categories))
    fig, ax = plt.subplots(figsize=(10, 4))
    for i, sub in enumerate(subdomains):
        values = [report.by_subdomain[sub][c] * 100 for c in categories]
        ax.bar(x + i * width, values, width, label=f"{sub} (n={report.counts[sub]})")
    ax.set_xticks(x + width)
    ax.set_xticklabels(categories, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel("% of records")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def cmd_split(args: argparse.Namespace) -> int:
    started = time.time()
    settings = resolve_settings(args)
    out_dir = _out_dir(args)
    combined_path = Path(args.combined)
    combined = split_outputs(combined_path.read_text(encoding="utf-8"))
    stem = combined_path.stem
    for (label, _), fragment in zip(combined.proofs, combined.fragments()):
        (out_dir / f"{stem}_{label}.lean").write_text(fragment, encoding="utf-8")
    print(f"split: {len(combined.proofs)} fragments written to {out_dir}")
    write_manifest(out_dir, "split", args._argv, settings, str(combined_path), "n/a", started)
    return 0


def cmd_hitl_serve(args: argparse.Namespace) -> int:
    import uvicorn

    started = time.time()
    settings = resolve_settings(args)
    out_dir = _out_dir(args)
    corpus_path = _corpus_path(args)
    store = CorpusStore.from_file(corpus_path)
    harness = build_harness(settings, out_dir)
    factory = make_session_factory(settings)
    config = PipelineConfig(
        patience=settings.patience,
        initial_attempts=settings.n_initial,
        correction_cap=settings.n_max,
        batch_size=settings.batch_size,
    )
    trace_dir = out_dir / "traces"
    trace_dir.mkdir(parents=True, exist_ok=True)
    service = PipelineService(
        store,
        harness,
        factory,
        config=config,
        trace_dir=trace_dir,
        corpus_out=out_dir / "corpus.json",
    )
    app = create_app(service)
    service.start()
    write_manifest(out_dir, "hitl serve", args._argv, settings, corpus_path, harness.pin, started)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


# ---------------------------------------------------------------------------
# Parser

def _add_common(parser: argparse.ArgumentParser, corpus_positional: bool = True) -> None:
    if corpus_positional:
        parser.add_argument("corpus_pos", nargs="?", metavar="CORPUS", help="corpus JSON file")
    parser.add_argument("--corpus", help="corpus JSON file")
    parser.add_argument("--gold", help="gold examples JSON file")
    parser.add_argument("--out", help="output directory (default: out)")
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--mock", help="replay file for the deterministic mock backend")
    parser.add_argument("--parallel", type=int, help="record-level parallelism")
    parser.add_argument("--patience", type=int, help="alignment patience cap")
    parser.add_argument("--n-max", dest="n_max", type=int, help="correction step cap")
    parser.add_argument("--judge-model", dest="judge_model", help="primary judge model id")
    parser.add_argument(
        "--second-judge-model", dest="second_judge_model", help="second judge model id"
    )
    parser.add_argument(
        "--toolchain-dir", dest="toolchain_dir", help="pinned toolchain project directory"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="formalflow",
        description="Autoformalisation pipelines over a pinned Lean toolchain.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile-check", help="formal validity of a corpus")
    _add_common(p)
    p.set_defaults(func=cmd_compile_check)

    p = sub.add_parser("zero-shot", help="zero-shot statement autoformalisation")
    _add_common(p)
    p.set_defaults(func=cmd_zero_shot)

    p = sub.add_parser("self-refine", help="one round of error-feedback refinement")
    _add_common(p)
    p.set_defaults(func=cmd_self_refine)

    p = sub.add_parser("agent", help="guarded agentic generation and repair")
    _add_common(p)
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("eval", help="metric report over a corpus")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("drift-report", help="drift-category report")
    _add_common(p)
    p.add_argument("--chart", action="store_true", help="also write a bar chart PNG")
    p.set_defaults(func=cmd_drift_report)

    p = sub.add_parser("split", help="split a combined file into fragments")
    p.add_argument("combined", metavar="COMBINED", help="combined Lean file")
    _add_common(p, corpus_positional=False)
    p.set_defaults(func=cmd_split)

    hitl = sub.add_parser("hitl", help="human-in-the-loop pipeline")
    hitl_sub = hitl.add_subparsers(dest="hitl_command", required=True)
    p = hitl_sub.add_parser("serve", help="start the console service")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8001)
    p.set_defaults(func=cmd_hitl_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = list(argv) if argv is not None else sys.argv[1:]
    try:
        return args.func(args)
    except SystemExit:
        raise
    except KeyboardInterrupt:
        print("error: Interrupted", file=sys.stderr)
        return 130
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
