"""Invoke the Lean toolchain on candidate code and classify fatal errors.

The toolchain is pinned by a project directory: a Lake project (detected via
its lakefile) is run with ``lake env lean``, and any other directory must
carry a ``toolchain.json`` naming the compile command. Diagnostics are read
from the standard streams, non-fatal warnings are stripped, and fatal text
is truncated from the middle to a byte cap before being fed back to prompts.

Fatal errors map onto a six-class taxonomy via an ordered pattern-rule list
shipped as a data file, split into structural classes (syntax, unknown
identifier, missing module) and semantic classes (type mismatch, unsolved
goals, other); the split selects the repair strategy downstream.
"""

from __future__ import annotations

import json
import logging
import re
import subprocess
import tempfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path

log = logging.getLogger(__name__)

TRUNCATION_MARKER = "[... truncated ...]"
TIMEOUT_MARKER = "[timeout]"


class HarnessError(Exception):
    pass


class ToolchainUnavailable(HarnessError):
    pass


class ErrorCategory(str, Enum):
    SYNTAX = "syntax"
    UNKNOWN_ID = "unknown_id"
    MISSING_MODULE = "missing_module"
    TYPE_MISMATCH = "type_mismatch"
    UNSOLVED_GOALS = "unsolved_goals"
    OTHER = "other"


STRUCTURAL_CATEGORIES = frozenset(
    {ErrorCategory.SYNTAX, ErrorCategory.UNKNOWN_ID, ErrorCategory.MISSING_MODULE}
)
SEMANTIC_CATEGORIES = frozenset(
    {ErrorCategory.TYPE_MISMATCH, ErrorCategory.UNSOLVED_GOALS, ErrorCategory.OTHER}
)


def is_structural(category: ErrorCategory) -> bool:
    """Structural errors trigger full regeneration; semantic ones get patched."""
    return category in STRUCTURAL_CATEGORIES


@dataclass(frozen=True)
class CompileOutcome:
    """Result of one toolchain invocation.

    ``elapsed_ms`` is timing-only and excluded from equality so identical
    code compiled twice compares equal.
    """

    failed: bool
    error_text: str = ""
    category: ErrorCategory | None = None
    elapsed_ms: float = field(default=0.0, compare=False)

    def __post_init__(self):
        if not self.failed and (self.error_text or self.category is not None):
            raise ValueError("successful outcome must carry no error text or category")
        if self.failed and (not self.error_text or self.category is None):
            raise ValueError("failed outcome must carry error text and a category")

    def to_json_obj(self) -> dict:
        return {
            "failed": self.failed,
            "error_text": self.error_text,
            "category": self.category.value if self.category else None,
        }


@dataclass(frozen=True)
class ToolchainConfig:
    project_dir: Path
    timeout: float = 300.0
    max_parallel: int = 4
    error_cap_bytes: int = 8192

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")
        if self.max_parallel < 1:
            raise ValueError("max_parallel must be >= 1")


# ---------------------------------------------------------------------------
# Error categorisation

@dataclass(frozen=True)
class PatternRule:
    pattern: re.Pattern
    category: ErrorCategory


def load_pattern_rules(path: str | Path | None = None) -> tuple[PatternRule, ...]:
    """Load the ordered rule list (shipped data file unless overridden)."""
    if path is not None:
        text = Path(path).read_text(encoding="utf-8")
    else:
        text = (resources.files("formalflow") / "rules" / "error_patterns.json").read_text(
            encoding="utf-8"
        )
    rules = []
    for entry in json.loads(text):
        rules.append(
            PatternRule(
                pattern=re.compile(entry["pattern"], re.IGNORECASE),
                category=ErrorCategory(entry["category"]),
            )
        )
    return tuple(rules)


_DEFAULT_RULES: tuple[PatternRule, ...] | None = None


def categorize(error_text: str, rules: tuple[PatternRule, ...] | None = None) -> ErrorCategory:
    """First-match-wins classification of a fatal error message."""
    if not error_text:
        raise ValueError("categorize requires nonempty error text")
    global _DEFAULT_RULES
    if rules is None:
        if _DEFAULT_RULES is None:
            _DEFAULT_RULES = load_pattern_rules()
        rules = _DEFAULT_RULES
    for rule in rules:
        if rule.pattern.search(error_text):
            return rule.category
    return ErrorCategory.OTHER


# ---------------------------------------------------------------------------
# Diagnostic filtering

# Lean prints "file:line:col: severity: message"; lake and the driver also
# emit bare "error: message" lines.
_DIAG_HEADER = re.compile(
    r"^(?:(?P<file>[^\s:][^:\n]*):(?P<line>\d+):(?P<col>\d+): )?(?P<sev>error|warning|info): ",
    re.MULTILINE,
)


def filter_fatal(output: str) -> str:
    """Keep only severity-error diagnostic blocks from toolchain output.

    A block runs from its header line to the next header (messages continue
    over indented follow-up lines). Returns the empty string when no fatal
    diagnostic is present.
    """
    matches = list(_DIAG_HEADER.finditer(output))
    if not matches:
        return ""
    blocks = []
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(output)
        if m.group("sev") == "error":
            blocks.append(output[m.start() : end].rstrip("\n"))
    return "\n".join(blocks)


def truncate_middle(text: str, cap_bytes: int) -> str:
    """Cap text size keeping head and tail; errors front-load the location
    and tail-load the goal state."""
    encoded = text.encode("utf-8")
    if len(encoded) <= cap_bytes:
        return text
    keep = max((cap_bytes - len(TRUNCATION_MARKER) - 2) // 2, 0)
    head = encoded[:keep].decode("utf-8", errors="ignore")
    tail = encoded[-keep:].decode("utf-8", errors="ignore")
    return f"{head}\n{TRUNCATION_MARKER}\n{tail}"


# ---------------------------------------------------------------------------
# Toolchain invocation

def _resolve_command(project_dir: Path) -> tuple[list[str], str]:
    """Return (argv template with a {file} slot, pin string) for the project."""
    manifest = project_dir / "toolchain.json"
    if manifest.exists():
        obj = json.loads(manifest.read_text(encoding="utf-8"))
        command = obj.get("command")
        if not isinstance(command, list) or not any("{file}" in c for c in command):
            raise ToolchainUnavailable(
                f"{manifest}: 'command' must be an argv list containing a {{file}} slot"
            )
        return command, obj.get("pin", "unpinned")
    if (project_dir / "lakefile.toml").exists() or (project_dir / "lakefile.lean").exists():
        pin_file = project_dir / "lean-toolchain"
        pin = pin_file.read_text(encoding="utf-8").strip() if pin_file.exists() else "lake"
        return ["lake", "env", "lean", "{file}"], pin
    raise ToolchainUnavailable(
        f"{project_dir} is neither a Lake project nor carries a toolchain.json"
    )


class LeanHarness:
    """Bounded-parallelism compile service over one pinned toolchain project."""

    def __init__(self, cfg: ToolchainConfig, rules: tuple[PatternRule, ...] | None = None):
        self.cfg = cfg
        project_dir = Path(cfg.project_dir)
        if not project_dir.is_dir():
            raise ToolchainUnavailable(f"project dir {project_dir} does not exist")
        self._command, self.pin = _resolve_command(project_dir)
        self._rules = rules
        self._slots = threading.BoundedSemaphore(cfg.max_parallel)

    def check(self) -> None:
        """Pre-flight: the pinned project must accept an empty module."""
        outcome = self.compile("")
        if outcome.failed:
            raise ToolchainUnavailable(
                f"toolchain rejects the empty module: {outcome.error_text[:500]}"
            )

    def compile(self, code: str) -> CompileOutcome:
        """Compile one candidate and report the filtered fatal outcome."""
        project_dir = Path(self.cfg.project_dir)
        start = time.monotonic()
        with tempfile.NamedTemporaryFile(
            mode="w",
            suffix=".lean",
            prefix="candidate_",
            dir=project_dir,
            encoding="utf-8",
            delete=False,
        ) as handle:
            handle.write(code)
            source = Path(handle.name)
        argv = [part.replace("{file}", str(source)) for part in self._command]
        try:
            with self._slots:
                try:
                    proc = subprocess.run(
                        argv,
                        cwd=project_dir,
                        capture_output=True,
                        text=True,
                        timeout=self.cfg.timeout,
                    )
                except subprocess.TimeoutExpired:
                    elapsed = (time.monotonic() - start) * 1000
                    return CompileOutcome(
                        failed=True,
                        error_text=f"{TIMEOUT_MARKER} toolchain exceeded {self.cfg.timeout}s",
                        category=ErrorCategory.OTHER,
                        elapsed_ms=elapsed,
                    )
                except FileNotFoundError as exc:
                    raise ToolchainUnavailable(
                        f"toolchain command not found: {argv[0]!r}"
                    ) from exc
        finally:
            source.unlink(missing_ok=True)
        elapsed = (time.monotonic() - start) * 1000

        output = (proc.stdout or "") + (proc.stderr or "")
        # Transient file names would make otherwise-identical runs differ.
        output = output.replace(str(source), "<input>").replace(source.name, "<input>")
        fatal = filter_fatal(output)
        if not fatal and proc.returncode != 0:
            fatal = (
                f"toolchain exited with status {proc.returncode} "
                f"and no parsed diagnostics:\n{output}".rstrip()
            )
        if not fatal:
            return CompileOutcome(failed=False, elapsed_ms=elapsed)
        fatal = truncate_middle(fatal, self.cfg.error_cap_bytes)
        return CompileOutcome(
            failed=True,
            error_text=fatal,
            category=categorize(fatal, self._rules),
            elapsed_ms=elapsed,
        )

    def compile_many(self, codes: list[str]) -> list[CompileOutcome]:
        with ThreadPoolExecutor(max_workers=self.cfg.max_parallel) as pool:
            return list(pool.map(self.compile, codes))


def make_stub_project(directory: str | Path, pin: str = "stub-lean-0.1") -> Path:
    """Create a toolchain project backed by the deterministic stub compiler.

    Used for tests and mock runs in environments without a Lean install;
    point LEAN_PROJECT_DIR (or --toolchain-dir) at a real Lake project to
    compile against an actual pin instead.
    """
    import sys

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": [sys.executable, "-m", "formalflow.stub_toolchain", "{file}"],
        "pin": pin,
    }
    (directory / "toolchain.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    return directory
