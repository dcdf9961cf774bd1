"""Deterministic stand-in for the Lean compiler, for tests and mock runs.

Sandboxes and CI hosts frequently have no Lean install; this module is the
``toolchain.json`` command of the stub project created by
``harness.make_stub_project``. It applies a fixed set of narrow textual
checks that mirror how the real toolchain reacts to the shipped fixture
files, and prints diagnostics in the real ``file:line:col: severity:``
shape so the filtering, truncation, and categorisation paths are exercised
unchanged. It is a test double, not a Lean implementation: golden outcomes
must be re-harvested when pointing at a real pin (scripts/harvest_golden.py).

Usage: python -m formalflow.stub_toolchain FILE
"""

from __future__ import annotations

import re
import sys
import time
from pathlib import Path

ALLOWED_IMPORT_ROOTS = {"Init", "Lean", "Std", "Mathlib", "Aesop", "Batteries"}

_IMPORT = re.compile(r"^import\s+([A-Za-z0-9_.]+)\s*$")
_BAD_THEOREM_NAME = re.compile(r"^\s*theorem\s*:")
_RFL_EQUALITY = re.compile(
    r"theorem\s+[\w.']+\s*.*?:\s*([^:=\s]+)\s*=\s*([^:=\s]+)\s*:=\s*rfl\s*$"
)
_SKIP_GOAL = re.compile(r":\s*(.+?)\s*:=\s*by\s+skip\s*$")
_SLEEP = re.compile(r"--\s*STUB_SLEEP\s+([0-9.]+)")
_BIGERR = re.compile(r"--\s*STUB_BIGERR\s+(\d+)")


def _diagnose(path: str, text: str) -> tuple[list[str], bool]:
    out: list[str] = []
    has_error = False

    m = _SLEEP.search(text)
    if m:
        time.sleep(float(m.group(1)))

    m = _BIGERR.search(text)
    if m:
        size = int(m.group(1))
        filler = ("x" * 70 + "\n") * (size // 71 + 1)
        out.append(f"{path}:1:0: error: type mismatch\n{filler[:size]}")
        return out, True

    if text.count("/-") != text.count("-/"):
        out.append(f"{path}:1:0: error: unterminated comment")
        has_error = True

    lines = text.splitlines()
    for no, line in enumerate(lines, start=1):
        m = _IMPORT.match(line.strip())
        if m:
            root = m.group(1).split(".")[0]
            if root not in ALLOWED_IMPORT_ROOTS:
                out.append(f"{path}:{no}:0: error: unknown package '{root}'")
                has_error = True
            continue

        if _BAD_THEOREM_NAME.match(line):
            col = line.index(":")
            out.append(
                f"{path}:{no}:{col}: error: unexpected token ':'; expected identifier"
            )
            has_error = True
            continue

        if "rfll" in line:
            col = line.index("rfll")
            out.append(f"{path}:{no}:{col}: error: unknown identifier 'rfll'")
            has_error = True
            continue

        m = _SKIP_GOAL.search(line)
        if m:
            out.append(
                f"{path}:{no}:{line.rfind('by')}: error: unsolved goals\n"
                f"⊢ {m.group(1).strip()}"
            )
            has_error = True
            continue

        m = _RFL_EQUALITY.search(line)
        if m and m.group(1) != m.group(2):
            col = line.rfind("rfl")
            out.append(
                f"{path}:{no}:{col}: error: type mismatch\n"
                f"  rfl\n"
                f"has type\n"
                f"  ?a = ?a : Prop\n"
                f"but is expected to have type\n"
                f"  {m.group(1)} = {m.group(2)} : Prop"
            )
            has_error = True
            continue

        if "(default : Empty)" in line:
            col = line.index("(default")
            out.append(
                f"{path}:{no}:{col}: error: failed to synthesize\n"
                f"  Inhabited Empty\n"
                f"Additional diagnostic information may be available "
                f"using the `set_option diagnostics true` command."
            )
            has_error = True
            continue

        if re.search(r"\bsorry\b", line):
            col = line.index("sorry")
            out.append(f"{path}:{no}:{col}: warning: declaration uses 'sorry'")

    return out, has_error


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    if len(argv) != 1:
        print("usage: python -m formalflow.stub_toolchain FILE", file=sys.stderr)
        return 2
    path = Path(argv[0])
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {path}: {exc}", file=sys.stderr)
        return 1
    diagnostics, has_error = _diagnose(str(path), text)
    if diagnostics:
        print("\n".join(diagnostics))
    return 1 if has_error else 0


if __name__ == "__main__":
    sys.exit(main())
