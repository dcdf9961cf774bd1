#!/usr/bin/env python3
"""Harvest golden compile outcomes for the crafted fixture files.

Runs every tests/fixtures/lean/*.lean file through the configured toolchain
and freezes the outcomes (failed bit, assigned category, filtered error
text) into tests/fixtures/golden_outcomes.json. The harvest run is the
oracle for the categorisation suite, so re-run this script whenever the
toolchain pin changes:

    LEAN_PROJECT_DIR=/path/to/lake/project python3 scripts/harvest_golden.py

Without LEAN_PROJECT_DIR the deterministic stub toolchain is used.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from formalflow.harness import LeanHarness, ToolchainConfig, make_stub_project

REPO = Path(__file__).resolve().parents[1]
FIXTURE_DIR = REPO / "tests" / "fixtures" / "lean"
GOLDEN_PATH = REPO / "tests" / "fixtures" / "golden_outcomes.json"


def main() -> int:
    project = os.environ.get("LEAN_PROJECT_DIR")
    tmp = None
    if project is None:
        tmp = tempfile.TemporaryDirectory(prefix="stub-toolchain-")
        project = make_stub_project(tmp.name)
        print(f"LEAN_PROJECT_DIR unset; harvesting against the stub pin in {project}")
    harness = LeanHarness(ToolchainConfig(project_dir=Path(project), timeout=120.0))
    harness.check()

    golden: dict = {"pin": harness.pin, "outcomes": {}}
    for path in sorted(FIXTURE_DIR.glob("*.lean")):
        outcome = harness.compile(path.read_text(encoding="utf-8"))
        golden["outcomes"][path.name] = {
            "failed": outcome.failed,
            "category": outcome.category.value if outcome.category else None,
            "error_text": outcome.error_text,
        }
        state = outcome.category.value if outcome.failed else "ok"
        print(f"  {path.name:<24} -> {state}")
    GOLDEN_PATH.write_text(
        json.dumps(golden, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )
    print(f"golden outcomes written to {GOLDEN_PATH} (pin: {harness.pin})")
    if tmp is not None:
        tmp.cleanup()
    return 0


if __name__ == "__main__":
    sys.exit(main())
