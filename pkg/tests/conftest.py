import os
from pathlib import Path

import pytest

from formalflow.harness import LeanHarness, ToolchainConfig, make_stub_project

FIXTURES = Path(__file__).parent / "fixtures"

# Accepted by the environment's pinned toolchain (stub or real Lean).
CLEAN_THEOREM = "import Lean\n\ntheorem check_eq_one : 1 = 1 := rfl\n"
TYPE_MISMATCH_THEOREM = "import Lean\n\ntheorem check_bad : 1 = 2 := rfl\n"
SYNTAX_ERROR_SOURCE = "import Lean\n\ntheorem : 1 = 1 := rfl\n"


@pytest.fixture(scope="session")
def toolchain_project(tmp_path_factory) -> Path:
    env = os.environ.get("LEAN_PROJECT_DIR")
    if env:
        return Path(env)
    return make_stub_project(tmp_path_factory.mktemp("toolchain"))


@pytest.fixture(scope="session")
def harness(toolchain_project) -> LeanHarness:
    h = LeanHarness(
        ToolchainConfig(project_dir=toolchain_project, timeout=120.0, max_parallel=4)
    )
    h.check()
    return h
