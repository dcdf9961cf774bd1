import json

import pytest

from formalflow.harness import (
    SEMANTIC_CATEGORIES,
    STRUCTURAL_CATEGORIES,
    TIMEOUT_MARKER,
    TRUNCATION_MARKER,
    CompileOutcome,
    ErrorCategory,
    LeanHarness,
    ToolchainConfig,
    ToolchainUnavailable,
    categorize,
    filter_fatal,
    is_structural,
    load_pattern_rules,
    truncate_middle,
)

from conftest import CLEAN_THEOREM, FIXTURES, TYPE_MISMATCH_THEOREM

GOLDEN = json.loads((FIXTURES / "golden_outcomes.json").read_text(encoding="utf-8"))

# Intended category per crafted fixture; the harvest run is the oracle that
# these intentions hold under the current pin.
INTENDED = {
    "clean.lean": None,
    "warning_only.lean": None,
    "syntax.lean": ErrorCategory.SYNTAX,
    "unknown_id.lean": ErrorCategory.UNKNOWN_ID,
    "missing_module.lean": ErrorCategory.MISSING_MODULE,
    "type_mismatch.lean": ErrorCategory.TYPE_MISMATCH,
    "unsolved_goals.lean": ErrorCategory.UNSOLVED_GOALS,
    "other.lean": ErrorCategory.OTHER,
}


class TestTaxonomy:
    def test_partition_three_three(self):
        assert len(STRUCTURAL_CATEGORIES) == 3
        assert len(SEMANTIC_CATEGORIES) == 3
        assert STRUCTURAL_CATEGORIES | SEMANTIC_CATEGORIES == set(ErrorCategory)
        assert not STRUCTURAL_CATEGORIES & SEMANTIC_CATEGORIES

    @pytest.mark.parametrize("category", list(ErrorCategory))
    def test_exactly_one_side(self, category):
        assert is_structural(category) == (category in STRUCTURAL_CATEGORIES)

    def test_spec_examples(self):
        assert is_structural(ErrorCategory.SYNTAX)
        assert not is_structural(ErrorCategory.TYPE_MISMATCH)
        assert not is_structural(ErrorCategory.OTHER)


class TestCategorize:
    def test_unknown_identifier_message(self):
        assert categorize("x.lean:3:0: error: unknown identifier 'rfll'") is ErrorCategory.UNKNOWN_ID

    def test_unsolved_goals_message(self):
        assert categorize("x.lean:3:0: error: unsolved goals\n⊢ 1 = 2") is ErrorCategory.UNSOLVED_GOALS

    def test_gibberish_falls_back_to_other(self):
        assert categorize("completely novel gibberish") is ErrorCategory.OTHER

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError):
            categorize("")

    def test_pure_function(self):
        text = "x.lean:1:0: error: type mismatch"
        assert categorize(text) is categorize(text)

    def test_first_match_wins_over_rule_order(self):
        # "unknown package" must hit missing_module although "unknown
        # identifier" rules exist further down.
        text = "error: unknown package 'Foo'"
        assert categorize(text) is ErrorCategory.MISSING_MODULE

    def test_custom_rule_file(self, tmp_path):
        rule_file = tmp_path / "rules.json"
        rule_file.write_text(json.dumps([{"pattern": "boom", "category": "syntax"}]))
        rules = load_pattern_rules(rule_file)
        assert categorize("boom happened", rules) is ErrorCategory.SYNTAX
        assert categorize("type mismatch", rules) is ErrorCategory.OTHER

    def test_golden_messages_map_to_intended_categories(self):
        """The harvested message of every failing fixture categorises as intended."""
        for name, expected in INTENDED.items():
            outcome = GOLDEN["outcomes"][name]
            if expected is None:
                assert outcome["failed"] is False, name
            else:
                assert outcome["failed"] is True, name
                assert categorize(outcome["error_text"]) is expected, name


class TestFilterFatal:
    def test_warnings_stripped(self):
        output = (
            "f.lean:1:0: warning: declaration uses 'sorry'\n"
            "f.lean:3:2: error: unknown identifier 'foo'\n"
            "  extra context line\n"
            "f.lean:9:0: info: elaboration done\n"
        )
        fatal = filter_fatal(output)
        assert "unknown identifier" in fatal
        assert "extra context line" in fatal
        assert "sorry" not in fatal
        assert "info" not in fatal

    def test_no_diagnostics(self):
        assert filter_fatal("ordinary build chatter\n") == ""

    def test_bare_error_header(self):
        assert "unknown package" in filter_fatal("error: unknown package 'X'\n")


class TestTruncateMiddle:
    def test_under_cap_untouched(self):
        assert truncate_middle("short", 100) == "short"

    def test_over_cap_keeps_head_and_tail(self):
        text = "HEAD" + "x" * 10_000 + "TAIL"
        capped = truncate_middle(text, 1024)
        assert len(capped.encode("utf-8")) <= 1024
        assert capped.startswith("HEAD")
        assert capped.endswith("TAIL")
        assert TRUNCATION_MARKER in capped


class TestCompileOutcomeInvariants:
    def test_success_carries_no_error(self):
        with pytest.raises(ValueError):
            CompileOutcome(failed=False, error_text="boom")
        with pytest.raises(ValueError):
            CompileOutcome(failed=False, category=ErrorCategory.OTHER)

    def test_failure_requires_error_and_category(self):
        with pytest.raises(ValueError):
            CompileOutcome(failed=True, error_text="")
        with pytest.raises(ValueError):
            CompileOutcome(failed=True, error_text="x", category=None)

    def test_elapsed_excluded_from_comparison(self):
        first = CompileOutcome(failed=False, elapsed_ms=1.0)
        second = CompileOutcome(failed=False, elapsed_ms=99.0)
        assert first == second


class TestCompile:
    def test_clean_theorem_compiles(self, harness):
        outcome = harness.compile(CLEAN_THEOREM)
        assert outcome.failed is False
        assert outcome.error_text == ""

    def test_empty_module_is_valid(self, harness):
        assert harness.compile("").failed is False

    def test_failing_theorem(self, harness):
        outcome = harness.compile(TYPE_MISMATCH_THEOREM)
        assert outcome.failed is True
        assert outcome.category in (ErrorCategory.TYPE_MISMATCH, ErrorCategory.UNSOLVED_GOALS)
        assert outcome.error_text

    def test_golden_fixture_outcomes(self, harness):
        if harness.pin != GOLDEN["pin"]:
            pytest.skip(f"golden pin {GOLDEN['pin']} != active pin {harness.pin}; re-harvest")
        for name, expected in GOLDEN["outcomes"].items():
            outcome = harness.compile((FIXTURES / "lean" / name).read_text(encoding="utf-8"))
            assert outcome.failed == expected["failed"], name
            got = outcome.category.value if outcome.category else None
            assert got == expected["category"], name

    def test_warning_only_file_passes(self, harness):
        code = (FIXTURES / "lean" / "warning_only.lean").read_text(encoding="utf-8")
        outcome = harness.compile(code)
        assert outcome.failed is False

    def test_determinism_across_runs(self, harness):
        first = harness.compile(TYPE_MISMATCH_THEOREM)
        second = harness.compile(TYPE_MISMATCH_THEOREM)
        assert first == second  # elapsed excluded from equality
        assert first.error_text == second.error_text

    def test_compile_many_bounded_parallel(self, harness):
        codes = [CLEAN_THEOREM, TYPE_MISMATCH_THEOREM, "", CLEAN_THEOREM]
        outcomes = harness.compile_many(codes)
        assert [o.failed for o in outcomes] == [False, True, False, False]

    def test_missing_project_dir(self, tmp_path):
        with pytest.raises(ToolchainUnavailable):
            LeanHarness(ToolchainConfig(project_dir=tmp_path / "missing"))

    def test_undetectable_project(self, tmp_path):
        with pytest.raises(ToolchainUnavailable):
            LeanHarness(ToolchainConfig(project_dir=tmp_path))


class TestStubOnlyBehaviours:
    """Exercised against the stub pin; timing directives are stub features."""

    @pytest.fixture()
    def stub_harness(self, tmp_path):
        from formalflow.harness import make_stub_project

        project = make_stub_project(tmp_path / "stub")
        return LeanHarness(
            ToolchainConfig(project_dir=project, timeout=1.0, error_cap_bytes=2048)
        )

    def test_timeout_reported_as_other(self, stub_harness):
        outcome = stub_harness.compile("-- STUB_SLEEP 5\ntheorem t : 1 = 1 := rfl\n")
        assert outcome.failed is True
        assert outcome.category is ErrorCategory.OTHER
        assert TIMEOUT_MARKER in outcome.error_text

    def test_error_text_truncated_to_cap(self, stub_harness):
        outcome = stub_harness.compile("-- STUB_BIGERR 40000\n")
        assert outcome.failed is True
        assert len(outcome.error_text.encode("utf-8")) <= 2048
        assert TRUNCATION_MARKER in outcome.error_text

    def test_transient_paths_are_rewritten(self, stub_harness):
        outcome = stub_harness.compile(TYPE_MISMATCH_THEOREM)
        assert "<input>" in outcome.error_text
        assert "candidate_" not in outcome.error_text
