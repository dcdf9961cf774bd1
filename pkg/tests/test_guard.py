import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from formalflow.guard import DEFAULT_FORBIDDEN_TOKENS, GuardRules, GuardVerdict, guard

from guard_fixtures import GUARD_FIXTURES


@pytest.mark.parametrize(
    "name,code,expect_pass,reason_substring",
    GUARD_FIXTURES,
    ids=[f[0] for f in GUARD_FIXTURES],
)
def test_fixture_suite(name, code, expect_pass, reason_substring):
    verdict = guard(code)
    assert verdict.passed is expect_pass, f"{name}: got reason {verdict.reason!r}"
    if expect_pass:
        assert verdict.reason == ""
    else:
        assert reason_substring in verdict.reason


def test_default_forbidden_tokens_include_spec_set():
    assert set(DEFAULT_FORBIDDEN_TOKENS) == {
        "∂", "∇", "ẋ", "ẏ", "ż", "†", "\\\\", "`",
    }


def test_reason_names_the_token():
    verdict = guard("theorem t : ∇ f = 0 := rfl")
    assert not verdict.passed
    assert "∇" in verdict.reason


def test_reason_names_the_marker():
    verdict = guard("theorem t : 1 = 1 := by sorry")
    assert "incomplete proof" in verdict.reason
    assert "sorry" in verdict.reason


def test_verdict_invariants():
    with pytest.raises(ValueError):
        GuardVerdict(passed=True, reason="nope")
    with pytest.raises(ValueError):
        GuardVerdict(passed=False, reason="")


def test_rules_json_round_trip():
    rules = GuardRules(forbidden_tokens=("∂",), banned_markers=("sorry",))
    restored = GuardRules.from_json_obj(json.loads(json.dumps(rules.to_json_obj())))
    assert restored == rules


def test_custom_rules_override():
    rules = GuardRules(forbidden_tokens=("Q",))
    assert not guard("theorem Q : 1 = 1 := rfl", rules).passed
    assert guard("theorem t : ∇ = 0 := rfl", rules).passed


_snippets = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), max_codepoint=0x2300),
    max_size=200,
)


@given(code=_snippets)
def test_guard_is_total_and_pure(code):
    first = guard(code)
    second = guard(code)
    assert first == second


@given(code=_snippets, extra=st.sampled_from(["Z", "theorem", "=", "é"]))
def test_adding_forbidden_token_is_monotone(code, extra):
    base = guard(code)
    widened = guard(code, GuardRules(forbidden_tokens=DEFAULT_FORBIDDEN_TOKENS + (extra,)))
    if not base.passed and "forbidden token" not in base.reason:
        # A new token can only introduce earlier failures, never rescue one;
        # it may however preempt a later-check failure with the token reason.
        assert not widened.passed
    if base.passed:
        assert widened.passed or "forbidden token" in widened.reason


@given(code=_snippets)
def test_passing_code_contains_no_banned_markers(code):
    import re

    verdict = guard(code)
    if verdict.passed:
        assert not re.search(r"\bsorry\b", code)
        assert not re.search(r"\baxiom\b", code)
        assert code.count("/-") == code.count("-/")
