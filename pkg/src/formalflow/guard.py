"""Pre-compilation surface checks for generated Lean code.

A cheap, total validator that rejects candidates violating the generation
constraints before any compiler run: forbidden tokens, incomplete-proof
markers, unbalanced block comments, and imports outside the leading block.
The compiler remains the real arbiter; this is intentionally a surface
heuristic.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

DEFAULT_FORBIDDEN_TOKENS: tuple[str, ...] = (
    "∂",   # partial-derivative sign
    "∇",   # nabla
    "ẋ",   # x with dot above
    "ẏ",   # y with dot above
    "ż",   # z with dot above
    "†",   # dagger
    "\\\\",     # double backslash
    "`",        # backtick
)

DEFAULT_BANNED_MARKERS: tuple[str, ...] = ("sorry", "axiom")


@dataclass(frozen=True)
class GuardVerdict:
    passed: bool
    reason: str = ""

    def __post_init__(self):
        if self.passed and self.reason:
            raise ValueError("a passing verdict must carry an empty reason")
        if not self.passed and not self.reason:
            raise ValueError("a failing verdict must name the failed check")


@dataclass(frozen=True)
class GuardRules:
    forbidden_tokens: tuple[str, ...] = DEFAULT_FORBIDDEN_TOKENS
    banned_markers: tuple[str, ...] = DEFAULT_BANNED_MARKERS
    comment_open: str = "/-"
    comment_close: str = "-/"
    # All lines starting with this keyword must form one contiguous block at
    # the top of the file (comments and blank lines may precede it).
    import_keyword: str = "import"

    def to_json_obj(self) -> dict:
        return {
            "forbidden_tokens": list(self.forbidden_tokens),
            "banned_markers": list(self.banned_markers),
            "comment_open": self.comment_open,
            "comment_close": self.comment_close,
            "import_keyword": self.import_keyword,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "GuardRules":
        kwargs = {}
        for key in ("forbidden_tokens", "banned_markers"):
            if key in obj:
                kwargs[key] = tuple(obj[key])
        for key in ("comment_open", "comment_close", "import_keyword"):
            if key in obj:
                kwargs[key] = obj[key]
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path: str | Path) -> "GuardRules":
        return cls.from_json_obj(json.loads(Path(path).read_text(encoding="utf-8")))


def _escape_spellings(token: str) -> list[str]:
    """Raw token plus its escape-sequence spellings as they appear in source text.

    Generation emits both the raw codepoint and escaped forms, so a single-char
    token like U+2207 also matches the literal texts ``\\u2207`` and ``\\u{2207}``.
    """
    spellings = [token]
    if len(token) == 1 and ord(token) > 0x7F:
        cp = ord(token)
        spellings.append("\\u%04x" % cp if cp <= 0xFFFF else "\\U%08x" % cp)
        spellings.append("\\u{%x}" % cp)
    return spellings


def _find_forbidden(code: str, rules: GuardRules) -> str | None:
    for token in rules.forbidden_tokens:
        for spelling in _escape_spellings(token):
            if spelling in code:
                return token
    return None


def _find_banned_marker(code: str, rules: GuardRules) -> str | None:
    # Whole-token match: identifiers like axiomFree must pass.
    for marker in rules.banned_markers:
        if re.search(rf"\b{re.escape(marker)}\b", code):
            return marker
    return None


def _imports_well_ordered(code: str, rules: GuardRules) -> bool:
    kw = rules.import_keyword
    opener, closer = rules.comment_open, rules.comment_close
    block_over = False
    depth = 0
    for line in code.splitlines():
        stripped = line.strip()
        if depth > 0:
            depth = max(depth + stripped.count(opener) - stripped.count(closer), 0)
            continue
        if not stripped or stripped.startswith("--"):
            continue
        if stripped.startswith(opener):
            depth = max(stripped.count(opener) - stripped.count(closer), 0)
            continue
        is_import = stripped == kw or stripped.startswith(kw + " ")
        if is_import:
            if block_over:
                return False
        else:
            block_over = True
    return True


def guard(code: str, rules: GuardRules | None = None) -> GuardVerdict:
    """Run the surface checks in fixed order and report the first failure.

    Order: forbidden token, incomplete-proof marker, comment-delimiter
    balance, import ordering. Pure and total.
    """
    rules = rules or GuardRules()

    token = _find_forbidden(code, rules)
    if token is not None:
        return GuardVerdict(passed=False, reason=f"forbidden token {token}")

    marker = _find_banned_marker(code, rules)
    if marker is not None:
        return GuardVerdict(passed=False, reason=f"incomplete proof: {marker}")

    if code.count(rules.comment_open) != code.count(rules.comment_close):
        return GuardVerdict(passed=False, reason="unmatched delimiters")

    if not _imports_well_ordered(code, rules):
        return GuardVerdict(passed=False, reason="import ordering")

    return GuardVerdict(passed=True)
