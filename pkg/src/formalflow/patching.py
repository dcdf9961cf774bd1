"""Line numbering and minimal unified-diff parsing/application.

Backs the semantic-error patch agent: source is shown to the model with
line numbers prepended, the model answers with a unified diff, and the
diff is validated and applied in memory. Single-file patches only; no
three-way merge, no binary diffs.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum


class PatchError(Exception):
    pass


class MalformedDiff(PatchError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"malformed diff at line {line_no}: {reason}")


class PatchContextMismatch(PatchError):
    def __init__(self, hunk_index: int, expected: str, found: str):
        self.hunk_index = hunk_index
        self.expected = expected
        self.found = found
        super().__init__(
            f"hunk {hunk_index}: context mismatch, expected {expected!r}, found {found!r}"
        )


@dataclass(frozen=True)
class NumberedSource:
    """Source split into (1-based line number, text) pairs.

    The empty string numbers as a single empty line; a trailing newline is
    remembered so rendering back is the identity.
    """

    lines: tuple[tuple[int, str], ...]
    trailing_newline: bool

    def render(self) -> str:
        return "\n".join(f"{n}: {text}" for n, text in self.lines)

    def restore(self) -> str:
        body = "\n".join(text for _, text in self.lines)
        return body + ("\n" if self.trailing_newline else "")


def number_lines(code: str) -> NumberedSource:
    trailing = code.endswith("\n")
    body = code[:-1] if trailing else code
    parts = body.split("\n")
    return NumberedSource(
        lines=tuple((i + 1, text) for i, text in enumerate(parts)),
        trailing_newline=trailing,
    )


class LineKind(str, Enum):
    CONTEXT = "context"
    DELETE = "delete"
    ADD = "add"


@dataclass(frozen=True)
class HunkLine:
    kind: LineKind
    text: str
    # Set by a "\ No newline at end of file" marker on the previous line.
    no_newline: bool = False


@dataclass(frozen=True)
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    body: tuple[HunkLine, ...]


@dataclass(frozen=True)
class UnifiedDiff:
    hunks: tuple[Hunk, ...]

    @property
    def is_empty(self) -> bool:
        return not self.hunks

    def render(self) -> str:
        out: list[str] = []
        marker = {LineKind.CONTEXT: " ", LineKind.DELETE: "-", LineKind.ADD: "+"}
        for h in self.hunks:
            out.append(f"@@ -{h.old_start},{h.old_len} +{h.new_start},{h.new_len} @@")
            for line in h.body:
                out.append(marker[line.kind] + line.text)
                if line.no_newline:
                    out.append("\\ No newline at end of file")
        return "\n".join(out)


_HUNK_HEADER = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")
# Preamble lines tolerated before the first hunk (file headers are optional:
# the patch agent targets a single in-memory file).
_PREAMBLE = re.compile(r"^(---|\+\+\+|diff\b|index\b|new file|deleted file|similarity)")


def _finish_hunk(
    header: tuple[int, int, int, int], body: list[HunkLine], header_line_no: int
) -> Hunk:
    old_start, old_len, new_start, new_len = header
    n_ctx = sum(1 for l in body if l.kind is LineKind.CONTEXT)
    n_del = sum(1 for l in body if l.kind is LineKind.DELETE)
    n_add = sum(1 for l in body if l.kind is LineKind.ADD)
    if n_ctx + n_del != old_len:
        raise MalformedDiff(
            header_line_no,
            f"old length {old_len} disagrees with body (context {n_ctx} + delete {n_del})",
        )
    if n_ctx + n_add != new_len:
        raise MalformedDiff(
            header_line_no,
            f"new length {new_len} disagrees with body (context {n_ctx} + add {n_add})",
        )
    return Hunk(old_start, old_len, new_start, new_len, tuple(body))


def parse_diff(text: str) -> UnifiedDiff:
    """Parse unified-diff text; an empty/whitespace input is the empty diff."""
    if not text.strip():
        return UnifiedDiff(hunks=())

    hunks: list[Hunk] = []
    header: tuple[int, int, int, int] | None = None
    header_line_no = 0
    body: list[HunkLine] = []

    for line_no, raw in enumerate(text.splitlines(), start=1):
        m = _HUNK_HEADER.match(raw)
        if m:
            if header is not None:
                hunks.append(_finish_hunk(header, body, header_line_no))
            old_start = int(m.group(1))
            old_len = int(m.group(2)) if m.group(2) is not None else 1
            new_start = int(m.group(3))
            new_len = int(m.group(4)) if m.group(4) is not None else 1
            header = (old_start, old_len, new_start, new_len)
            header_line_no = line_no
            body = []
            continue
        if header is None:
            if _PREAMBLE.match(raw) or not raw.strip():
                continue
            raise MalformedDiff(line_no, f"unexpected text before first hunk: {raw!r}")
        if raw.startswith("\\"):
            if not body:
                raise MalformedDiff(line_no, "no-newline marker with no preceding line")
            body[-1] = HunkLine(body[-1].kind, body[-1].text, no_newline=True)
            continue
        if raw == "":
            # Tolerate stripped trailing whitespace on empty context lines.
            body.append(HunkLine(LineKind.CONTEXT, ""))
            continue
        marker, rest = raw[0], raw[1:]
        if marker == " ":
            body.append(HunkLine(LineKind.CONTEXT, rest))
        elif marker == "-":
            body.append(HunkLine(LineKind.DELETE, rest))
        elif marker == "+":
            body.append(HunkLine(LineKind.ADD, rest))
        else:
            raise MalformedDiff(line_no, f"unknown line marker {marker!r}")
    if header is not None:
        hunks.append(_finish_hunk(header, body, header_line_no))

    prev_end = 0
    for i, h in enumerate(hunks):
        # For old_len == 0 the start names the line *after* which to insert.
        begin = h.old_start if h.old_len > 0 else h.old_start + 1
        if begin <= prev_end:
            raise MalformedDiff(
                0, f"hunk {i} overlaps or is out of order (old_start {h.old_start})"
            )
        prev_end = h.old_start + max(h.old_len, 1) - 1
    return UnifiedDiff(hunks=tuple(hunks))


def _chomp(line: str) -> str:
    if line.endswith("\n"):
        line = line[:-1]
    if line.endswith("\r"):
        line = line[:-1]
    return line


def _old_lines(hunk: Hunk) -> list[str]:
    return [l.text for l in hunk.body if l.kind in (LineKind.CONTEXT, LineKind.DELETE)]


def _matches_at(src: list[str], pos: int, expected: list[str]) -> bool:
    if pos < 0 or pos + len(expected) > len(src):
        return False
    return [_chomp(s) for s in src[pos : pos + len(expected)]] == expected


def _locate(src: list[str], hunk: Hunk, hunk_index: int, window: int) -> int:
    """Anchor position for a hunk, searching +-window lines around the header.

    Model-emitted line numbers drift; strict position failure would burn a
    correction step, so nearby exact matches are accepted (window 0 disables).
    """
    anchor = hunk.old_start - 1 if hunk.old_len > 0 else hunk.old_start
    expected = _old_lines(hunk)
    if not expected:
        if 0 <= anchor <= len(src):
            return anchor
        raise PatchContextMismatch(
            hunk_index, "<insertion point in range>", f"line {anchor + 1}"
        )
    for delta in range(window + 1):
        for pos in ({anchor + delta, anchor - delta} if delta else {anchor}):
            if _matches_at(src, pos, expected):
                return pos
    found = _chomp(src[anchor]) if 0 <= anchor < len(src) else "<past end of file>"
    raise PatchContextMismatch(hunk_index, expected[0], found)


def apply_diff(code: str, diff: UnifiedDiff, fallback_window: int = 3) -> str:
    """Apply all hunks to ``code``; the empty diff is the identity.

    Lines are handled with their endings attached, so the "no newline at end
    of file" marker round-trips exactly.
    """
    if diff.is_empty:
        return code

    src = code.splitlines(keepends=True)
    out: list[str] = []
    cursor = 0
    for idx, hunk in enumerate(diff.hunks):
        pos = _locate(src, hunk, idx, fallback_window)
        if pos < cursor:
            raise PatchContextMismatch(idx, "<non-overlapping hunk>", f"line {pos + 1}")
        out.extend(src[cursor:pos])
        cursor = pos
        for line in hunk.body:
            if line.kind is LineKind.CONTEXT:
                out.append(src[cursor])
                cursor += 1
            elif line.kind is LineKind.DELETE:
                cursor += 1
            else:
                out.append(line.text + ("" if line.no_newline else "\n"))
    out.extend(src[cursor:])
    return "".join(out)
