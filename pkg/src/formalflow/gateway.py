"""Multi-turn chat gateway: backends, prompt templates, code extraction.

Backends speak the common HTTP chat-completion wire format (JSON body with
``model``, ``messages``, ``temperature``); a scripted mock backend replays
prompt-pattern -> reply pairs from a JSON file for deterministic tests.
Templates are plain text files with ``{placeholder}`` slots; leading lines
starting with ``#|`` are loader-side comments and never reach the model.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Mapping, Protocol
from urllib.parse import urlparse

import requests

log = logging.getLogger(__name__)

# Default sampling temperatures: judging wants near-determinism, generation
# wants diversity across attempts. Both are configurable per session.
JUDGE_TEMPERATURE = 0.2
GENERATION_TEMPERATURE = 0.7


class GatewayError(Exception):
    pass


class UnboundPlaceholder(GatewayError):
    def __init__(self, name: str):
        self.name = name
        super().__init__(f"template placeholder {{{name}}} is unbound")


class BackendError(GatewayError):
    pass


class BudgetExhausted(GatewayError):
    pass


class EmptyExtraction(GatewayError):
    pass


# ---------------------------------------------------------------------------
# Templates

TEMPLATE_NAMES = (
    "few_shot_qa",     # batch QA generation from derivations + gold examples
    "code_gen",        # initial formalisation of a QA block
    "correction",      # compiler-error-guided correction
    "regeneration",    # full rewrite after guard rejection or structural error
    "patch",           # minimal unified diff request for semantic errors
    "align_assess",    # fixed alignment-assessment prompt
    "align_improve",   # fixed improvement prompt
    "zero_shot",       # statement autoformalisation baseline
    "self_refine",     # error-feedback refinement baseline
    "judge",           # binary metric judging
)

_PLACEHOLDER = re.compile(r"\{([a-z][a-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        seen: list[str] = []
        for m in _PLACEHOLDER.finditer(self.body):
            if m.group(1) not in seen:
                seen.append(m.group(1))
        return tuple(seen)


def _strip_loader_comments(text: str) -> str:
    lines = [l for l in text.splitlines() if not l.startswith("#|")]
    return "\n".join(lines).strip("\n") + "\n"


def load_template(name: str, template_dir: str | Path | None = None) -> PromptTemplate:
    """Load a shipped template by name, or from an override directory."""
    if name not in TEMPLATE_NAMES:
        raise KeyError(f"unknown template {name!r}; known: {TEMPLATE_NAMES}")
    if template_dir is not None:
        text = (Path(template_dir) / f"{name}.txt").read_text(encoding="utf-8")
    else:
        text = (resources.files("formalflow") / "templates" / f"{name}.txt").read_text(
            encoding="utf-8"
        )
    return PromptTemplate(name=name, body=_strip_loader_comments(text))


def render(template: PromptTemplate, bindings: Mapping[str, str]) -> str:
    """Substitute placeholders in one pass; inserted values are never re-scanned."""
    missing = [p for p in template.placeholders if p not in bindings]
    if missing:
        raise UnboundPlaceholder(missing[0])
    return _PLACEHOLDER.sub(lambda m: str(bindings[m.group(1)]), template.body)


# ---------------------------------------------------------------------------
# Backends

@dataclass(frozen=True)
class BackendRef:
    endpoint: str
    model_id: str
    auth_env: str = ""
    max_retries: int = 2

    def __post_init__(self):
        parsed = urlparse(self.endpoint)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ValueError(f"malformed endpoint URL: {self.endpoint!r}")


class Backend(Protocol):
    max_retries: int

    def complete(self, messages: list[dict], temperature: float) -> str: ...


class HttpBackend:
    """Chat-completion client. Auth token read from the env var named in the ref."""

    def __init__(self, ref: BackendRef, timeout: float = 120.0):
        self.ref = ref
        self.max_retries = ref.max_retries
        self.timeout = timeout
        self._session = requests.Session()

    def complete(self, messages: list[dict], temperature: float) -> str:
        headers = {"Content-Type": "application/json"}
        if self.ref.auth_env:
            token = os.environ.get(self.ref.auth_env, "")
            if token:
                headers["Authorization"] = f"Bearer {token}"
        resp = self._session.post(
            self.ref.endpoint,
            json={
                "model": self.ref.model_id,
                "messages": messages,
                "temperature": temperature,
            },
            headers=headers,
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise BackendError(f"backend returned HTTP {resp.status_code}: {resp.text[:500]}")
        try:
            payload = resp.json()
            return payload["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"unexpected backend payload: {exc}") from exc


class MockBackend:
    """Deterministic replay backend.

    The replay file is a JSON array of entries ``{"pattern": regex,
    "replies": [text, ...]}`` (or ``"reply": text``). The latest user message
    is matched against the patterns in file order; the first matching entry
    yields its next reply, sticking on the last one once exhausted. No match
    is a hard error so scripted tests fail loudly.
    """

    def __init__(self, entries: list[dict]):
        self.max_retries = 0
        self._entries = []
        for e in entries:
            replies = list(e["replies"]) if "replies" in e else [e["reply"]]
            self._entries.append({"pattern": re.compile(e["pattern"], re.DOTALL), "replies": replies, "cursor": 0})
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def complete(self, messages: list[dict], temperature: float) -> str:
        self.calls += 1
        last_user = next(
            (m["content"] for m in reversed(messages) if m["role"] == "user"), ""
        )
        for entry in self._entries:
            if entry["pattern"].search(last_user):
                replies = entry["replies"]
                reply = replies[min(entry["cursor"], len(replies) - 1)]
                entry["cursor"] += 1
                return reply
        raise BackendError(
            f"no replay entry matches user message: {last_user[:200]!r}"
        )


# ---------------------------------------------------------------------------
# Sessions

@dataclass
class ChatSession:
    """Single-owner message history against one backend.

    History is append-only except for windowing, which drops whole oldest
    non-system user/assistant pairs when the character-based token estimate
    exceeds the budget.
    """

    backend: Backend
    token_budget: int = 128_000
    temperature: float = GENERATION_TEMPERATURE
    system_prompt: str = ""
    messages: list[dict] = field(default_factory=list)
    _sleep: Callable[[float], None] = time.sleep

    def __post_init__(self):
        if self.system_prompt and not self.messages:
            self.messages.append({"role": "system", "content": self.system_prompt})

    def _append(self, role: str, content: str) -> None:
        if role == "assistant" and self.messages and self.messages[-1]["role"] == "assistant":
            raise ValueError("two consecutive assistant turns")
        self.messages.append({"role": role, "content": content})

    @staticmethod
    def _estimate_tokens(messages: list[dict]) -> int:
        # ~4 chars per token plus a small per-message envelope.
        return sum(len(m["content"]) // 4 + 4 for m in messages)

    def _window(self) -> None:
        while self._estimate_tokens(self.messages) > self.token_budget:
            idx = next(
                (i for i, m in enumerate(self.messages[:-1]) if m["role"] != "system"),
                None,
            )
            if idx is None:
                raise BudgetExhausted(
                    f"history estimate exceeds budget {self.token_budget} "
                    "and nothing is droppable"
                )
            end = idx + 1
            if (
                end < len(self.messages) - 1
                and self.messages[idx]["role"] == "user"
                and self.messages[end]["role"] == "assistant"
            ):
                end += 1
            del self.messages[idx:end]

    def chat(self, user_msg: str) -> str:
        """Send one user turn and return the assistant reply, with retries."""
        self._append("user", user_msg)
        self._window()
        retries = getattr(self.backend, "max_retries", 0)
        attempt = 0
        while True:
            try:
                reply = self.backend.complete(list(self.messages), self.temperature)
                break
            except BackendError:
                if attempt >= retries:
                    raise
                self._sleep(min(0.5 * 2**attempt, 8.0))
                attempt += 1
        self._append("assistant", reply)
        return reply


def chat(session: ChatSession, user_msg: str) -> str:
    return session.chat(user_msg)


# ---------------------------------------------------------------------------
# Code extraction

_PERCENT_LINE = re.compile(r"^%{10}\s*$", re.MULTILINE)
_FENCE = re.compile(r"```[A-Za-z0-9_+-]*[ \t]*\n(.*?)```", re.DOTALL)


def extract_code(llm_output: str) -> str:
    """Pull the code region out of a model reply.

    Priority: the ten-percent-sign wrapper block, then the first fenced
    block, else the whole output trimmed. Idempotent.
    """
    if not llm_output.strip():
        raise EmptyExtraction("model output is empty or whitespace")

    markers = list(_PERCENT_LINE.finditer(llm_output))
    if len(markers) >= 2:
        inner = llm_output[markers[0].end() : markers[1].start()]
        inner = inner.strip()
        if not inner:
            raise EmptyExtraction("wrapper block is empty")
        return inner

    m = _FENCE.search(llm_output)
    if m:
        inner = m.group(1).strip()
        if not inner:
            raise EmptyExtraction("fenced block is empty")
        return inner

    return llm_output.strip()
