"""Chat-completion backends: a live HTTP endpoint and a deterministic replay table.

Both implement the same ``complete(history, spec) -> list[str]`` contract, so
the pipeline never knows which one it is talking to. Replay keys requests by a
stable fingerprint of the full message history plus the sampling parameters,
which makes end-to-end pipeline runs reproducible without a model.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import requests

DEFAULT_NUCLEUS_TEMPERATURE = 0.8
DEFAULT_NUCLEUS_TOP_P = 0.95


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatTurn:
    role: Role
    content: str

    def __post_init__(self) -> None:
        if self.role in (Role.USER, Role.ASSISTANT) and not self.content:
            raise ValueError(f"{self.role.value} turn must have non-empty content")


def user(content: str) -> ChatTurn:
    return ChatTurn(Role.USER, content)


def assistant(content: str) -> ChatTurn:
    return ChatTurn(Role.ASSISTANT, content)


class SamplingMode(str, Enum):
    NUCLEUS = "nucleus"
    GREEDY = "greedy"


@dataclass(frozen=True)
class SamplingSpec:
    mode: SamplingMode
    temperature: float
    top_p: float
    n_samples: int

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValueError("top_p must lie in (0, 1]")
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.mode == SamplingMode.GREEDY and (self.temperature != 0 or self.n_samples != 1):
            raise ValueError("greedy sampling implies temperature 0 and a single sample")

    @staticmethod
    def greedy() -> "SamplingSpec":
        return SamplingSpec(SamplingMode.GREEDY, temperature=0.0, top_p=1.0, n_samples=1)

    @staticmethod
    def nucleus(
        n_samples: int,
        temperature: float = DEFAULT_NUCLEUS_TEMPERATURE,
        top_p: float = DEFAULT_NUCLEUS_TOP_P,
    ) -> "SamplingSpec":
        return SamplingSpec(SamplingMode.NUCLEUS, temperature=temperature, top_p=top_p, n_samples=n_samples)


def request_fingerprint(history: Sequence[ChatTurn], spec: SamplingSpec) -> str:
    """Stable hash of the full conversation plus sampling parameters."""
    payload = {
        "messages": [[turn.role.value, turn.content] for turn in history],
        "mode": spec.mode.value,
        "temperature": spec.temperature,
        "top_p": spec.top_p,
        "n": spec.n_samples,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class TransportError(RuntimeError):
    """Live backend gave up after its retry budget."""


class ReplayMissError(KeyError):
    """A request has no (unconsumed) transcript entry; tests must fail loudly."""


def _check_history(history: Sequence[ChatTurn]) -> None:
    if not history or history[-1].role != Role.USER:
        raise ValueError("conversation must end with a user turn")


class ChatBackend(Protocol):
    calls: int

    def complete(self, history: Sequence[ChatTurn], spec: SamplingSpec) -> list[str]:
        ...


@dataclass
class TranscriptEntry:
    fingerprint: str
    responses: list[str]
    repeatable: bool = False


def load_transcript(path: str | Path) -> list[TranscriptEntry]:
    entries: list[TranscriptEntry] = []
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            raw = json.loads(line)
            try:
                entries.append(
                    TranscriptEntry(
                        fingerprint=raw["fingerprint"],
                        responses=list(raw["responses"]),
                        repeatable=bool(raw.get("repeatable", False)),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{line_no}: bad transcript entry: {exc}") from exc
    return entries


def dump_transcript(entries: Iterable[TranscriptEntry], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for entry in entries:
            handle.write(
                json.dumps(
                    {
                        "fingerprint": entry.fingerprint,
                        "responses": entry.responses,
                        "repeatable": entry.repeatable,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


class ReplayBackend:
    """Deterministic backend answering from a recorded transcript.

    Each entry is consumed at most once per run unless marked repeatable; a
    missing or exhausted fingerprint is a hard error, never improvised.
    """

    def __init__(self, entries: Iterable[TranscriptEntry]):
        self._table: dict[str, TranscriptEntry] = {}
        for entry in entries:
            if entry.fingerprint in self._table:
                raise ValueError(f"duplicate transcript fingerprint {entry.fingerprint}")
            self._table[entry.fingerprint] = entry
        self._consumed: set[str] = set()
        self._lock = threading.Lock()
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "ReplayBackend":
        return cls(load_transcript(path))

    def complete(self, history: Sequence[ChatTurn], spec: SamplingSpec) -> list[str]:
        _check_history(history)
        fingerprint = request_fingerprint(history, spec)
        with self._lock:
            self.calls += 1
            entry = self._table.get(fingerprint)
            if entry is None:
                tail = history[-1].content[:200]
                raise ReplayMissError(
                    f"no transcript entry for fingerprint {fingerprint} (last user turn: {tail!r})"
                )
            if fingerprint in self._consumed and not entry.repeatable:
                raise ReplayMissError(f"transcript entry {fingerprint} already consumed")
            self._consumed.add(fingerprint)
        if len(entry.responses) != spec.n_samples:
            raise ReplayMissError(
                f"transcript entry {fingerprint} has {len(entry.responses)} responses, "
                f"request wants {spec.n_samples}"
            )
        return list(entry.responses)


class LiveBackend:
    """Chat-completion HTTP backend with bounded exponential retry.

    ``post`` is injectable for tests; by default it is a requests session
    POST to ``{base_url}/chat/completions``.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str = "",
        *,
        max_in_flight: int = 8,
        max_attempts: int = 5,
        backoff_base_s: float = 0.5,
        timeout_s: float = 120.0,
        post: Callable[..., "requests.Response"] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        self._url = base_url.rstrip("/") + "/chat/completions"
        self._model = model
        self._api_key = api_key
        self._gate = threading.BoundedSemaphore(max_in_flight)
        self._max_attempts = max_attempts
        self._backoff = backoff_base_s
        self._timeout = timeout_s
        self._post = post if post is not None else requests.Session().post
        self._sleep = sleep
        self._rng = rng or random.Random()
        self.calls = 0

    def complete(self, history: Sequence[ChatTurn], spec: SamplingSpec) -> list[str]:
        _check_history(history)
        body = {
            "model": self._model,
            "messages": [{"role": t.role.value, "content": t.content} for t in history],
            "temperature": spec.temperature,
            "top_p": spec.top_p,
            "n": spec.n_samples,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        last_error: Exception | None = None
        with self._gate:
            self.calls += 1
            for attempt in range(self._max_attempts):
                if attempt:
                    delay = self._backoff * (2 ** (attempt - 1))
                    self._sleep(delay * (1 + 0.1 * self._rng.random()))
                try:
                    response = self._post(
                        self._url, json=body, headers=headers, timeout=self._timeout
                    )
                except requests.RequestException as exc:
                    last_error = exc
                    continue
                if response.status_code in (429,) or response.status_code >= 500:
                    last_error = TransportError(f"HTTP {response.status_code}")
                    continue
                if response.status_code != 200:
                    raise TransportError(f"HTTP {response.status_code}: {response.text[:500]}")
                texts = self._extract(response.json())
                if len(texts) < spec.n_samples:
                    raise TransportError(
                        f"backend returned {len(texts)} choices, wanted {spec.n_samples}"
                    )
                return texts[: spec.n_samples]
        raise TransportError(f"request failed after {self._max_attempts} attempts: {last_error}")

    @staticmethod
    def _extract(payload: dict) -> list[str]:
        try:
            return [choice["message"]["content"] for choice in payload["choices"]]
        except (KeyError, TypeError) as exc:
            raise TransportError(f"unexpected response shape: {exc}") from exc


_FENCE_RE = re.compile(r"```[ \t]*[\w+-]*[ \t]*\n?(.*?)```", re.DOTALL)


def extract_code(assistant_text: str) -> str:
    """Contents of the first fenced code block, or the whole text trimmed.

    Models sometimes omit the fence; dropping such samples entirely would
    bias correctness rates, so bare text passes through.
    """
    if not assistant_text or not assistant_text.strip():
        raise ValueError("cannot extract code from empty text")
    match = _FENCE_RE.search(assistant_text)
    if match:
        block = match.group(1).strip()
        if block:
            return block
    return assistant_text.strip()
