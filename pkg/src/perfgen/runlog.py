"""Append-only JSONL event log: the single durable record of a run.

The first line is a header carrying the full config and a host fingerprint;
every later line is an event. Resume treats a (problem, strategy) pair as
complete exactly when a terminal result event exists for it, so a crash mid
problem re-executes that problem from its start.
"""

from __future__ import annotations

import json
import os
import platform
import socket
import sys
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import IO

from perfgen.metrics import RunOutcome

HEADER_TYPE = "header"
RESULT_TYPE = "result"
STAGE_TYPE = "stage"
SANITIZATION_TYPE = "sanitization"


class RunLogError(RuntimeError):
    pass


def _drop_partial_tail(path: Path) -> None:
    """Remove a half-written final line left behind by a crash mid-write."""
    if not path.exists():
        return
    data = path.read_bytes()
    if not data or data.endswith(b"\n"):
        return
    last_newline = data.rfind(b"\n")
    os.truncate(path, last_newline + 1 if last_newline >= 0 else 0)


def host_fingerprint() -> dict:
    return {
        "hostname": socket.gethostname(),
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "cpu_count": os.cpu_count(),
        "python": sys.version.split()[0],
    }


class RunLogWriter:
    def __init__(self, path: str | Path, append: bool = False):
        self.path = Path(path)
        if append:
            _drop_partial_tail(self.path)
        self._handle: IO[str] = open(self.path, "a" if append else "w", encoding="utf-8")

    def write(self, event: dict) -> None:
        self._handle.write(json.dumps(event, ensure_ascii=False) + "\n")
        self._handle.flush()
        os.fsync(self._handle.fileno())

    def close(self) -> None:
        self._handle.close()

    def __enter__(self) -> "RunLogWriter":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


@dataclass
class RunLogState:
    header: dict
    events: list[dict]
    truncated_tail: bool = False

    def completed(self) -> set[tuple[str, str]]:
        return {
            (e["problem"], e["strategy"]) for e in self.events if e.get("type") == RESULT_TYPE
        }

    def result_events(self) -> list[dict]:
        return [e for e in self.events if e.get("type") == RESULT_TYPE]

    def outcomes(self, strategy: str) -> list[RunOutcome]:
        rows = []
        for event in self.result_events():
            if event["strategy"] != strategy:
                continue
            rows.append(
                RunOutcome(
                    problem_id=event["problem"],
                    strategy=event["strategy"],
                    solved=event["solved"],
                    candidate_total=_fraction_or_none(event.get("final_total_ns")),
                    reference_total=_fraction_or_none(event.get("reference_total_ns")),
                    failure=event.get("failure"),
                )
            )
        return rows


def _fraction_or_none(raw) -> Fraction | None:
    return None if raw is None else Fraction(raw)


def read_log(path: str | Path) -> RunLogState:
    """Parse a run log; a malformed final line is crash truncation, anything
    else malformed refuses with a diagnosis."""
    path = Path(path)
    if not path.exists():
        raise RunLogError(f"run log {path} does not exist")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise RunLogError(f"run log {path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise RunLogError(f"run log header is unreadable: {exc}") from exc
    if not isinstance(header, dict) or header.get("type") != HEADER_TYPE:
        raise RunLogError("first run log line is not a header event")
    events: list[dict] = []
    truncated = False
    last_index = len(lines) - 1
    for index, line in enumerate(lines[1:], start=1):
        if not line.strip():
            continue
        try:
            event = json.loads(line)
            if not isinstance(event, dict):
                raise json.JSONDecodeError("not an object", line, 0)
        except json.JSONDecodeError as exc:
            if index == last_index:
                truncated = True  # interrupted mid-write; the event never completed
                break
            raise RunLogError(f"run log line {index + 1} is corrupt: {exc}") from exc
        events.append(event)
    return RunLogState(header=header, events=events, truncated_tail=truncated)


def result_event(result, k: int) -> dict:
    """Terminal per-problem event; carries everything metrics needs."""
    return {
        "type": RESULT_TYPE,
        "problem": result.problem_id,
        "strategy": result.strategy,
        "k": k,
        "solved": result.solved,
        "optimized": result.optimized,
        "final_candidate": None if result.final_candidate is None else result.final_candidate.id,
        "final_total_ns": None if result.final_total is None else str(result.final_total),
        "reference_total_ns": None
        if result.reference_total is None
        else str(result.reference_total),
        "failure": result.failure,
    }
