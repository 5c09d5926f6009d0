"""Append-only JSONL event log, replay with integrity checks, and resume points.

One file per run.  Each line is one JSON object with the fields of :class:`RunEvent`;
see ``docs/log-format.md`` for the stable schema.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

from .errors import ConfigMismatch, CorruptLog, IntegrityError, RoundPersistFailed
from .records import AnswerArtifact, Judgment, QuestionArtifact, Round, RunState
from .scoring import cells_from_payload, final_leaderboard, round_scores, rubric_total

SCHEMA_VERSION = 1

EVENT_KINDS = frozenset({
    "run_started",
    "prompt_sent",
    "response_received",
    "attempt_failed",
    "validation_failed",
    "artifact_validated",
    "call_failed",
    "round_skipped",
    "round_scored",
    "leaderboard_updated",
    "run_completed",
})

_FIELDS = ("seq", "timestamp", "run_index", "round_index", "phase", "event_kind", "actor", "payload", "schema_version")


@dataclass(frozen=True)
class RunEvent:
    seq: int
    timestamp: str
    run_index: int
    round_index: int | None
    phase: int | None
    event_kind: str
    actor: str
    payload: dict
    schema_version: int = SCHEMA_VERSION

    def to_line(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, ensure_ascii=False, separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str, lineno: int = 0) -> "RunEvent":
        try:
            d = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptLog(f"line {lineno}: not valid JSON ({exc.msg})") from None
        if not isinstance(d, dict):
            raise CorruptLog(f"line {lineno}: record is not an object")
        missing = [f for f in _FIELDS if f not in d]
        if missing:
            raise CorruptLog(f"line {lineno}: missing field(s) {missing}")
        if d["schema_version"] != SCHEMA_VERSION:
            raise CorruptLog(f"line {lineno}: unsupported schema_version {d['schema_version']!r}")
        if d["event_kind"] not in EVENT_KINDS:
            raise CorruptLog(f"line {lineno}: unknown event_kind {d['event_kind']!r}")
        return cls(**{f: d[f] for f in _FIELDS})


def wall_clock(seq: int) -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def logical_clock(seq: int) -> str:
    """Timestamp derived from seq alone, so mock runs produce byte-identical logs."""
    return datetime.fromtimestamp(seq, timezone.utc).isoformat()


class EventLog:
    """Single-writer append-only log.  ``append`` returns only after the line is flushed."""

    def __init__(self, path: str | Path, run_index: int = 0, *,
                 clock: Callable[[int], str] = wall_clock, fsync: bool = False):
        self.path = Path(path)
        self.run_index = run_index
        self.clock = clock
        self.fsync = fsync
        self._lock = threading.Lock()
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._seq = len(read_events(self.path)) if self.path.exists() else 0
        self._fh = open(self.path, "a", encoding="utf-8")

    @property
    def last_seq(self) -> int:
        return self._seq

    def append(self, event_kind: str, *, actor: str = "orchestrator", round_index: int | None = None,
               phase: int | None = None, payload: dict | None = None) -> int:
        if event_kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {event_kind!r}")
        with self._lock:
            seq = self._seq + 1
            event = RunEvent(seq, self.clock(seq), self.run_index, round_index, phase, event_kind, actor, payload or {})
            try:
                self._fh.write(event.to_line() + "\n")
                self._fh.flush()
                if self.fsync:
                    os.fsync(self._fh.fileno())
            except OSError as exc:
                raise RoundPersistFailed(f"could not append to {self.path}: {exc}") from exc
            self._seq = seq
            return seq

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def append_event(log: EventLog, event_kind: str, **fields) -> int:
    return log.append(event_kind, **fields)


def read_events(path: str | Path, *, allow_torn_tail: bool = False) -> list[RunEvent]:
    """Parse and sequence-check a log.  A torn final line (crash mid-write) may be tolerated."""
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    torn = lines[-1] != ""
    if not torn:
        lines = lines[:-1]
    events = []
    for i, line in enumerate(lines, start=1):
        try:
            ev = RunEvent.from_line(line, i)
        except CorruptLog:
            if allow_torn_tail and i == len(lines) and torn:
                break
            raise
        if ev.seq != len(events) + 1:
            raise CorruptLog(f"line {i}: expected seq {len(events) + 1}, found {ev.seq}")
        events.append(ev)
    else:
        if torn and not allow_torn_tail:
            raise CorruptLog(f"line {len(lines)}: record not newline-terminated")
    return events


def truncate_torn_tail(path: str | Path) -> int:
    """Drop a partially written final line; returns the number of bytes removed."""
    path = Path(path)
    data = path.read_bytes()
    if not data or data.endswith(b"\n"):
        return 0
    keep = data.rfind(b"\n") + 1
    with open(path, "r+b") as fh:
        fh.truncate(keep)
    return len(data) - keep


# -- replay -------------------------------------------------------------------

CallKey = tuple  # (round_index, phase, actor)


@dataclass
class ReplayResult:
    state: RunState
    events: list[RunEvent]
    header: dict | None = None
    calls: dict[CallKey, RunEvent] = field(default_factory=dict)
    round_events: dict[tuple[int, str], RunEvent] = field(default_factory=dict)
    partial_round: Round | None = None
    rounds: dict[int, Round] = field(default_factory=dict)


def judgment_from_event(ev: RunEvent, scheme: str, weights: dict | None) -> Judgment:
    from .domains.parse import payload_from_dict

    p = ev.payload
    payload = payload_from_dict(scheme, p["payload"])
    if scheme == "rubric100":
        for label, s in payload.per_answer.items():
            if rubric_total(s.to_dict(), weights) != s.total:
                raise IntegrityError(f"seq {ev.seq}: rubric total for {label} does not match its subscores")
    cells = cells_from_payload(payload, p["labels"])
    return Judgment(ev.actor, dict(p["labels"]), payload, cells)


def _check_equal(seq: int, what: str, logged, recomputed) -> None:
    if logged != recomputed:
        raise IntegrityError(f"seq {seq}: logged {what} {logged!r} != recomputed {recomputed!r}")


def replay_events(events: Iterable[RunEvent]) -> ReplayResult:
    events = list(events)
    if not events:
        return ReplayResult(RunState(config_digest=""), [])
    head = events[0]
    if head.event_kind != "run_started":
        raise CorruptLog("first event must be run_started")
    header = head.payload
    scheme = header["scoring_scheme"]
    weights = header.get("rubric_weights")
    models = list(header["models"])
    state = RunState(config_digest=header["config_digest"], run_index=head.run_index, models=models)
    result = ReplayResult(state, events, header)
    rounds = result.rounds
    open_attempts: set[tuple] = set()

    def rnd(ev: RunEvent) -> Round:
        if ev.round_index not in rounds:
            questioner = header["questioner_order"][ev.round_index]
            rounds[ev.round_index] = Round(ev.round_index, questioner, run_index=head.run_index)
        return rounds[ev.round_index]

    for ev in events[1:]:
        kind, p = ev.event_kind, ev.payload
        if ev.run_index != head.run_index:
            raise CorruptLog(f"seq {ev.seq}: run_index {ev.run_index} in a log for run {head.run_index}")
        key = (ev.round_index, ev.phase, ev.actor)
        if kind == "run_started":
            raise CorruptLog(f"seq {ev.seq}: duplicate run_started")
        if kind == "prompt_sent":
            open_attempts.add(key + (p["attempt"],))
        elif kind in ("response_received", "attempt_failed"):
            if key + (p["attempt"],) not in open_attempts:
                raise CorruptLog(f"seq {ev.seq}: {kind} without a matching prompt_sent")
            open_attempts.discard(key + (p["attempt"],))
        elif kind in ("artifact_validated", "call_failed"):
            if key in result.calls:
                raise CorruptLog(f"seq {ev.seq}: second terminal event for call {key}")
            result.calls[key] = ev
            r = rnd(ev)
            if kind == "artifact_validated":
                if ev.phase == 1:
                    r.question = QuestionArtifact.from_dict(p["question"])
                elif ev.phase == 2:
                    r.answers[ev.actor] = AnswerArtifact(ev.actor, p["text"], p.get("latency", 0.0))
                elif ev.phase == 3:
                    j = judgment_from_event(ev, scheme, weights)
                    _check_equal(ev.seq, f"cells of {ev.actor}", p["cells"], j.cells)
                    r.judgments[ev.actor] = j
            else:
                if ev.phase == 2:
                    r.answer_failures[ev.actor] = p
                elif ev.phase == 3:
                    r.evaluation_failures[ev.actor] = p
        elif kind == "round_skipped":
            result.round_events[(ev.round_index, kind)] = ev
            r = rnd(ev)
            r.skipped = True
        elif kind == "round_scored":
            result.round_events[(ev.round_index, kind)] = ev
            r = rnd(ev)
            _check_equal(ev.seq, "matrix", p["matrix"], r.matrix)
            recomputed = round_scores(r)
            _check_equal(ev.seq, "round scores", p["scores"], recomputed)
            r.round_scores = recomputed
        elif kind == "leaderboard_updated":
            result.round_events[(ev.round_index, kind)] = ev
            r = rnd(ev)
            if not r.skipped and (ev.round_index, "round_scored") not in result.round_events:
                raise CorruptLog(f"seq {ev.seq}: leaderboard_updated before round_scored")
            state.completed_rounds.append(r)
            board = final_leaderboard(state.completed_rounds, models)
            _check_equal(ev.seq, "leaderboard", p["leaderboard"], board.to_dict())
            state.interim_leaderboard = board
        elif kind == "run_completed":
            board = final_leaderboard(state.completed_rounds, models)
            _check_equal(ev.seq, "final leaderboard", p["leaderboard"], board.to_dict())
            state.interim_leaderboard = board
            state.finished = True
    done = {r.round_index for r in state.completed_rounds}
    pending = [i for i in rounds if i not in done]
    result.partial_round = rounds[max(pending)] if pending else None
    if state.interim_leaderboard is None:
        state.interim_leaderboard = final_leaderboard([], models)
    return result


def replay(log_path: str | Path) -> ReplayResult:
    """Rebuild run state purely from a log, verifying every logged aggregate."""
    return replay_events(read_events(log_path))


@dataclass
class Continuation:
    """Where a resumed run picks up."""

    replay: ReplayResult
    next_round: int | None  # position in questioner order; None once the run is finished
    next_phase: int | None
    finished: bool


def _next_phase(r: Round, models: list[str], round_events: dict) -> int:
    """First phase of a partially logged round whose calls are not all terminal."""
    if r.skipped or (r.round_index, "round_scored") in round_events:
        return 4
    if r.question is None:
        return 1
    if len(r.answers) + len(r.answer_failures) < len(models) - 1:
        return 2
    evaluators = [e for e in models if any(a != e for a in r.answers)]
    if len(r.judgments) + len(r.evaluation_failures) < len(evaluators):
        return 3
    return 4


def resume(log_path: str | Path, config_digest: str) -> Continuation:
    """Locate the last persisted boundary in ``log_path``; refuse if the config changed."""
    truncate_torn_tail(log_path)
    result = replay(log_path)
    if result.header is None:
        return Continuation(result, 0, 1, False)
    if result.header["config_digest"] != config_digest:
        raise ConfigMismatch(
            f"{log_path} was written with config digest {result.header['config_digest'][:12]}, "
            f"current config is {config_digest[:12]}"
        )
    if result.state.finished:
        return Continuation(result, None, None, True)
    next_round = len(result.state.completed_rounds)
    r = result.rounds.get(next_round)
    phase = 1 if r is None else _next_phase(r, result.header["models"], result.round_events)
    if next_round >= len(result.header["questioner_order"]):
        phase = 4  # all rounds persisted; only run_completed is missing
    return Continuation(result, next_round, phase, False)
