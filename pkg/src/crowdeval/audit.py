"""Protocol auditor: checks participation and isolation rules directly on a raw log.

This deliberately works from the event records (prompt texts, labels, actors) rather
than from the orchestrator's in-memory structures, so it can catch orchestrator bugs.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

from .persistence import RunEvent, read_events


@dataclass
class AuditReport:
    violations: list[str] = field(default_factory=list)
    answer_records: int = 0
    evaluation_records: int = 0
    answer_failures: int = 0
    evaluation_failures: int = 0
    rounds: int = 0
    skipped_rounds: int = 0
    model_calls: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def _prompt_text(ev: RunEvent) -> str:
    return "\n".join(m["content"] for m in ev.payload["messages"])


def audit_events(events: list[RunEvent]) -> AuditReport:
    rep = AuditReport()
    if not events:
        return rep
    header = events[0].payload
    models = header["models"]
    n = len(models)
    order = header["questioner_order"]
    max_attempts = header["retry"]["max_attempts"]

    prompts = defaultdict(list)  # (round, phase, actor) -> [prompt events]
    outcomes = defaultdict(list)  # same key -> attempt_failed / response events
    terminal = defaultdict(list)
    skipped = set()
    for ev in events:
        key = (ev.round_index, ev.phase, ev.actor)
        if ev.event_kind == "prompt_sent":
            prompts[key].append(ev)
        elif ev.event_kind in ("attempt_failed", "response_received"):
            outcomes[key].append(ev)
        elif ev.event_kind in ("artifact_validated", "call_failed"):
            terminal[key].append(ev)
        elif ev.event_kind == "round_skipped":
            skipped.add(ev.round_index)

    # call-level rules: one terminal per call, attempts numbered 1..k, k <= budget, nothing after a fatal error
    for key, evs in prompts.items():
        rep.model_calls += 1
        attempts = [e.payload["attempt"] for e in evs]
        if attempts != list(range(1, len(attempts) + 1)):
            rep.violations.append(f"call {key}: attempts {attempts} are not 1..k (duplicated model call)")
        if len(attempts) > max_attempts:
            rep.violations.append(f"call {key}: {len(attempts)} attempts exceed budget {max_attempts}")
        for o in outcomes[key]:
            if o.event_kind == "attempt_failed" and not o.payload.get("retryable") and o.payload["attempt"] < len(attempts):
                rep.violations.append(f"call {key}: retried after fatal error")
        if len(terminal[key]) != 1:
            rep.violations.append(f"call {key}: {len(terminal[key])} terminal events")

    for r, questioner in enumerate(order):
        if not any(k[0] == r for k in terminal) and r not in skipped:
            continue  # round not reached (partial log)
        rep.rounds += 1
        if r in skipped:
            rep.skipped_rounds += 1
            continue
        qev = [e for e in terminal.get((r, 1, questioner), []) if e.event_kind == "artifact_validated"]
        if not qev:
            rep.violations.append(f"round {r}: no validated question")
            continue
        reference = qev[0].payload["question"]["reference_answer"]
        answer_terms = {k[2]: v[0] for k, v in terminal.items() if k[0] == r and k[1] == 2}
        if questioner in answer_terms or (r, 2, questioner) in prompts:
            rep.violations.append(f"round {r}: questioner {questioner} was asked to answer")
        answers = {a: ev.payload["text"] for a, ev in answer_terms.items() if ev.event_kind == "artifact_validated"}
        failed_answers = {a for a, ev in answer_terms.items() if ev.event_kind == "call_failed"}
        rep.answer_records += len(answers)
        rep.answer_failures += len(failed_answers)
        if len(answers) + len(failed_answers) != n - 1:
            rep.violations.append(f"round {r}: {len(answers)} answers + {len(failed_answers)} failures != n-1")

        for a in answer_terms:
            for p in prompts.get((r, 2, a), []):
                text = _prompt_text(p)
                if reference and reference in text:
                    rep.violations.append(f"round {r}: reference answer leaked into {a}'s answer prompt")
                for other, other_text in answers.items():
                    if other != a and other_text in text:
                        rep.violations.append(f"round {r}: {other}'s answer leaked into {a}'s answer prompt")

        per_answer = defaultdict(int)
        per_answer_failed = defaultdict(int)
        for (rr, phase, e), evs in terminal.items():
            if rr != r or phase != 3:
                continue
            ev = evs[0]
            labels = ev.payload.get("labels") or (prompts[(rr, phase, e)][0].payload.get("labels", {}) if prompts[(rr, phase, e)] else {})
            judged = set(labels.values())
            if e in judged:
                rep.violations.append(f"round {r}: {e} was asked to evaluate its own answer")
            if not judged <= set(answers):
                rep.violations.append(f"round {r}: {e} shown answers from non-answerers {sorted(judged - set(answers))}")
            if e in answers:
                for p in prompts[(rr, phase, e)]:
                    if answers[e] in _prompt_text(p):
                        rep.violations.append(f"round {r}: {e}'s own answer appears in its evaluation prompt")
            if ev.event_kind == "artifact_validated":
                if set(ev.payload["cells"]) != judged:
                    rep.violations.append(f"round {r}: {e}'s scores do not cover exactly the answers shown")
                for a in judged:
                    per_answer[a] += 1
                rep.evaluation_records += len(judged)
            else:
                for a in judged:
                    per_answer_failed[a] += 1
                rep.evaluation_failures += 1
        for a in answers:
            if per_answer[a] + per_answer_failed[a] != n - 1:
                rep.violations.append(
                    f"round {r}: answer by {a} has {per_answer[a]} evaluations + {per_answer_failed[a]} failures != n-1")
    return rep


def audit_log(path: str | Path) -> AuditReport:
    return audit_events(read_events(path))
