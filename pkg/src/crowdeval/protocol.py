"""Round state machine and multi-run driver.

Each run rotates the questioner role through every model once.  A round is:

1. the questioner writes a question plus reference answer;
2. every other model answers it in isolation;
3. every model grades the answers it did not write, under shuffled anonymous labels;
4. per-answer means become round scores and the interim leaderboard is refreshed.

All model traffic is written to the run's event log.  Calls inside phases 2 and 3 fan
out over a thread pool, but their events are committed in a fixed order so that mock
runs are reproducible byte for byte.  On resume, any call whose terminal event is
already in the log is served from the log instead of the backend.
"""

from __future__ import annotations

import logging
import random
import string
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .backends import Backend, CallParams, RetryPolicy, complete_with_retries, make_backend
from .config import RunConfig
from .domains import (
    DomainSpec,
    parse_evaluation,
    render_answer_prompt,
    render_evaluation_prompt,
    render_question_prompt,
    render_retry_prompt,
    validate_question,
)
from .errors import (
    AnswerFailed,
    BackendError,
    BackendUnreachable,
    CallFailed,
    EvaluationFailed,
    ExhaustedRetries,
    QuestionGenerationFailed,
    RunAborted,
)
from .persistence import (
    EventLog,
    ReplayResult,
    judgment_from_event,
    logical_clock,
    resume as find_resume_point,
    wall_clock,
)
from .records import AnswerArtifact, Judgment, QuestionArtifact, Round, RunState, ValidationErrors
from .scoring import Leaderboard, cells_from_payload, final_leaderboard, merge_leaderboards, round_scores

log = logging.getLogger(__name__)

Observer = Callable[[str, dict], None]


def answer_labels(count: int) -> list[str]:
    """A, B, ..., Z, AA, AB, ..."""
    out = []
    letters = string.ascii_uppercase
    for i in range(count):
        label = ""
        i += 1
        while i:
            i, rem = divmod(i - 1, 26)
            label = letters[rem] + label
        out.append(label)
    return out


@dataclass
class RunResult:
    states: list[RunState]
    leaderboards: list[Leaderboard]
    merged: Leaderboard
    log_paths: list[Path]


@dataclass
class _PendingCall:
    """Events and outcome of one model call, held until it is its turn to be committed."""

    key: tuple
    events: list[tuple[str, dict]] = field(default_factory=list)
    terminal: tuple[str, dict] | None = None
    result: object = None
    error: CallFailed | None = None


@dataclass
class _RunContext:
    run_index: int
    log: EventLog
    seed: str
    questioner_order: list[str]
    calls: dict = field(default_factory=dict)
    round_events: dict = field(default_factory=dict)
    replayed_rounds: dict = field(default_factory=dict)


class Orchestrator:
    def __init__(
        self,
        config: RunConfig,
        *,
        backends: dict[str, Backend] | None = None,
        domain: DomainSpec | None = None,
        observer: Observer | None = None,
        sleep: Callable[[float], None] | None = None,
        deterministic: bool | None = None,
        probe: bool = True,
    ):
        self.config = config
        self.domain = domain or config.load_domain()
        self.observer = observer
        self.deterministic = config.all_mock if deterministic is None else deterministic
        # simulated time for mock runs: backoff delays are computed and logged, not slept
        self.sleep = sleep or ((lambda s: None) if self.deterministic else time.sleep)
        self.backends = backends if backends is not None else {
            bid: make_backend(b) for bid, b in config.backends.items()
        }
        self.probe = probe
        self.digest = config.digest()
        self._model_ids = config.model_ids

    # -- plumbing -----------------------------------------------------------

    def _notify(self, name: str, **info) -> None:
        if self.observer is not None:
            self.observer(name, info)

    def _backend_for(self, model_id: str) -> Backend:
        spec = next(m for m in self.config.models if m.model_id == model_id)
        return self.backends[spec.backend_ref]

    def probe_backends(self) -> None:
        for bid, backend in sorted(self.backends.items()):
            if backend.config.kind != "live":
                continue
            try:
                backend.probe()
            except BackendError as exc:
                raise BackendUnreachable(f"backend {bid} failed startup probe: {exc}") from exc

    def _questioner_order(self, run_index: int) -> list[str]:
        order = list(self._model_ids)
        if self.config.shuffle_questioners:
            random.Random(f"{self.config.seed}|questioners|{run_index}").shuffle(order)
        return order

    def _sampling(self, phase_name: str, ctx: _RunContext, round_index: int, phase: int,
                  role: str, model_id: str) -> CallParams:
        s = self.config.sampling.get(phase_name, {})
        return CallParams(temperature=s.get("temperature"), max_tokens=s.get("max_tokens"), phase=phase,
                          role=role, model_id=model_id, run_index=ctx.run_index, round_index=round_index)

    def _call(self, ctx: _RunContext, round_index: int, phase: int, actor: str, role: str,
              phase_name: str, prompt: str, validate, *, extra: dict | None = None,
              error_cls=CallFailed) -> _PendingCall:
        """Run one model call to completion without touching the log."""
        pending = _PendingCall((round_index, phase, actor))
        sink = lambda kind, payload: pending.events.append((kind, {**payload, **(extra or {})}))  # noqa: E731
        rng = random.Random(f"{ctx.seed}|backoff|{round_index}|{phase}|{actor}")
        params = self._sampling(phase_name, ctx, round_index, phase, role, actor)
        try:
            outcome = complete_with_retries(
                self._backend_for(actor), prompt, params, self.config.retry,
                system=self.domain.system_prompt, on_event=sink, validate=validate,
                reprompt=lambda errs: render_retry_prompt(self.domain, prompt, list(errs)),
                rng=rng, sleep=self.sleep,
            )
        except ExhaustedRetries as exc:
            last = exc.last_error
            detail = {"validation_errors": list(last.errors)} if isinstance(last, ValidationErrors) else (
                last.describe() if last is not None else None)
            pending.error = error_cls("exhausted retries", exc.attempts, detail)
            pending.terminal = ("call_failed", {"reason": "exhausted", "attempts": exc.attempts, "last_error": detail})
            return pending
        except BackendError as exc:
            attempts = sum(1 for k, _ in pending.events if k == "prompt_sent")
            pending.error = error_cls("fatal backend error", attempts, exc.describe())
            pending.terminal = ("call_failed", {"reason": "fatal", "attempts": attempts, "last_error": exc.describe()})
            return pending
        pending.result = (outcome.result, outcome.completion, outcome.attempts)
        return pending

    def _commit(self, ctx: _RunContext, pending: _PendingCall, phase: int, terminal_payload=None) -> None:
        round_index, _, actor = pending.key
        for kind, payload in pending.events:
            ctx.log.append(kind, actor=actor, round_index=round_index, phase=phase, payload=payload)
        kind, payload = pending.terminal if pending.error else ("artifact_validated", terminal_payload)
        ctx.log.append(kind, actor=actor, round_index=round_index, phase=phase, payload=payload)
        self._notify("call", run_index=ctx.run_index, round_index=round_index, phase=phase, actor=actor)

    def _emit_once(self, ctx: _RunContext, round_index: int, kind: str, phase: int | None, payload: dict) -> None:
        if (round_index, kind) in ctx.round_events:
            return
        ctx.log.append(kind, round_index=round_index, phase=phase, payload=payload)

    # -- phases -------------------------------------------------------------

    def phase_generate_question(self, ctx: _RunContext, rnd: Round) -> QuestionArtifact:
        key = (rnd.round_index, 1, rnd.questioner)
        if key in ctx.calls:
            ev = ctx.calls[key]
            if ev.event_kind == "call_failed":
                raise QuestionGenerationFailed(ev.payload["reason"], ev.payload["attempts"], ev.payload["last_error"])
            return QuestionArtifact.from_dict(ev.payload["question"])
        prompt = render_question_prompt(self.domain, {"round_index": rnd.round_index, "run_index": ctx.run_index})
        pending = self._call(ctx, rnd.round_index, 1, rnd.questioner, "questioner", "question", prompt,
                             lambda raw: validate_question(self.domain, raw), error_cls=QuestionGenerationFailed)
        if pending.error:
            self._commit(ctx, pending, 1)
            raise pending.error
        artifact, _, attempts = pending.result
        self._commit(ctx, pending, 1, {"question": artifact.to_dict(), "attempts": attempts})
        return artifact

    def _fan_out(self, ctx: _RunContext, jobs: list[tuple[tuple, Callable[[], _PendingCall]]], pool) -> list:
        """Run uncached jobs (possibly concurrently); return their pending calls in job order."""
        futures: list[Future | _PendingCall] = []
        for _, job in jobs:
            futures.append(pool.submit(job) if pool is not None else job())
        return [f.result() if isinstance(f, Future) else f for f in futures]

    def phase_collect_answers(self, ctx: _RunContext, rnd: Round, answerers: list[str], pool=None
                              ) -> dict[str, AnswerArtifact]:
        prompt = render_answer_prompt(self.domain, rnd.question)
        answers: dict[str, AnswerArtifact] = {}
        jobs = []
        for a in answerers:
            key = (rnd.round_index, 2, a)
            if key in ctx.calls:
                continue
            jobs.append((a, lambda a=a: self._call(
                ctx, rnd.round_index, 2, a, "answerer", "answer", prompt, None, error_cls=AnswerFailed)))
        pendings = dict(zip([a for a, _ in jobs], self._fan_out(ctx, jobs, pool)))
        for a in answerers:
            key = (rnd.round_index, 2, a)
            if key in ctx.calls:
                ev = ctx.calls[key]
                if ev.event_kind == "call_failed":
                    rnd.answer_failures[a] = ev.payload
                else:
                    answers[a] = AnswerArtifact(a, ev.payload["text"], ev.payload.get("latency", 0.0))
                continue
            pending = pendings[a]
            if pending.error:
                self._commit(ctx, pending, 2)
                rnd.answer_failures[a] = pending.terminal[1]
                log.warning("run %d round %d: %s failed to answer: %s", ctx.run_index, rnd.round_index, a, pending.error)
                continue
            text, completion, attempts = pending.result
            self._commit(ctx, pending, 2, {"text": text, "latency": completion.latency, "attempts": attempts})
            answers[a] = AnswerArtifact(a, text, completion.latency)
        rnd.answers = answers
        return answers

    def _labels_for(self, ctx: _RunContext, rnd: Round, evaluator: str) -> dict[str, str]:
        visible = [a for a in self._model_ids if a in rnd.answers and a != evaluator]
        random.Random(f"{ctx.seed}|labels|{rnd.round_index}|{evaluator}").shuffle(visible)
        return dict(zip(answer_labels(len(visible)), visible))

    def phase_collect_evaluations(self, ctx: _RunContext, rnd: Round, interim: Leaderboard | None = None,
                                  pool=None) -> dict[str, Judgment]:
        interim_text = interim.as_table() if (interim is not None and self.config.inject_interim_leaderboard) else None
        plans = {}
        for e in self._model_ids:
            labels = self._labels_for(ctx, rnd, e)
            if not labels:
                continue
            prompt = render_evaluation_prompt(
                self.domain, rnd.question, rnd.question.reference_answer,
                [(label, rnd.answers[a].text) for label, a in labels.items()], interim_text)
            plans[e] = (labels, prompt)
        jobs = []
        for e, (labels, prompt) in plans.items():
            if (rnd.round_index, 3, e) in ctx.calls:
                continue
            expected = list(labels)
            jobs.append((e, lambda e=e, prompt=prompt, expected=expected, labels=labels: self._call(
                ctx, rnd.round_index, 3, e, "evaluator", "evaluation", prompt,
                lambda raw: parse_evaluation(self.domain, raw, expected),
                extra={"labels": labels}, error_cls=EvaluationFailed)))
        pendings = dict(zip([e for e, _ in jobs], self._fan_out(ctx, jobs, pool)))
        judgments: dict[str, Judgment] = {}
        for e, (labels, _) in plans.items():
            key = (rnd.round_index, 3, e)
            if key in ctx.calls:
                ev = ctx.calls[key]
                if ev.event_kind == "call_failed":
                    rnd.evaluation_failures[e] = ev.payload
                else:
                    judgments[e] = judgment_from_event(ev, self.domain.scoring_scheme, self.domain.rubric_weights)
                continue
            pending = pendings[e]
            if pending.error:
                self._commit(ctx, pending, 3)
                rnd.evaluation_failures[e] = pending.terminal[1]
                log.warning("run %d round %d: %s failed to evaluate: %s", ctx.run_index, rnd.round_index, e, pending.error)
                continue
            payload, _, attempts = pending.result
            cells = cells_from_payload(payload, labels)
            body = {
                "labels": labels,
                "scheme": self.domain.scoring_scheme,
                "payload": payload.to_dict(),
                "cells": cells,
                "attempts": attempts,
            }
            if getattr(payload, "discrepancies", ()):
                body["discrepancies"] = list(payload.discrepancies)
            self._commit(ctx, pending, 3, body)
            judgments[e] = Judgment(e, labels, payload, cells)
        rnd.judgments = judgments
        return judgments

    def phase_update_ranking(self, ctx: _RunContext, state: RunState, rnd: Round) -> Leaderboard:
        if not rnd.skipped:
            rnd.round_scores = round_scores(rnd)
            self._emit_once(ctx, rnd.round_index, "round_scored", 4, {
                "questioner": rnd.questioner,
                "scores": rnd.round_scores,
                "matrix": rnd.matrix,
                "answers": len(rnd.answers),
                "answer_failures": sorted(rnd.answer_failures),
                "evaluation_failures": sorted(rnd.evaluation_failures),
            })
            self._notify("round_scored", run_index=ctx.run_index, round_index=rnd.round_index)
        state.completed_rounds.append(rnd)
        board = final_leaderboard(state.completed_rounds, self._model_ids)
        state.interim_leaderboard = board
        self._emit_once(ctx, rnd.round_index, "leaderboard_updated", 4, {"leaderboard": board.to_dict()})
        self._notify("leaderboard_updated", run_index=ctx.run_index, round_index=rnd.round_index, leaderboard=board)
        return board

    # -- rounds and runs ------------------------------------------------------

    def execute_round(self, ctx: _RunContext, state: RunState, questioner: str, pool=None) -> Round:
        done = {r.questioner for r in state.completed_rounds}
        if questioner in done:
            raise ValueError(f"{questioner} has already been questioner in run {ctx.run_index}")
        round_index = ctx.questioner_order.index(questioner)
        rnd = Round(round_index, questioner, run_index=ctx.run_index)
        try:
            rnd.question = self.phase_generate_question(ctx, rnd)
        except QuestionGenerationFailed as exc:
            rnd.skipped = True
            self._emit_once(ctx, round_index, "round_skipped", 1, {
                "questioner": questioner, "reason": str(exc), "last_error": exc.last_error})
            log.warning("run %d round %d skipped: %s could not produce a question", ctx.run_index, round_index, questioner)
            self._notify("phase1", run_index=ctx.run_index, round_index=round_index)
            self.phase_update_ranking(ctx, state, rnd)
            return rnd
        self._notify("phase1", run_index=ctx.run_index, round_index=round_index)
        answerers = [m for m in self._model_ids if m != questioner]
        self.phase_collect_answers(ctx, rnd, answerers, pool)
        self._notify("phase2", run_index=ctx.run_index, round_index=round_index)
        self.phase_collect_evaluations(ctx, rnd, state.interim_leaderboard, pool)
        self._notify("phase3", run_index=ctx.run_index, round_index=round_index)
        self.phase_update_ranking(ctx, state, rnd)
        return rnd

    def _header(self, run_index: int, order: list[str]) -> dict:
        return {
            "config_digest": self.digest,
            "experiment": self.config.experiment,
            "run_index": run_index,
            "seed": self.config.seed,
            "models": list(self._model_ids),
            "display_names": {m.model_id: m.display_name for m in self.config.models},
            "questioner_order": order,
            "domain_id": self.domain.domain_id,
            "scoring_scheme": self.domain.scoring_scheme,
            "rubric_weights": self.domain.rubric_weights,
            "k_values": list(self.config.effective_k_values),
            "sampling": self.config.sampling,
            "sampling_defaults_unsourced": True,
            "retry": {"max_attempts": self.config.retry.max_attempts,
                      "backoff_base": self.config.retry.backoff_base,
                      "backoff_cap": self.config.retry.backoff_cap},
            "inject_interim_leaderboard": self.config.inject_interim_leaderboard,
        }

    def run_single(self, run_index: int, *, resume: bool = False) -> RunState:
        path = self.config.log_path(run_index)
        order = self._questioner_order(run_index)
        replayed: ReplayResult | None = None
        if path.exists() and path.stat().st_size > 0:
            if not resume:
                raise RunAborted(f"{path} already exists; pass resume=True (--resume) to continue it")
            cont = find_resume_point(path, self.digest)
            replayed = cont.replay
            if cont.finished:
                log.info("run %d already complete; nothing to resume", run_index)
                self._notify("run_completed", run_index=run_index, resumed=True,
                             leaderboard=replayed.state.interim_leaderboard)
                return replayed.state
        clock = logical_clock if self.deterministic else wall_clock
        ctx = _RunContext(run_index, EventLog(path, run_index, clock=clock, fsync=self.config.fsync),
                          f"{self.config.seed}|{run_index}", order)
        state = RunState(self.digest, run_index, models=list(self._model_ids))
        try:
            if replayed is None or replayed.header is None:
                ctx.log.append("run_started", payload=self._header(run_index, order))
                self._notify("run_started", run_index=run_index)
            else:
                ctx.calls = dict(replayed.calls)
                ctx.round_events = dict(replayed.round_events)
                state.completed_rounds = list(replayed.state.completed_rounds)
                state.interim_leaderboard = replayed.state.interim_leaderboard
            pool = ThreadPoolExecutor(self.config.concurrency) if self.config.concurrency > 1 else None
            try:
                for questioner in order[len(state.completed_rounds):]:
                    self.execute_round(ctx, state, questioner, pool)
            finally:
                if pool is not None:
                    pool.shutdown(wait=True, cancel_futures=True)
            board = final_leaderboard(state.completed_rounds, self._model_ids)
            state.interim_leaderboard = board
            ctx.log.append("run_completed", payload={
                "leaderboard": board.to_dict(),
                "rounds": len(state.completed_rounds),
                "skipped_rounds": [r.round_index for r in state.completed_rounds if r.skipped],
            })
            state.finished = True
            self._notify("run_completed", run_index=run_index, leaderboard=board)
        finally:
            ctx.log.close()
        return state

    def run(self, *, resume: bool = False) -> RunResult:
        if self.probe:
            self.probe_backends()
        states = [self.run_single(i, resume=resume) for i in range(self.config.num_runs)]
        boards = [s.interim_leaderboard for s in states]
        return RunResult(states, boards, merge_leaderboards(boards),
                         [self.config.log_path(i) for i in range(self.config.num_runs)])

    def close(self) -> None:
        for b in self.backends.values():
            b.close()


def run(config: RunConfig, **kwargs) -> RunResult:
    """Run ``config.num_runs`` independent runs and merge their final leaderboards."""
    resume = kwargs.pop("resume", False)
    orch = Orchestrator(config, **kwargs)
    try:
        return orch.run(resume=resume)
    finally:
        orch.close()
