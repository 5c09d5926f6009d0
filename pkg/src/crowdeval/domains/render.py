"""Prompt rendering for the three model-facing phases plus retry prompts."""

from __future__ import annotations

import json
from functools import lru_cache
from typing import Sequence

import jinja2
from jinja2 import meta

from ..errors import TemplateVarMissing
from ..records import DIMENSIONS, QuestionArtifact
from .spec import DIMENSION_DESCRIPTIONS, DomainSpec

_ENV = jinja2.Environment(
    autoescape=False,
    undefined=jinja2.StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=False,
)


@lru_cache(maxsize=256)
def _compile(source: str) -> tuple[jinja2.Template, frozenset[str]]:
    names = frozenset(meta.find_undeclared_variables(_ENV.parse(source)))
    return _ENV.from_string(source), names


def render_template(source: str, context: dict) -> str:
    template, names = _compile(source)
    missing = names - context.keys()
    if missing:
        raise TemplateVarMissing(missing)
    return template.render(**context).strip() + "\n"


def section_fence(name: str) -> str:
    return f"== {name.upper()} =="


def output_schema(domain: DomainSpec, labels: Sequence[str]) -> str:
    """The literal JSON shape an evaluator must return, with these labels filled in."""
    if domain.scoring_scheme == "relative_rank":
        example = {"ordering": list(labels), "rationale": "<why this order>"}
    else:
        row = {d: "<0-100>" for d in DIMENSIONS} | {"total": "<0-100>"}
        example = {"scores": {label: row for label in labels}, "rationale": "<short justification>"}
    return json.dumps(example, indent=2)


def render_question_prompt(domain: DomainSpec, round_context: dict) -> str:
    ctx = {
        "round_index": 0,
        "run_index": 0,
        "domain_id": domain.domain_id,
        "sections": list(domain.required_sections),
        "section_fences": [section_fence(s) for s in domain.required_sections],
        "exemplars": list(domain.few_shot_exemplars),
    }
    ctx.update(round_context)
    return render_template(domain.question_template, ctx)


def render_answer_prompt(domain: DomainSpec, question: QuestionArtifact | str) -> str:
    statement = question.statement if isinstance(question, QuestionArtifact) else question
    return render_template(domain.answer_template, {"question": statement, "domain_id": domain.domain_id})


def render_evaluation_prompt(
    domain: DomainSpec,
    question: QuestionArtifact | str,
    reference_answer: str,
    labeled_answers: Sequence[tuple[str, str]],
    interim_leaderboard: str | None = None,
) -> str:
    statement = question.statement if isinstance(question, QuestionArtifact) else question
    labels = [label for label, _ in labeled_answers]
    ctx = {
        "domain_id": domain.domain_id,
        "question": statement,
        "reference_answer": reference_answer,
        "answers": [{"label": label, "text": text} for label, text in labeled_answers],
        "labels": labels,
        "output_schema": output_schema(domain, labels),
        "dimensions": [{"key": d, "description": DIMENSION_DESCRIPTIONS[d],
                        "weight": domain.rubric_weights[d]} for d in DIMENSIONS],
        "scheme": domain.scoring_scheme,
        "interim_leaderboard": interim_leaderboard or "",
    }
    return render_template(domain.evaluation_template, ctx)


def render_retry_prompt(domain: DomainSpec, original_prompt: str, errors: Sequence[str]) -> str:
    return render_template(domain.retry_template, {"original_prompt": original_prompt.rstrip(), "errors": list(errors)})
