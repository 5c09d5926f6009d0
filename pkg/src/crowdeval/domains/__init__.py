"""Per-domain prompt templates, question validation and evaluation parsing."""

from .parse import (
    extract_structured_block,
    parse_evaluation,
    payload_from_dict,
    serialize_payload,
    split_sections,
    validate_question,
)
from .render import (
    output_schema,
    render_answer_prompt,
    render_evaluation_prompt,
    render_question_prompt,
    render_retry_prompt,
    render_template,
    section_fence,
)
from .spec import BUILTIN_DOMAINS, DomainSpec, domain_from_dict, load_domain

__all__ = [
    "BUILTIN_DOMAINS",
    "DomainSpec",
    "domain_from_dict",
    "extract_structured_block",
    "load_domain",
    "output_schema",
    "parse_evaluation",
    "payload_from_dict",
    "render_answer_prompt",
    "render_evaluation_prompt",
    "render_question_prompt",
    "render_retry_prompt",
    "render_template",
    "section_fence",
    "serialize_payload",
    "split_sections",
    "validate_question",
]
