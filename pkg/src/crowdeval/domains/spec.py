"""Declarative domain definitions: templates, required sections and scoring scheme."""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import yaml

from ..errors import DomainNotFound
from ..records import DIMENSIONS

SCHEMES = ("relative_rank", "rubric100")
BUILTIN_DOMAINS = ("math", "programming")

DIMENSION_DESCRIPTIONS = {
    "correctness": "produces the right output on every valid input, edge cases included",
    "efficiency": "running time relative to the stated limits",
    "readability": "naming, comments and ease of following the code",
    "structure": "clarity of decomposition and overall organisation",
    "memory": "memory use and control relative to the stated limits",
}

DEFAULT_RETRY_TEMPLATE = """{{ original_prompt }}

Your previous reply could not be accepted for these reasons:
{% for e in errors %}- {{ e }}
{% endfor %}
Reply again, fixing every listed problem and following the required format exactly.
"""


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    scoring_scheme: str
    question_template: str
    answer_template: str
    evaluation_template: str
    required_sections: tuple[str, ...]
    statement_sections: tuple[str, ...]
    reference_sections: tuple[str, ...]
    few_shot_exemplars: tuple[str, ...] = ()
    rubric_weights: dict[str, float] = field(default_factory=lambda: {d: 0.2 for d in DIMENSIONS})
    retry_template: str = DEFAULT_RETRY_TEMPLATE
    system_prompt: str = ""

    def __post_init__(self):
        if self.scoring_scheme not in SCHEMES:
            raise ValueError(f"unknown scoring scheme {self.scoring_scheme!r}; expected one of {SCHEMES}")
        if not self.required_sections:
            raise ValueError("a domain needs at least one required section")
        missing = [s for s in (*self.statement_sections, *self.reference_sections)
                   if s not in self.required_sections]
        if missing:
            raise ValueError(f"statement/reference sections not listed as required: {missing}")
        if not self.statement_sections or not self.reference_sections:
            raise ValueError("statement_sections and reference_sections must both be non-empty")
        if set(self.rubric_weights) != set(DIMENSIONS):
            raise ValueError(f"rubric_weights must name exactly {DIMENSIONS}")
        if any(w < 0 for w in self.rubric_weights.values()) or sum(self.rubric_weights.values()) <= 0:
            raise ValueError("rubric weights must be non-negative with a positive sum")

    def with_weights(self, weights: dict[str, float] | None) -> "DomainSpec":
        if not weights:
            return self
        merged = dict(self.rubric_weights) | {k: float(v) for k, v in weights.items()}
        return DomainSpec(**{**self.__dict__, "rubric_weights": merged})

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("required_sections", "statement_sections", "reference_sections", "few_shot_exemplars"):
            d[k] = list(d[k])
        d["rubric_weights"] = dict(self.rubric_weights)
        return d


def domain_from_dict(data: dict) -> DomainSpec:
    data = dict(data)
    data.pop("schema_version", None)
    norm = lambda xs: tuple(str(x).strip().lower() for x in xs or ())  # noqa: E731
    try:
        return DomainSpec(
            domain_id=str(data["domain_id"]),
            scoring_scheme=str(data["scoring_scheme"]),
            question_template=data["question_template"],
            answer_template=data["answer_template"],
            evaluation_template=data["evaluation_template"],
            required_sections=norm(data["required_sections"]),
            statement_sections=norm(data.get("statement_sections")),
            reference_sections=norm(data.get("reference_sections")),
            few_shot_exemplars=tuple(data.get("few_shot_exemplars") or ()),
            rubric_weights={k: float(v) for k, v in (data.get("rubric_weights") or {d: 0.2 for d in DIMENSIONS}).items()},
            retry_template=data.get("retry_template") or DEFAULT_RETRY_TEMPLATE,
            system_prompt=data.get("system_prompt") or "",
        )
    except KeyError as exc:
        raise ValueError(f"domain file missing field {exc.args[0]!r}") from None


def load_domain(ref: str | Path) -> DomainSpec:
    """Load a built-in domain by id, or a domain file by path."""
    if str(ref) in BUILTIN_DOMAINS:
        text = resources.files(__package__).joinpath("data", f"{ref}.yaml").read_text(encoding="utf-8")
    else:
        path = Path(ref)
        if not path.is_file():
            raise DomainNotFound(f"no built-in domain or domain file named {str(ref)!r}")
        text = path.read_text(encoding="utf-8")
    return domain_from_dict(yaml.safe_load(text))
