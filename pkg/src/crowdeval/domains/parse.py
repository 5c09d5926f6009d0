"""Parsing and validation of model output: question artifacts and evaluation payloads.

Both entry points return :class:`ValidationErrors` instead of raising so the caller can
feed the error list straight back into a retry prompt.
"""

from __future__ import annotations

import json
import math
import re
from typing import Sequence

from ..records import (
    DIMENSIONS,
    QuestionArtifact,
    RelativeRank,
    Rubric100,
    RubricScore,
    ValidationErrors,
)
from ..scoring import rubric_total
from .render import section_fence
from .spec import DomainSpec

_FENCE_LINE = re.compile(r"^[ \t]*(?:#+[ \t]*)?\**[ \t]*==[ \t]*([^=\n]+?)[ \t]*==[ \t]*\**[ \t]*$", re.MULTILINE)
_CODE_BLOCK = re.compile(r"```[ \t]*([A-Za-z]*)[ \t]*\n(.*?)```", re.DOTALL)


def split_sections(raw: str) -> tuple[dict[str, str], list[str]]:
    """Split text on ``== NAME ==`` header lines.  Returns (sections, duplicate names)."""
    sections: dict[str, str] = {}
    dupes: list[str] = []
    matches = list(_FENCE_LINE.finditer(raw))
    for i, m in enumerate(matches):
        name = " ".join(m.group(1).split()).lower()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        body = raw[m.end():end].strip("\n").rstrip()
        if name in sections:
            dupes.append(name)
            continue
        sections[name] = body
    return sections, dupes


def _join(domain_sections: Sequence[str], sections: dict[str, str]) -> str:
    if len(domain_sections) == 1:
        return sections[domain_sections[0]].strip()
    return "\n\n".join(f"{section_fence(s)}\n{sections[s].strip()}" for s in domain_sections)


def validate_question(domain: DomainSpec, raw: str) -> QuestionArtifact | ValidationErrors:
    sections, dupes = split_sections(raw)
    errors = []
    for name in domain.required_sections:
        if name not in sections:
            errors.append(f"missing: {name}")
        elif not sections[name].strip():
            errors.append(f"empty: {name}")
    errors.extend(f"duplicate section: {name}" for name in dict.fromkeys(dupes) if name in domain.required_sections)
    if errors:
        return ValidationErrors(tuple(errors))
    kept = {name: sections[name].strip() for name in domain.required_sections}
    return QuestionArtifact(
        statement=_join(domain.statement_sections, kept),
        reference_answer=_join(domain.reference_sections, kept),
        sections=kept,
        domain_id=domain.domain_id,
        raw_response=raw,
    )


# -- evaluation payloads ------------------------------------------------------

class _Decoded:
    def __init__(self, obj, dupes):
        self.obj = obj
        self.dupes = dupes


def _loads_tracking_dupes(text: str) -> _Decoded:
    dupes: list[str] = []

    def hook(pairs):
        seen = set()
        for k, _ in pairs:
            if k in seen:
                dupes.append(k)
            seen.add(k)
        return dict(pairs)

    return _Decoded(json.loads(text, object_pairs_hook=hook), dupes)


def extract_structured_block(raw: str) -> tuple[_Decoded | None, list[str]]:
    """Find the last fenced block that decodes to a JSON object."""
    blocks = [(lang.lower(), body) for lang, body in _CODE_BLOCK.findall(raw)]
    decode_errors = []
    for lang, body in reversed(blocks):
        if lang not in ("", "json"):
            continue
        try:
            decoded = _loads_tracking_dupes(body)
        except json.JSONDecodeError as exc:
            decode_errors.append(f"structured block is not valid JSON: {exc.msg} (line {exc.lineno})")
            continue
        if isinstance(decoded.obj, dict):
            return decoded, []
        decode_errors.append("structured block must be a JSON object")
    if not blocks:
        try:
            decoded = _loads_tracking_dupes(raw.strip())
            if isinstance(decoded.obj, dict):
                return decoded, []
        except json.JSONDecodeError:
            pass
        return None, ["no fenced ```json block found"]
    return None, decode_errors[:1] or ["no fenced ```json block found"]


def _canon_label(x) -> str | None:
    return x.strip().upper() if isinstance(x, str) and x.strip() else None


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def _parse_ranking(obj: dict, expected: Sequence[str]) -> RelativeRank | ValidationErrors:
    errors = []
    ordering = obj.get("ordering")
    if ordering is None:
        return ValidationErrors(("missing field: ordering",))
    if not isinstance(ordering, list):
        return ValidationErrors(("ordering must be a list of labels",))
    labels: list[str] = []
    for item in ordering:
        if isinstance(item, list):
            errors.append(f"tie not allowed: [{', '.join(map(str, item))}] (give a strict order)")
            continue
        label = _canon_label(item)
        if label is None:
            errors.append(f"invalid label entry: {item!r}")
            continue
        labels.append(label)
    seen = set()
    for label in labels:
        if label in seen:
            errors.append(f"duplicate label: {label}")
        seen.add(label)
    errors.extend(f"unknown label: {label}" for label in dict.fromkeys(labels) if label not in expected)
    errors.extend(f"missing label: {label}" for label in expected if label not in seen)
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        errors.append("rationale must be a string")
    if errors:
        return ValidationErrors(tuple(dict.fromkeys(errors)))
    return RelativeRank(tuple(labels), rationale)


def _parse_rubric(decoded: _Decoded, expected: Sequence[str], weights: dict) -> Rubric100 | ValidationErrors:
    obj = decoded.obj
    scores = obj.get("scores")
    if scores is None:
        return ValidationErrors(("missing field: scores",))
    if not isinstance(scores, dict):
        return ValidationErrors(("scores must be an object keyed by answer label",))
    errors = []
    canon: dict[str, dict] = {}
    for key, row in scores.items():
        label = _canon_label(key)
        if label is None:
            errors.append(f"invalid label entry: {key!r}")
            continue
        if label in canon:
            errors.append(f"duplicate label: {label}")
        canon[label] = row
    errors.extend(f"duplicate label: {_canon_label(k) or k}" for k in decoded.dupes if _canon_label(k) in canon)
    errors.extend(f"unknown label: {label}" for label in canon if label not in expected)
    errors.extend(f"missing label: {label}" for label in expected if label not in canon)

    per_answer: dict[str, RubricScore] = {}
    discrepancies = []
    for label in expected:
        row = canon.get(label)
        if row is None:
            continue
        if not isinstance(row, dict):
            errors.append(f"scores for {label} must be an object of subscores")
            continue
        ok = True
        for dim in DIMENSIONS:
            if dim not in row:
                errors.append(f"missing dimension: {label}.{dim}")
                ok = False
                continue
            v = row[dim]
            if not _is_number(v) or not math.isfinite(v):
                errors.append(f"non-numeric: {label}.{dim}={v!r}")
                ok = False
            elif not 0 <= v <= 100:
                errors.append(f"out of range: {label}.{dim}={v} (allowed 0-100)")
                ok = False
        reported = row.get("total")
        if reported is not None:
            if not _is_number(reported) or not math.isfinite(reported):
                errors.append(f"non-numeric: {label}.total={reported!r}")
                ok = False
            elif not 0 <= reported <= 100:
                errors.append(f"out of range: {label}.total={reported} (allowed 0-100)")
                ok = False
        if not ok:
            continue
        total = rubric_total(row, weights)
        if reported is not None and reported != total:
            discrepancies.append(f"{label}: reported total {reported} replaced by derived {total}")
        per_answer[label] = RubricScore(*(row[d] for d in DIMENSIONS), total=total)
    rationale = obj.get("rationale", "")
    if not isinstance(rationale, str):
        errors.append("rationale must be a string")
    if errors:
        return ValidationErrors(tuple(dict.fromkeys(errors)))
    return Rubric100(per_answer, rationale, tuple(discrepancies))


def parse_evaluation(domain: DomainSpec, raw: str, expected_labels: Sequence[str]):
    """Parse an evaluator reply into a payload, or the list of reasons it was rejected."""
    expected = [_canon_label(x) for x in expected_labels]
    decoded, errors = extract_structured_block(raw)
    if decoded is None:
        return ValidationErrors(tuple(errors))
    if domain.scoring_scheme == "relative_rank":
        if decoded.dupes:
            return ValidationErrors(tuple(f"duplicate field: {k}" for k in decoded.dupes))
        return _parse_ranking(decoded.obj, expected)
    return _parse_rubric(decoded, expected, domain.rubric_weights)


def serialize_payload(payload: RelativeRank | Rubric100, prose: str = "") -> str:
    """Render a payload in the output schema evaluators are asked to use."""
    body = json.dumps(payload.to_dict(), indent=2)
    text = f"```json\n{body}\n```\n"
    return f"{prose}\n\n{text}" if prose else text


def payload_from_dict(scheme: str, d: dict, weights: dict | None = None) -> RelativeRank | Rubric100:
    """Rebuild a payload from its logged ``to_dict`` form."""
    if scheme == "relative_rank":
        return RelativeRank(tuple(d["ordering"]), d.get("rationale", ""))
    per = {}
    for label, row in d["scores"].items():
        per[label] = RubricScore(*(row[k] for k in DIMENSIONS), total=row["total"])
    return Rubric100(per, d.get("rationale", ""), tuple(d.get("discrepancies", ())))
