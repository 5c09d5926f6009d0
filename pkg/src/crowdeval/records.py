"""Plain data records passed between the protocol, scoring and persistence layers."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

DIMENSIONS = ("correctness", "efficiency", "readability", "structure", "memory")


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    display_name: str
    backend_ref: str


@dataclass(frozen=True)
class QuestionArtifact:
    statement: str
    reference_answer: str
    sections: dict[str, str]
    domain_id: str
    raw_response: str

    def to_dict(self) -> dict:
        return {
            "statement": self.statement,
            "reference_answer": self.reference_answer,
            "sections": dict(self.sections),
            "domain_id": self.domain_id,
            "raw_response": self.raw_response,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuestionArtifact":
        return cls(d["statement"], d["reference_answer"], dict(d["sections"]), d["domain_id"], d["raw_response"])


@dataclass(frozen=True)
class AnswerArtifact:
    answerer: str
    text: str
    latency: float = 0.0


@dataclass(frozen=True)
class ValidationErrors:
    """Machine-readable validation failures; fed back into the retry prompt."""

    errors: tuple[str, ...]

    def __bool__(self) -> bool:
        # falsy so `if result:` reads as "got a valid artifact"
        return False

    def __iter__(self):
        return iter(self.errors)

    def __len__(self) -> int:
        return len(self.errors)


@dataclass(frozen=True)
class RelativeRank:
    ordering: tuple[str, ...]
    rationale: str = ""

    scheme = "relative_rank"

    def to_dict(self) -> dict:
        return {"ordering": list(self.ordering), "rationale": self.rationale}


@dataclass(frozen=True)
class RubricScore:
    correctness: float
    efficiency: float
    readability: float
    structure: float
    memory: float
    total: int

    def to_dict(self) -> dict:
        return {d: getattr(self, d) for d in DIMENSIONS} | {"total": self.total}


@dataclass(frozen=True)
class Rubric100:
    per_answer: dict[str, RubricScore]
    rationale: str = ""
    discrepancies: tuple[str, ...] = ()

    scheme = "rubric100"

    def to_dict(self) -> dict:
        return {
            "scores": {label: s.to_dict() for label, s in sorted(self.per_answer.items())},
            "rationale": self.rationale,
        }


EvaluationPayload = Union[RelativeRank, Rubric100]


@dataclass
class Judgment:
    """One evaluator's parsed verdict over the answers it was shown."""

    evaluator: str
    labels: dict[str, str]  # label -> answerer_id
    payload: EvaluationPayload
    cells: dict[str, float]  # answerer_id -> score in [0, 100]


@dataclass
class Round:
    round_index: int
    questioner: str
    run_index: int = 0
    question: QuestionArtifact | None = None
    answers: dict[str, AnswerArtifact] = field(default_factory=dict)
    judgments: dict[str, Judgment] = field(default_factory=dict)
    answer_failures: dict[str, dict] = field(default_factory=dict)
    evaluation_failures: dict[str, dict] = field(default_factory=dict)
    round_scores: dict[str, float] = field(default_factory=dict)
    skipped: bool = False

    @property
    def matrix(self) -> dict[str, dict[str, float]]:
        """evaluator -> answerer -> score; the diagonal never appears."""
        return {e: dict(j.cells) for e, j in self.judgments.items()}

    @property
    def evaluations(self) -> dict[tuple[str, str], EvaluationPayload]:
        return {(e, a): j.payload for e, j in self.judgments.items() for a in j.cells}


@dataclass
class RunState:
    config_digest: str
    run_index: int = 0
    completed_rounds: list[Round] = field(default_factory=list)
    interim_leaderboard: object = None  # scoring.Leaderboard; typed loosely to avoid a cycle
    models: list[str] = field(default_factory=list)
    finished: bool = False
