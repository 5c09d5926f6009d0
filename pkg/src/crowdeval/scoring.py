"""Rank normalization, score aggregation, leaderboards and cross-judge analytics.

Every function here is pure.  Sums go through ``math.fsum`` so that results do
not depend on the order in which evaluators or rounds are visited.
"""

from __future__ import annotations

import itertools
import math
import statistics
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateLabel, InsufficientData
from .records import DIMENSIONS, EvaluationPayload, RelativeRank, Round, Rubric100

TOP_K_DEFINITION = (
    "For each evaluator in a round, take the k answers it scored highest "
    "(ties broken by answerer id). Top-k consistency of the round is the mean, "
    "over all unordered evaluator pairs, of |top_k(i) & top_k(j)| / k. "
    "'per_round_mean' averages round values; 'pooled' averages all pairs of all rounds."
)


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    return math.fsum(values) / len(values)


def normalize_ranking(ordering: Sequence[str]) -> dict[str, float]:
    """Map a best-first strict ordering onto [0, 100] linearly.

    The label at 1-based rank r of m scores ``100 * (m - r) / (m - 1)``; a lone
    label scores 100.
    """
    m = len(ordering)
    if m == 0:
        raise ValueError("ordering must contain at least one label")
    if len(set(ordering)) != m:
        dupes = sorted({x for x in ordering if ordering.count(x) > 1})
        raise DuplicateLabel(f"duplicate label(s) in ordering: {', '.join(dupes)}")
    if m == 1:
        return {ordering[0]: 100.0}
    return {label: 100 * (m - r) / (m - 1) for r, label in enumerate(ordering, start=1)}


def rubric_total(subscores: Mapping[str, float], weights: Mapping[str, float]) -> int:
    """Weighted mean of the five rubric dimensions, rounded half-up to an int."""
    w = {d: Fraction(str(weights[d])) for d in DIMENSIONS}
    wsum = sum(w.values())
    if wsum <= 0:
        raise ValueError("rubric weights must sum to a positive value")
    mean = sum(w[d] * Fraction(str(subscores[d])) for d in DIMENSIONS) / wsum
    return math.floor(mean + Fraction(1, 2))


def cells_from_payload(payload: EvaluationPayload, labels: Mapping[str, str]) -> dict[str, float]:
    """Translate a label-keyed payload into answerer-keyed scores."""
    if isinstance(payload, RelativeRank):
        by_label = normalize_ranking(payload.ordering)
    elif isinstance(payload, Rubric100):
        by_label = {label: float(s.total) for label, s in payload.per_answer.items()}
    else:  # pragma: no cover
        raise TypeError(f"unknown payload type {type(payload).__name__}")
    return {labels[label]: score for label, score in by_label.items()}


def round_scores(rnd: Round | Mapping[str, Mapping[str, float]]) -> dict[str, float]:
    """Mean of present evaluator cells per answerer; answers nobody scored are absent."""
    matrix = rnd.matrix if isinstance(rnd, Round) else rnd
    columns: dict[str, list[float]] = {}
    for evaluator, row in matrix.items():
        for answerer, score in row.items():
            if answerer == evaluator:
                raise ValueError(f"self-evaluation cell for {answerer}")
            columns.setdefault(answerer, []).append(score)
    return {a: _mean(v) for a, v in sorted(columns.items())}


# -- leaderboards -------------------------------------------------------------

@dataclass(frozen=True)
class LeaderboardEntry:
    model_id: str
    aggregate: float | None
    rounds_counted: int
    rank: int | None
    tied_with: tuple[str, ...] = ()

    @property
    def scored(self) -> bool:
        return self.aggregate is not None

    def to_dict(self) -> dict:
        return {
            "model_id": self.model_id,
            "aggregate": self.aggregate,
            "rounds_counted": self.rounds_counted,
            "rank": self.rank,
            "tied_with": list(self.tied_with),
            "scored": self.scored,
        }


@dataclass(frozen=True)
class Leaderboard:
    entries: tuple[LeaderboardEntry, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "Leaderboard":
        return cls(tuple(
            LeaderboardEntry(e["model_id"], e["aggregate"], e["rounds_counted"], e["rank"], tuple(e["tied_with"]))
            for e in d["entries"]
        ))

    def get(self, model_id: str) -> LeaderboardEntry:
        for e in self.entries:
            if e.model_id == model_id:
                return e
        raise KeyError(model_id)

    def order(self) -> list[str]:
        return [e.model_id for e in self.entries if e.scored]

    def as_table(self, title: str = "") -> str:
        lines = [title] if title else []
        lines.append(f"{'rank':>4}  {'model':<24} {'score':>8}  rounds")
        for e in self.entries:
            rank = str(e.rank) if e.rank is not None else "-"
            score = f"{e.aggregate:8.2f}" if e.scored else f"{'unscored':>8}"
            tie = f"  (tied: {', '.join(e.tied_with)})" if e.tied_with else ""
            lines.append(f"{rank:>4}  {e.model_id:<24} {score}  {e.rounds_counted:>6}{tie}")
        return "\n".join(lines)


def build_leaderboard(aggregates: Mapping[str, float | None], counts: Mapping[str, int]) -> Leaderboard:
    """Sort by aggregate (desc) then model_id; unscored models trail with no rank."""
    scored = sorted((m for m, v in aggregates.items() if v is not None), key=lambda m: (-aggregates[m], m))
    unscored = sorted(m for m, v in aggregates.items() if v is None)
    groups: dict[float, list[str]] = {}
    for m in scored:
        groups.setdefault(aggregates[m], []).append(m)
    entries = []
    for rank, m in enumerate(scored, start=1):
        tied = tuple(x for x in groups[aggregates[m]] if x != m)
        entries.append(LeaderboardEntry(m, aggregates[m], counts.get(m, 0), rank, tied))
    entries.extend(LeaderboardEntry(m, None, counts.get(m, 0), None) for m in unscored)
    return Leaderboard(tuple(entries))


def _participants(rounds: Iterable[Round]) -> set[str]:
    out: set[str] = set()
    for r in rounds:
        out.add(r.questioner)
        out.update(r.answers)
        out.update(r.answer_failures)
        out.update(r.judgments)
        out.update(r.evaluation_failures)
    return out


def final_leaderboard(rounds: Sequence[Round], models: Iterable[str] | None = None) -> Leaderboard:
    """Per model, the mean of its present round scores over all given rounds."""
    rounds = list(rounds)
    model_ids = set(models) if models is not None else _participants(rounds)
    per_model: dict[str, list[float]] = {m: [] for m in model_ids}
    for r in rounds:
        if r.skipped:
            continue
        for m, s in r.round_scores.items():
            per_model.setdefault(m, []).append(s)
    aggregates = {m: (_mean(v) if v else None) for m, v in per_model.items()}
    return build_leaderboard(aggregates, {m: len(v) for m, v in per_model.items()})


def merge_leaderboards(boards: Sequence[Leaderboard]) -> Leaderboard:
    """Mean of per-run aggregates over the runs in which a model was scored."""
    per_model: dict[str, list[float]] = {}
    counts: dict[str, int] = {}
    for b in boards:
        for e in b.entries:
            per_model.setdefault(e.model_id, [])
            counts[e.model_id] = counts.get(e.model_id, 0) + e.rounds_counted
            if e.scored:
                per_model[e.model_id].append(e.aggregate)
    aggregates = {m: (_mean(v) if v else None) for m, v in per_model.items()}
    return build_leaderboard(aggregates, counts)


# -- consistency / dispersion ---------------------------------------------------

def _top_k_sets(rnd: Round, k: int) -> list[frozenset[str]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    matrix = rnd.matrix
    if len(matrix) < 2:
        raise InsufficientData(f"round {rnd.round_index}: need >= 2 evaluators, have {len(matrix)}")
    sets = []
    for evaluator in sorted(matrix):
        row = matrix[evaluator]
        if len(row) < k:
            raise InsufficientData(
                f"round {rnd.round_index}: evaluator {evaluator} scored {len(row)} answer(s), k={k}"
            )
        ranked = sorted(row, key=lambda a: (-row[a], a))
        sets.append(frozenset(ranked[:k]))
    return sets


def top_k_overlaps(rnd: Round, k: int) -> list[Fraction]:
    """Overlap fraction for every unordered evaluator pair of one round (exact)."""
    sets = _top_k_sets(rnd, k)
    return [Fraction(len(a & b), k) for a, b in itertools.combinations(sets, 2)]


def _frac_mean(values: Sequence[Fraction]) -> float:
    return float(sum(values, Fraction(0)) / len(values))


def top_k_consistency(rnd: Round, k: int) -> float:
    return _frac_mean(top_k_overlaps(rnd, k))


def experiment_top_k(rounds: Sequence[Round], k: int) -> dict:
    """Per-round values plus both experiment-level aggregations."""
    per_round: list[dict] = []
    exact_round_values: list[Fraction] = []
    pooled: list[Fraction] = []
    excluded: list[dict] = []
    for r in rounds:
        if r.skipped:
            continue
        try:
            overlaps = top_k_overlaps(r, k)
        except InsufficientData as exc:
            excluded.append({"run_index": r.run_index, "round_index": r.round_index, "reason": str(exc)})
            continue
        pooled.extend(overlaps)
        value = sum(overlaps, Fraction(0)) / len(overlaps)
        exact_round_values.append(value)
        per_round.append({"run_index": r.run_index, "round_index": r.round_index,
                          "value": float(value), "pairs": len(overlaps)})
    return {
        "k": k,
        "per_round": per_round,
        "per_round_mean": _frac_mean(exact_round_values) if per_round else None,
        "pooled": _frac_mean(pooled) if pooled else None,
        "excluded_rounds": excluded,
    }


def per_answer_stddev(rnd: Round) -> dict[str, float]:
    """Population standard deviation of each answer's evaluator scores (>= 2 scores only)."""
    columns: dict[str, list[float]] = {}
    for row in rnd.matrix.values():
        for a, s in row.items():
            columns.setdefault(a, []).append(s)
    return {a: statistics.pstdev(v) for a, v in sorted(columns.items()) if len(v) >= 2}


def dispersion_summary(rounds: Sequence[Round]) -> dict:
    values = [s for r in rounds if not r.skipped for s in per_answer_stddev(r).values()]
    if not values:
        return {"count": 0, "min": None, "max": None, "mean": None}
    return {"count": len(values), "min": min(values), "max": max(values), "mean": _mean(values)}


def dual_axis_metrics(rounds: Sequence[Round], models: Iterable[str] | None = None) -> dict[str, dict]:
    """Solving ability (own mean score on others' questions) and question difficulty
    (others' mean score on own questions; lower is harder)."""
    rounds = list(rounds)
    board = final_leaderboard(rounds, models)
    own_q: dict[str, list[float]] = {}
    for r in rounds:
        if r.skipped or not r.round_scores:
            continue
        own_q.setdefault(r.questioner, []).append(_mean(r.round_scores.values()))
    out = {}
    for e in board.entries:
        qs = own_q.get(e.model_id)
        out[e.model_id] = {
            "solving": e.aggregate,
            "difficulty": _mean(qs) if qs else None,
            "questions_counted": len(qs) if qs else 0,
        }
    return dict(sorted(out.items()))
