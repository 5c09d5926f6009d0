"""Report bundle: everything is recomputed from the logs via replay, never from caches."""

from __future__ import annotations

import csv
import hashlib
import io
import json
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from ..errors import CrowdEvalError
from ..persistence import ReplayResult, replay
from ..records import Round
from ..scoring import (
    TOP_K_DEFINITION,
    Leaderboard,
    _mean,
    dispersion_summary,
    dual_axis_metrics,
    experiment_top_k,
    merge_leaderboards,
    per_answer_stddev,
)
from .svg import radar_svg, scatter_svg

# dispersion band observed with eight production models; context only, never asserted
REFERENCE_STDDEV_BAND = {"min": 2.04, "max": 9.87, "scale": 100}
REFERENCE_TOP_K = {"k": "n/2", "value": 0.7485}


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])
    return buf.getvalue()


def leaderboard_csv(board: Leaderboard) -> str:
    rows = [["rank", "model_id", "aggregate", "rounds_counted", "scored", "tied_with"]]
    for e in board.entries:
        rows.append([e.rank, e.model_id, e.aggregate, e.rounds_counted, e.scored, ";".join(e.tied_with)])
    return _csv(rows)


def score_matrix_csv(rnd: Round, models: Sequence[str]) -> str:
    answerers = [m for m in models if m != rnd.questioner]
    rows = [["evaluator"] + answerers]
    matrix = rnd.matrix
    for e in models:
        row = matrix.get(e, {})
        status = "failed" if e in rnd.evaluation_failures else None
        rows.append([e] + [row.get(a, status if a != e else None) for a in answerers])
    rows.append(["round_score"] + [rnd.round_scores.get(a) for a in answerers])
    return _csv(rows)


def _round_provenance(rep: ReplayResult) -> dict[int, dict]:
    spans: dict[int, dict] = {}
    for ev in rep.events:
        if ev.round_index is None:
            continue
        s = spans.setdefault(ev.round_index, {"first_seq": ev.seq, "last_seq": ev.seq})
        s["last_seq"] = ev.seq
        if ev.phase == 3:
            s.setdefault("phase3_first_seq", ev.seq)
            s["phase3_last_seq"] = ev.seq
        if ev.event_kind in ("round_scored", "leaderboard_updated", "round_skipped"):
            s[f"{ev.event_kind}_seq"] = ev.seq
    return spans


def _axis_name(r: Round) -> str:
    return f"r{r.run_index}.q{r.round_index} ({r.questioner})"


def _radar(rounds: list[Round], models: list[str], title: str) -> str:
    used = [r for r in rounds if not r.skipped]
    skipped = [r for r in rounds if r.skipped]
    axes = [_axis_name(r) for r in used]
    series = {m: [r.round_scores.get(m) for r in used] for m in models}
    notes = ["Axis value: mean score the model's answer received on that question (0-100).",
             "Hollow markers at the centre: no score (own question or failed call)."]
    if skipped:
        notes.append("Skipped rounds omitted: " + ", ".join(_axis_name(r) for r in skipped))
    return radar_svg(axes, series, title=title, footnotes=notes)


def _dual_axis_svg(metrics: dict, title: str) -> str:
    pts = {m: (v["solving"], v["difficulty"]) for m, v in metrics.items()}
    return scatter_svg(pts, x_label="Own average score on others' questions",
                       y_label="Others' average score on own questions", title=title,
                       footnotes=["Lower y means the model's questions were harder for the others."])


def load_runs(log_paths: Sequence[str | Path]) -> list[tuple[Path, ReplayResult]]:
    runs = []
    for p in log_paths:
        rep = replay(p)
        if rep.header is None:
            raise CrowdEvalError(f"{p} is empty")
        runs.append((Path(p), rep))
    runs.sort(key=lambda pr: pr[1].state.run_index)
    models = {tuple(rep.header["models"]) for _, rep in runs}
    if len(models) > 1:
        raise CrowdEvalError("logs come from different model pools and cannot be merged")
    return runs


def build_report(log_paths: Sequence[str | Path], out_dir: str | Path, *,
                 k_values: Sequence[int] | None = None) -> dict:
    """Write the report bundle to ``out_dir``; returns the computed numbers."""
    out = Path(out_dir)
    runs = load_runs(log_paths)
    header = runs[0][1].header
    models = list(header["models"])
    ks = list(k_values or header.get("k_values") or [max(1, len(models) // 2)])
    files: dict[str, str] = {}

    boards, all_rounds, provenance_runs = [], [], []
    for path, rep in runs:
        st = rep.state
        rounds = sorted(st.completed_rounds, key=lambda r: r.round_index)
        board = st.interim_leaderboard
        boards.append(board)
        all_rounds.extend(rounds)
        sub = f"run_{st.run_index}"
        files[f"{sub}/leaderboard.csv"] = leaderboard_csv(board)
        files[f"{sub}/leaderboard.json"] = _json(board.to_dict())
        for r in rounds:
            if not r.skipped:
                files[f"{sub}/scores_round_{r.round_index}.csv"] = score_matrix_csv(r, models)
        files[f"{sub}/dual_axis.json"] = _json(dual_axis_metrics(rounds, models))
        files[f"{sub}/radar.svg"] = _radar(rounds, models, f"Run {st.run_index}: per-question scores")
        files[f"{sub}/consistency.json"] = _json({
            "definition": TOP_K_DEFINITION,
            "top_k": {str(k): experiment_top_k(rounds, k) for k in ks},
            "dispersion": dispersion_summary(rounds),
        })
        spans = _round_provenance(rep)
        provenance_runs.append({
            "run_index": st.run_index,
            "log_file": path.name,
            "log_sha256": hashlib.sha256(path.read_bytes()).hexdigest(),
            "config_digest": rep.header["config_digest"],
            "finished": st.finished,
            "events": len(rep.events),
            "rounds": {str(i): spans[i] for i in sorted(spans)},
        })

    merged = merge_leaderboards(boards)
    consistency = {
        "definition": TOP_K_DEFINITION,
        "top_k": {str(k): experiment_top_k(all_rounds, k) for k in ks},
        "dispersion": dispersion_summary(all_rounds),
        "per_answer_stddev": [
            {"run_index": r.run_index, "round_index": r.round_index, "answerer": a, "stddev": s}
            for r in all_rounds if not r.skipped for a, s in per_answer_stddev(r).items()
        ],
        "reference": {"top_k": REFERENCE_TOP_K, "stddev_band": REFERENCE_STDDEV_BAND,
                      "note": "reference values for an eight-model pool; context only, never asserted"},
    }
    difficulty: dict[str, list[float]] = defaultdict(list)
    for r in all_rounds:
        if not r.skipped and r.round_scores:
            difficulty[r.questioner].append(_mean(r.round_scores.values()))
    dual = {
        e.model_id: {
            "solving": e.aggregate,
            "difficulty": _mean(difficulty[e.model_id]) if difficulty[e.model_id] else None,
            "questions_counted": len(difficulty[e.model_id]),
        }
        for e in sorted(merged.entries, key=lambda e: e.model_id)
    }

    # provenance: which round_scored events feed each reported number
    contrib: dict[str, list[dict]] = defaultdict(list)
    diff_src: dict[str, list[dict]] = defaultdict(list)
    by_run = {pr["run_index"]: pr for pr in provenance_runs}
    for r in all_rounds:
        span = by_run[r.run_index]["rounds"].get(str(r.round_index), {})
        ref = {"run_index": r.run_index, "round_index": r.round_index,
               "round_scored_seq": span.get("round_scored_seq"),
               "seq_range": [span.get("first_seq"), span.get("last_seq")]}
        for m in r.round_scores:
            contrib[m].append(ref)
        if r.round_scores:
            diff_src[r.questioner].append(ref)
    provenance = {
        "runs": provenance_runs,
        "leaderboard": {m: contrib[m] for m in sorted(models)},
        "dual_axis_difficulty": {m: diff_src[m] for m in sorted(models)},
        "consistency": "per-round values derive from the phase3 seq range of each listed round",
    }

    files["leaderboard.csv"] = leaderboard_csv(merged)
    files["leaderboard.json"] = _json({**merged.to_dict(), "runs": len(runs),
                                       "per_run": [b.to_dict() for b in boards]})
    files["leaderboard.txt"] = merged.as_table(f"Merged leaderboard over {len(runs)} run(s)") + "\n"
    files["consistency.json"] = _json(consistency)
    files["dual_axis.json"] = _json(dual)
    files["radar.svg"] = _radar(all_rounds, models, "Per-question scores")
    files["dual_axis.svg"] = _dual_axis_svg(dual, "Solving ability vs. difficulty of own questions")
    files["provenance.json"] = _json(provenance)

    for name, text in files.items():
        target = out / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    return {
        "merged": merged,
        "per_run": boards,
        "consistency": consistency,
        "dual_axis": dual,
        "files": sorted(files),
        "rounds": all_rounds,
    }
