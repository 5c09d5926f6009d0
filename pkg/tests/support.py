"""Shared test helpers: mock-config builders and an independent log oracle.

The oracle reads the raw JSONL with ``json`` and re-derives every number with exact
``Fraction`` arithmetic from the evaluators' raw replies.  It shares no code with the
package's scoring, parsing or persistence modules.
"""

from __future__ import annotations

import json
import math
import re
from collections import defaultdict
from fractions import Fraction
from itertools import combinations
from pathlib import Path

import yaml

from crowdeval.config import parse_config

DIMS = ("correctness", "efficiency", "readability", "structure", "memory")


def mock_config(tmp_path: Path, *, n: int = 3, domain: str = "math", num_runs: int = 1, seed: int = 1,
                script: dict | None = None, concurrency: int = 1, name: str = "exp", out: str = "out", **extra):
    tmp_path.mkdir(parents=True, exist_ok=True)
    script_path = tmp_path / f"{name}_script.yaml"
    script_path.write_text(yaml.safe_dump(script or {"seed": seed, "rules": []}), encoding="utf-8")
    raw = {
        "experiment": name,
        "domain": domain,
        "num_runs": num_runs,
        "seed": seed,
        "output_dir": str(tmp_path / out),
        "concurrency": concurrency,
        "models": [{"model_id": f"M{i}", "backend": "mock"} for i in range(1, n + 1)],
        "backends": {"mock": {"kind": "mock", "mock_script": str(script_path)}},
        "sampling": {},
    }
    raw.update(extra)
    cfg, errors, _ = parse_config(raw, env={})
    assert cfg is not None, errors
    return cfg


def raw_events(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines()]


# -- oracle -------------------------------------------------------------------

_BLOCK = re.compile(r"```(?:json)?\s*\n(.*?)```", re.DOTALL)


def _last_json(text: str) -> dict:
    for body in reversed(_BLOCK.findall(text)):
        try:
            obj = json.loads(body)
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    raise AssertionError("oracle: no JSON block in accepted reply")


def _frac(x) -> Fraction:
    return Fraction(str(x))


def oracle_rounds(path) -> tuple[dict, list[dict]]:
    """Per round: {questioner, cells: {evaluator: {answerer: Fraction}}, scores: {answerer: Fraction}}."""
    events = raw_events(path)
    header = events[0]["payload"]
    scheme = header["scoring_scheme"]
    weights = {d: _frac(w) for d, w in header["rubric_weights"].items()}
    last_reply: dict[tuple, str] = {}
    labels_of: dict[tuple, dict] = {}
    rounds: dict[int, dict] = {}
    for ev in events:
        key = (ev["round_index"], ev["phase"], ev["actor"])
        kind = ev["event_kind"]
        if kind == "prompt_sent" and ev["phase"] == 3:
            labels_of[key] = ev["payload"]["labels"]
        elif kind == "response_received":
            last_reply[key] = ev["payload"]["text"]
        elif kind == "round_skipped":
            rounds[ev["round_index"]] = {"skipped": True, "questioner": header["questioner_order"][ev["round_index"]]}
        elif kind == "artifact_validated" and ev["phase"] == 3:
            r = rounds.setdefault(ev["round_index"], {"questioner": header["questioner_order"][ev["round_index"]],
                                                      "cells": {}, "skipped": False})
            obj = _last_json(last_reply[key])
            labels = labels_of[key]
            cells = {}
            if scheme == "relative_rank":
                order = [x.strip().upper() for x in obj["ordering"]]
                m = len(order)
                for pos, label in enumerate(order, start=1):
                    cells[labels[label]] = Fraction(100) if m == 1 else Fraction(100 * (m - pos), m - 1)
            else:
                for label, row in obj["scores"].items():
                    wm = sum(weights[d] * _frac(row[d]) for d in DIMS) / sum(weights.values())
                    cells[labels[label.strip().upper()]] = Fraction(math.floor(wm + Fraction(1, 2)))
            r["cells"][ev["actor"]] = cells
        elif kind == "artifact_validated" and ev["phase"] == 1:
            rounds.setdefault(ev["round_index"], {"questioner": ev["actor"], "cells": {}, "skipped": False})
    for r in rounds.values():
        if r["skipped"]:
            r["scores"] = {}
            continue
        cols = defaultdict(list)
        for e, row in r["cells"].items():
            for a, v in row.items():
                cols[a].append(v)
        r["scores"] = {a: sum(v) / len(v) for a, v in cols.items()}
    return header, [rounds[i] for i in sorted(rounds)]


def oracle_leaderboard(rounds: list[dict], models) -> dict[str, Fraction | None]:
    per = defaultdict(list)
    for r in rounds:
        for a, s in r["scores"].items():
            per[a].append(s)
    return {m: (sum(per[m]) / len(per[m]) if per[m] else None) for m in models}


def oracle_order(aggregates: dict) -> list[str]:
    scored = [m for m, v in aggregates.items() if v is not None]
    return sorted(scored, key=lambda m: (-aggregates[m], m))


def oracle_top_k(rounds: list[dict], k: int) -> tuple[Fraction | None, Fraction | None]:
    """(mean of per-round values, pooled mean over all pairs); rounds with too little data skipped."""
    round_vals, pooled = [], []
    for r in rounds:
        if r["skipped"] or len(r["cells"]) < 2 or any(len(row) < k for row in r["cells"].values()):
            continue
        tops = []
        for e in sorted(r["cells"]):
            row = r["cells"][e]
            tops.append(set(sorted(row, key=lambda a: (-row[a], a))[:k]))
        pairs = [Fraction(len(a & b), k) for a, b in combinations(tops, 2)]
        pooled += pairs
        round_vals.append(sum(pairs) / len(pairs))
    mean = lambda xs: sum(xs) / len(xs) if xs else None  # noqa: E731
    return mean(round_vals), mean(pooled)


def oracle_stddevs(rounds: list[dict]) -> list[float]:
    out = []
    for r in rounds:
        cols = defaultdict(list)
        for row in r.get("cells", {}).values():
            for a, v in row.items():
                cols[a].append(v)
        for a in sorted(cols):
            v = cols[a]
            if len(v) < 2:
                continue
            mu = sum(v) / len(v)
            out.append(math.sqrt(sum((x - mu) ** 2 for x in v) / len(v)))
    return out


def oracle_dual_axis(rounds: list[dict], models) -> dict[str, tuple]:
    board = oracle_leaderboard(rounds, models)
    diff = defaultdict(list)
    for r in rounds:
        if r["scores"]:
            diff[r["questioner"]].append(sum(r["scores"].values()) / len(r["scores"]))
    return {m: (board[m], (sum(diff[m]) / len(diff[m]) if diff[m] else None)) for m in models}


# -- acceptance summary -----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


class criterion:
    """Context manager recording one PASS/FAIL line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        why = self.detail if exc_type is None else f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        line = f"[{status}] criterion {self.number}: {self.title}" + (f" ({why})" if why else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return False
