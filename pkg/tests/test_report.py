import csv
import json
import math
import xml.etree.ElementTree as ET

import pytest

from crowdeval.protocol import run
from crowdeval.report import build_report
from crowdeval.report.svg import radar_svg, scatter_svg

from support import (
    mock_config,
    oracle_dual_axis,
    oracle_leaderboard,
    oracle_order,
    oracle_rounds,
    oracle_stddevs,
    oracle_top_k,
)

EXPECTED_TOP = {"leaderboard.csv", "leaderboard.json", "leaderboard.txt", "consistency.json", "dual_axis.json",
                "radar.svg", "dual_axis.svg", "provenance.json"}


@pytest.fixture
def two_runs(tmp_path):
    cfg = mock_config(tmp_path, n=5, num_runs=2, domain="programming", seed=11)
    return cfg, run(cfg)


def test_bundle_files(two_runs, tmp_path):
    cfg, result = two_runs
    out = tmp_path / "report"
    rep = build_report(result.log_paths, out)
    assert EXPECTED_TOP <= set(rep["files"])
    for i in range(2):
        assert (out / f"run_{i}" / "leaderboard.csv").exists()
        assert (out / f"run_{i}" / "radar.svg").exists()
        assert len(list((out / f"run_{i}").glob("scores_round_*.csv"))) == 5
    for svg in out.rglob("*.svg"):
        ET.fromstring(svg.read_text())  # well-formed XML


def test_report_matches_oracle(two_runs, tmp_path):
    cfg, result = two_runs
    rep = build_report(result.log_paths, tmp_path / "r")
    all_rounds, per_run = [], []
    for p in result.log_paths:
        _, rounds = oracle_rounds(p)
        all_rounds += rounds
        per_run.append(oracle_leaderboard(rounds, cfg.model_ids))
    merged = {m: sum(b[m] for b in per_run) / len(per_run) for m in cfg.model_ids}
    assert rep["merged"].order() == oracle_order(merged)
    for m in cfg.model_ids:
        assert math.isclose(rep["merged"].get(m).aggregate, float(merged[m]), abs_tol=1e-9)
    k = 2
    per_round, pooled = oracle_top_k(all_rounds, k)
    tk = rep["consistency"]["top_k"][str(k)]
    assert tk["per_round_mean"] == float(per_round)
    assert tk["pooled"] == float(pooled)
    got = sorted(x["stddev"] for x in rep["consistency"]["per_answer_stddev"])
    assert len(got) == len(oracle_stddevs(all_rounds))
    for a, b in zip(got, sorted(oracle_stddevs(all_rounds))):
        assert math.isclose(a, b, abs_tol=1e-9)
    for m, (solve, diff) in oracle_dual_axis(all_rounds, cfg.model_ids).items():
        assert math.isclose(rep["dual_axis"][m]["difficulty"], float(diff), abs_tol=1e-9)


def test_report_is_byte_identical(two_runs, tmp_path):
    _, result = two_runs
    build_report(result.log_paths, tmp_path / "a")
    build_report(result.log_paths, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for f in files_a:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_leaderboard_csv_contents(two_runs, tmp_path):
    _, result = two_runs
    rep = build_report(result.log_paths, tmp_path / "r")
    with open(tmp_path / "r" / "leaderboard.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["model_id"] for r in rows] == rep["merged"].order()
    assert [int(r["rank"]) for r in rows] == sorted(int(r["rank"]) for r in rows)


def test_score_matrix_csv(two_runs, tmp_path):
    cfg, result = two_runs
    build_report(result.log_paths, tmp_path / "r")
    with open(tmp_path / "r" / "run_0" / "scores_round_0.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["evaluator", "M2", "M3", "M4", "M5"]
    assert [r[0] for r in rows[1:]] == cfg.model_ids + ["round_score"]
    m2_row = rows[2]
    assert m2_row[1] == ""  # M2 never scores its own answer


def test_skipped_round_footnote(tmp_path):
    script = {"rules": [{"match": {"phase": 1, "model": "M2"}, "error": 401}]}
    cfg = mock_config(tmp_path, n=4, script=script)
    result = run(cfg)
    build_report(result.log_paths, tmp_path / "r")
    svg = (tmp_path / "r" / "radar.svg").read_text()
    assert "Skipped rounds omitted: r0.q1 (M2)" in svg
    assert not (tmp_path / "r" / "run_0" / "scores_round_1.csv").exists()


def test_provenance_links_to_log(two_runs, tmp_path):
    import hashlib
    _, result = two_runs
    build_report(result.log_paths, tmp_path / "r")
    prov = json.loads((tmp_path / "r" / "provenance.json").read_text())
    assert [r["log_sha256"] for r in prov["runs"]] == [
        hashlib.sha256(p.read_bytes()).hexdigest() for p in result.log_paths]
    events = [json.loads(line) for line in result.log_paths[0].read_text().splitlines()]
    for ref in prov["leaderboard"]["M1"]:
        if ref["run_index"] == 0:
            ev = events[ref["round_scored_seq"] - 1]
            assert ev["event_kind"] == "round_scored" and "M1" in ev["payload"]["scores"]


def test_consistency_reference_is_metadata(two_runs, tmp_path):
    _, result = two_runs
    rep = build_report(result.log_paths, tmp_path / "r")
    ref = rep["consistency"]["reference"]
    assert ref["top_k"]["value"] == 0.7485
    assert "definition" in rep["consistency"]


def test_radar_svg_absent_values():
    svg = radar_svg(["q1", "q2", "q3"], {"M1": [None, 50.0, 100.0], "M2": [80.0, None, 20.0]},
                    title="t", footnotes=["note <1>"])
    root = ET.fromstring(svg)
    assert root.tag.endswith("svg")
    assert "note &lt;1&gt;" in svg
    assert svg.count('fill="none"') >= 2


def test_scatter_svg_handles_missing():
    svg = scatter_svg({"M1": (50.0, 60.0), "M2": (70.0, None)}, x_label="x", y_label="y", title="t")
    ET.fromstring(svg)
    assert "M1" in svg
