import socket

import pytest
import yaml

from crowdeval.cli import main


def write_config(tmp_path, n=3, **over):
    raw = {
        "experiment": "cli",
        "domain": "math",
        "num_runs": 1,
        "seed": 3,
        "output_dir": "out",
        "models": [{"model_id": f"M{i}", "backend": "mock"} for i in range(1, n + 1)],
        "backends": {"mock": {"kind": "mock", "mock_script": "builtin"}},
        "sampling": {"answer": {"temperature": 0.5}},
    }
    raw.update(over)
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(raw))
    return path


def free_port():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    return port


def test_validate_rejects_small_pool(tmp_path, capsys):
    assert main(["validate", str(write_config(tmp_path, n=2))]) == 2
    assert "pool size n >= 3 required (got 2)" in capsys.readouterr().out


def test_validate_rejects_k_out_of_range(tmp_path, capsys):
    assert main(["validate", str(write_config(tmp_path, n=5, k_values=[4]))]) == 2
    assert "k=4 out of range; need 1 <= k <= n-2 = 3" in capsys.readouterr().out


def test_validate_ok(tmp_path, capsys):
    assert main(["validate", str(write_config(tmp_path))]) == 0
    assert "config ok: 3 models" in capsys.readouterr().out


def test_validate_warns_on_missing_sampling(tmp_path, capsys):
    assert main(["validate", str(write_config(tmp_path, sampling=None))]) == 0
    assert "warning: sampling parameters not set" in capsys.readouterr().out


def test_run_mock_end_to_end(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg)]) == 0
    out = capsys.readouterr().out
    assert out.count("after round") == 3
    assert "final leaderboard" in out
    exp = tmp_path / "out" / "cli"
    assert (exp / "run_0.jsonl").exists()
    assert (exp / "config.resolved.yaml").exists()
    assert (exp / "report" / "leaderboard.csv").exists()
    assert main(["replay", str(exp / "run_0.jsonl"), "--audit"]) == 0
    assert "0 violation(s)" in capsys.readouterr().out
    assert main(["report", str(exp / "run_0.jsonl"), "--out", str(tmp_path / "rep"), "-k", "1"]) == 0
    assert "top-1 consistency" in capsys.readouterr().out


def test_unreachable_live_backend(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("DUMMY_KEY", "x")
    backends = {"live": {"kind": "live", "endpoint_url": f"http://127.0.0.1:{free_port()}/v1",
                         "model_name": "m", "api_key_env": "DUMMY_KEY", "timeout": 2}}
    models = [{"model_id": f"M{i}", "backend": "live"} for i in range(1, 4)]
    cfg = write_config(tmp_path, backends=backends, models=models)
    assert main(["run", str(cfg), "-q"]) == 3
    assert "failed startup probe" in capsys.readouterr().err
    assert not list((tmp_path / "out").rglob("*.jsonl"))
    assert main(["validate", str(cfg), "--probe"]) == 3


def test_run_mock_flag_replaces_live_backends(tmp_path):
    backends = {"live": {"kind": "live", "endpoint_url": "http://127.0.0.1:9/v1",
                         "model_name": "m", "api_key_env": "UNSET_KEY"}}
    models = [{"model_id": f"M{i}", "backend": "live"} for i in range(1, 4)]
    cfg = write_config(tmp_path, backends=backends, models=models)
    assert main(["run", str(cfg), "--mock", "-q", "--no-report"]) == 0


def test_existing_log_needs_resume(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg), "-q", "--no-report"]) == 0
    assert main(["run", str(cfg), "-q", "--no-report"]) == 1
    assert "--resume" in capsys.readouterr().err
    assert main(["run", str(cfg), "-q", "--no-report", "--resume"]) == 0


def test_resume_with_changed_config(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg), "-q", "--no-report"]) == 0
    write_config(tmp_path, seed=4)
    assert main(["run", str(cfg), "-q", "--resume"]) == 4
    assert "config digest" in capsys.readouterr().err


def test_resume_with_generated_seed(tmp_path):
    cfg = write_config(tmp_path, seed=None)
    assert main(["run", str(cfg), "-q", "--no-report"]) == 0
    assert main(["run", str(cfg), "-q", "--no-report", "--resume"]) == 0


def test_env_override(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("CROWDEVAL_NUM_RUNS", "2")
    monkeypatch.setenv("CROWDEVAL_EXPERIMENT", "env_named")
    assert main(["run", str(cfg), "-q", "--no-report"]) == 0
    assert sorted(p.name for p in (tmp_path / "out" / "env_named").glob("*.jsonl")) == ["run_0.jsonl", "run_1.jsonl"]


def test_runs_flag(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", str(cfg), "-q", "--no-report", "--runs", "2"]) == 0
    assert (tmp_path / "out" / "cli" / "run_1.jsonl").exists()


def test_replay_corrupt_log(tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{oops\n")
    assert main(["replay", str(bad)]) == 1
    assert "CorruptLog" in capsys.readouterr().err


def test_programming_domain_via_cli(tmp_path):
    cfg = write_config(tmp_path, domain="programming", n=4)
    assert main(["run", str(cfg), "-q"]) == 0
    assert (tmp_path / "out" / "cli" / "report" / "run_0" / "scores_round_3.csv").exists()


def test_missing_config_file(tmp_path):
    with pytest.raises(SystemExit):
        main([])
    assert main(["validate", str(tmp_path / "nope.yaml")]) == 2
