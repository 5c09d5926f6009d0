"""Command line: ``crowdeval validate|run|report|replay``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import yaml

from .audit import audit_log
from .backends import make_backend
from .config import ENV_PREFIX, load_config, parse_config, write_resolved_config
from .errors import (
    BackendError,
    BackendUnreachable,
    ConfigInvalid,
    ConfigMismatch,
    CorruptLog,
    CrowdEvalError,
    IntegrityError,
    RunAborted,
)
from .persistence import read_events, replay
from .protocol import Orchestrator
from .report import build_report

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_UNREACHABLE, EXIT_MISMATCH = 0, 1, 2, 3, 4


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def cmd_validate(args) -> int:
    path = Path(args.config)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        _err(f"error: cannot read {path}: {exc}")
        return EXIT_INVALID
    cfg, errors, warnings = parse_config(raw, base_dir=path.parent)
    for w in warnings:
        print(f"warning: {w}")
    for e in errors:
        print(f"error: {e}")
    if cfg is None:
        return EXIT_INVALID
    if args.probe:
        for bid, bc in sorted(cfg.backends.items()):
            backend = make_backend(bc)
            try:
                backend.probe()
                print(f"probe {bid}: ok")
            except BackendError as exc:
                print(f"error: probe {bid}: {exc}")
                return EXIT_UNREACHABLE
            finally:
                backend.close()
    print(f"config ok: {cfg.n} models, domain {cfg.domain}, {cfg.num_runs} run(s), digest {cfg.digest()[:12]}")
    return EXIT_OK


def _adopt_logged_seed(cfg):
    """A generated seed lives only in the logs; reuse it so a resume matches the digest."""
    for i in range(cfg.num_runs):
        p = cfg.log_path(i)
        if p.exists() and p.stat().st_size:
            head = read_events(p, allow_torn_tail=True)
            if head:
                return replace(cfg, seed=head[0].payload["seed"], seed_generated=False)
    return cfg


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigInvalid as exc:
        for e in exc.errors:
            _err(f"error: {e}")
        return EXIT_INVALID
    if args.runs is not None:
        if args.runs < 1:
            _err("error: --runs must be >= 1")
            return EXIT_INVALID
        cfg = replace(cfg, num_runs=args.runs)
    if args.mock:
        cfg = cfg.with_mock()
    if args.resume and cfg.seed_generated:
        cfg = _adopt_logged_seed(cfg)

    def observer(name, info):
        if name == "leaderboard_updated" and not args.quiet:
            print(info["leaderboard"].as_table(f"\nrun {info['run_index']} after round {info['round_index']}:"),
                  flush=True)

    orch = Orchestrator(cfg, observer=observer, probe=not args.no_probe)
    write_resolved_config(cfg, cfg.experiment_dir() / "config.resolved.yaml")
    try:
        result = orch.run(resume=args.resume)
    except BackendUnreachable as exc:
        _err(f"error: {exc}")
        return EXIT_UNREACHABLE
    except ConfigMismatch as exc:
        _err(f"error: {exc}")
        return EXIT_MISMATCH
    except (RunAborted, CorruptLog, IntegrityError) as exc:
        _err(f"error: run aborted: {exc} (logs kept under {cfg.experiment_dir()})")
        return EXIT_FAILED
    finally:
        orch.close()
    print(result.merged.as_table(f"\nfinal leaderboard ({cfg.num_runs} run(s)):"))
    if not args.no_report:
        out = cfg.experiment_dir() / "report"
        build_report(result.log_paths, out)
        print(f"report written to {out}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out) if args.out else Path(args.logs[0]).parent / "report"
    try:
        rep = build_report(args.logs, out, k_values=args.k or None)
    except (CorruptLog, IntegrityError, CrowdEvalError, OSError) as exc:
        _err(f"error: {exc}")
        return EXIT_FAILED
    print(rep["merged"].as_table(f"merged leaderboard over {len(args.logs)} log(s):"))
    for k, tk in sorted(rep["consistency"]["top_k"].items()):
        v = tk["per_round_mean"]
        print(f"top-{k} consistency: {'n/a' if v is None else f'{v:.4f}'} (pooled {tk['pooled']})")
    d = rep["consistency"]["dispersion"]
    if d["count"]:
        print(f"per-answer stddev: min {d['min']:.2f}, max {d['max']:.2f}, mean {d['mean']:.2f}")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        result = replay(args.log)
    except (CorruptLog, IntegrityError) as exc:
        _err(f"error: {type(exc).__name__}: {exc}")
        return EXIT_FAILED
    st = result.state
    status = "complete" if st.finished else "partial"
    print(f"{args.log}: {len(result.events)} events, {len(st.completed_rounds)} round(s) persisted, run {status}")
    print(st.interim_leaderboard.as_table())
    if args.audit:
        rep = audit_log(args.log)
        print(f"audit: {rep.answer_records} answers, {rep.evaluation_records} evaluation records, "
              f"{rep.model_calls} model calls, {len(rep.violations)} violation(s)")
        for v in rep.violations:
            print(f"  violation: {v}")
        if not rep.ok:
            return EXIT_FAILED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crowdeval", description="Peer-evaluation tournaments between LLMs.",
                                epilog=f"Config scalars may be overridden with {ENV_PREFIX}<KEY> environment variables.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a config file")
    v.add_argument("config")
    v.add_argument("--probe", action="store_true", help="send a 1-token ping to every backend")
    v.set_defaults(func=cmd_validate)

    r = sub.add_parser("run", help="run an experiment")
    r.add_argument("config")
    r.add_argument("--resume", action="store_true", help="continue from existing logs")
    r.add_argument("--mock", action="store_true", help="replace every backend with the built-in mock")
    r.add_argument("--runs", type=int, help="override num_runs")
    r.add_argument("--no-probe", action="store_true", help="skip the startup backend probe")
    r.add_argument("--no-report", action="store_true")
    r.add_argument("-q", "--quiet", action="store_true", help="no live leaderboard tables")
    r.set_defaults(func=cmd_run)

    rep = sub.add_parser("report", help="build the report bundle from one or more run logs")
    rep.add_argument("logs", nargs="+")
    rep.add_argument("--out", help="output directory (default: <log dir>/report)")
    rep.add_argument("-k", type=int, action="append", help="top-k value (repeatable)")
    rep.set_defaults(func=cmd_report)

    rp = sub.add_parser("replay", help="rebuild and verify run state from a log")
    rp.add_argument("log")
    rp.add_argument("--audit", action="store_true", help="also check protocol invariants")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
