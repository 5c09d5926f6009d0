"""Run configuration: YAML schema, validation, ``CROWDEVAL_*`` overrides and digest."""

from __future__ import annotations

import hashlib
import json
import os
import random
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import yaml

from .backends import BUILTIN_SCRIPT, BackendConfig, RetryPolicy
from .domains import DomainSpec, load_domain
from .errors import ConfigInvalid, CrowdEvalError
from .records import ModelSpec

CONFIG_SCHEMA_VERSION = 1
ENV_PREFIX = "CROWDEVAL_"

# Sampling defaults are not taken from any published setting; they are flagged as
# such in the run_started event.
DEFAULT_SAMPLING = {
    "question": {"temperature": 1.0, "max_tokens": 4096},
    "answer": {"temperature": 0.7, "max_tokens": 4096},
    "evaluation": {"temperature": 0.2, "max_tokens": 2048},
}

# top-level scalars that CROWDEVAL_<KEY> may override, with their coercions
_SCALARS = {
    "experiment": str,
    "domain": str,
    "num_runs": int,
    "seed": int,
    "output_dir": str,
    "concurrency": int,
    "shuffle_questioners": "bool",
    "inject_interim_leaderboard": "bool",
    "fsync": "bool",
}


@dataclass(frozen=True)
class RunConfig:
    experiment: str
    models: tuple[ModelSpec, ...]
    backends: dict[str, BackendConfig]
    domain: str = "math"
    num_runs: int = 3
    retry: RetryPolicy = RetryPolicy()
    sampling: dict[str, dict] = field(default_factory=lambda: json.loads(json.dumps(DEFAULT_SAMPLING)))
    k_values: tuple[int, ...] = ()
    seed: int | None = None
    output_dir: str = "runs"
    concurrency: int = 4
    shuffle_questioners: bool = False
    inject_interim_leaderboard: bool = False
    rubric_weights: dict[str, float] | None = None
    fsync: bool = False
    seed_generated: bool = False

    @property
    def n(self) -> int:
        return len(self.models)

    @property
    def model_ids(self) -> list[str]:
        return [m.model_id for m in self.models]

    @property
    def effective_k_values(self) -> tuple[int, ...]:
        return self.k_values or (max(1, self.n // 2),)

    @property
    def all_mock(self) -> bool:
        return all(self.backends[m.backend_ref].kind == "mock" for m in self.models)

    def experiment_dir(self) -> Path:
        return Path(self.output_dir) / self.experiment

    def log_path(self, run_index: int) -> Path:
        return self.experiment_dir() / f"run_{run_index}.jsonl"

    def load_domain(self) -> DomainSpec:
        return load_domain(self.domain).with_weights(self.rubric_weights)

    def with_mock(self) -> "RunConfig":
        """Same experiment with every backend swapped for the built-in scripted mock."""
        mocked = {bid: BackendConfig(bid, "mock", mock_script_path=BUILTIN_SCRIPT, timeout=b.timeout)
                  for bid, b in self.backends.items()}
        return replace(self, backends=mocked)

    def to_dict(self) -> dict:
        return {
            "schema_version": CONFIG_SCHEMA_VERSION,
            "experiment": self.experiment,
            "domain": self.domain,
            "num_runs": self.num_runs,
            "seed": self.seed,
            "output_dir": self.output_dir,
            "concurrency": self.concurrency,
            "shuffle_questioners": self.shuffle_questioners,
            "inject_interim_leaderboard": self.inject_interim_leaderboard,
            "fsync": self.fsync,
            "k_values": list(self.k_values),
            "retry": {"max_attempts": self.retry.max_attempts, "backoff_base": self.retry.backoff_base,
                      "backoff_cap": self.retry.backoff_cap},
            "sampling": self.sampling,
            "rubric_weights": self.rubric_weights,
            "models": [{"model_id": m.model_id, "display_name": m.display_name, "backend": m.backend_ref}
                       for m in self.models],
            "backends": {bid: {k: v for k, v in b.__dict__.items() if k != "backend_id" and v is not None}
                         for bid, b in sorted(self.backends.items())},
        }

    def digest(self) -> str:
        """Hash of everything that shapes the event log (not where it is written or how fast)."""
        d = self.to_dict()
        for k in ("output_dir", "num_runs", "concurrency", "fsync", "k_values"):
            d.pop(k)
        d["domain_spec"] = self.load_domain().to_dict()
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _coerce(kind, raw: str):
    if kind == "bool":
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw)


def apply_env_overrides(raw: dict, env: Mapping[str, str]) -> tuple[dict, list[str]]:
    raw = dict(raw)
    errors = []
    for key, kind in _SCALARS.items():
        name = ENV_PREFIX + key.upper()
        if name in env:
            try:
                raw[key] = _coerce(kind, env[name])
            except ValueError as exc:
                errors.append(f"{name}: {exc}")
    return raw, errors


def _resolve(base: Path, p: str | None) -> str | None:
    if p is None or p == BUILTIN_SCRIPT:
        return p
    path = Path(p)
    return str(path if path.is_absolute() else (base / path))


def parse_config(raw: dict, *, base_dir: str | Path = ".", env: Mapping[str, str] | None = None
                 ) -> tuple[RunConfig | None, list[str], list[str]]:
    """Returns (config or None, errors, warnings)."""
    base = Path(base_dir)
    errors: list[str] = []
    warnings: list[str] = []
    if not isinstance(raw, dict):
        return None, ["config must be a mapping"], []
    raw, env_errors = apply_env_overrides(raw, os.environ if env is None else env)
    errors += env_errors
    version = raw.get("schema_version", CONFIG_SCHEMA_VERSION)
    if version != CONFIG_SCHEMA_VERSION:
        errors.append(f"schema_version {version!r} not supported (expected {CONFIG_SCHEMA_VERSION})")

    backends: dict[str, BackendConfig] = {}
    for bid, b in (raw.get("backends") or {}).items():
        if not isinstance(b, dict):
            errors.append(f"backend {bid}: must be a mapping")
            continue
        try:
            bc = BackendConfig(
                backend_id=str(bid),
                kind=b.get("kind", "live"),
                endpoint_url=b.get("endpoint_url"),
                model_name=b.get("model_name"),
                api_key_env=b.get("api_key_env"),
                timeout=float(b.get("timeout", 120.0)),
                max_tokens=b.get("max_tokens"),
                temperature=b.get("temperature"),
                mock_script_path=_resolve(base, b.get("mock_script", b.get("mock_script_path"))),
                max_concurrency=int(b.get("max_concurrency", 4)),
            )
        except (TypeError, ValueError) as exc:
            errors.append(f"backend {bid}: {exc}")
            continue
        errors += bc.problems()
        if bc.kind == "mock" and bc.mock_script_path not in (None, BUILTIN_SCRIPT) \
                and not Path(bc.mock_script_path).is_file():
            errors.append(f"backend {bid}: mock script {bc.mock_script_path} not found")
        backends[str(bid)] = bc

    models = []
    seen = set()
    for i, m in enumerate(raw.get("models") or []):
        if not isinstance(m, dict) or "model_id" not in m:
            errors.append(f"models[{i}]: needs a model_id")
            continue
        mid = str(m["model_id"])
        if mid in seen:
            errors.append(f"models[{i}]: duplicate model_id {mid!r}")
        seen.add(mid)
        ref = str(m.get("backend", m.get("backend_ref", "")))
        if ref not in backends:
            errors.append(f"model {mid}: unknown backend {ref!r}")
        models.append(ModelSpec(mid, str(m.get("display_name", mid)), ref))
    n = len(models)
    if n < 3:
        errors.append(f"pool size n >= 3 required (got {n})")

    domain = str(raw.get("domain", "math"))
    if domain not in ("math", "programming"):
        domain = _resolve(base, domain)
    weights = raw.get("rubric_weights")
    try:
        load_domain(domain).with_weights(weights)
    except (CrowdEvalError, ValueError, OSError) as exc:
        errors.append(f"domain {domain!r}: {exc}")

    k_values = tuple(int(k) for k in (raw.get("k_values") or ()))
    for k in k_values:
        if not 1 <= k <= n - 2:
            errors.append(f"k_values: k={k} out of range; need 1 <= k <= n-2 = {n - 2}")

    num_runs = raw.get("num_runs", 3)
    if not isinstance(num_runs, int) or num_runs < 1:
        errors.append("num_runs must be a positive integer")
    concurrency = raw.get("concurrency", 4)
    if not isinstance(concurrency, int) or concurrency < 1:
        errors.append("concurrency must be a positive integer")

    r = raw.get("retry") or {}
    retry = RetryPolicy(int(r.get("max_attempts", 3)), float(r.get("backoff_base", 2.0)), float(r.get("backoff_cap", 60.0)))
    if retry.max_attempts < 1:
        errors.append("retry.max_attempts must be >= 1")

    sampling = json.loads(json.dumps(DEFAULT_SAMPLING))
    for phase, params in (raw.get("sampling") or {}).items():
        if phase not in sampling:
            errors.append(f"sampling: unknown phase {phase!r} (expected question/answer/evaluation)")
            continue
        sampling[phase].update(params or {})
    if not raw.get("sampling"):
        warnings.append("sampling parameters not set; using unsourced defaults")

    seed = raw.get("seed")
    seed_generated = False
    if seed is None:
        seed = random.SystemRandom().randrange(2**31)
        seed_generated = True
        warnings.append(f"no seed given; generated seed {seed}")

    experiment = str(raw.get("experiment") or raw.get("name") or "")
    if not experiment:
        errors.append("experiment name is required")

    if errors:
        return None, errors, warnings
    cfg = RunConfig(
        experiment=experiment,
        models=tuple(models),
        backends=backends,
        domain=domain,
        num_runs=num_runs,
        retry=retry,
        sampling=sampling,
        k_values=k_values,
        seed=int(seed),
        output_dir=str(_resolve(base, str(raw.get("output_dir", "runs")))),
        concurrency=concurrency,
        shuffle_questioners=bool(raw.get("shuffle_questioners", False)),
        inject_interim_leaderboard=bool(raw.get("inject_interim_leaderboard", False)),
        rubric_weights=weights,
        fsync=bool(raw.get("fsync", False)),
        seed_generated=seed_generated,
    )
    return cfg, errors, warnings


def load_config(path: str | Path, env: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigInvalid([f"cannot read {path}: {exc}"]) from exc
    cfg, errors, _ = parse_config(raw, base_dir=path.parent, env=env)
    if cfg is None:
        raise ConfigInvalid(errors)
    return cfg


def write_resolved_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")
