"""Deterministic scripted backend for tests and dry runs.

A mock script is a YAML mapping::

    seed: 7
    default: {generator: auto}
    rules:
      - match: {phase: 2, model: M2, attempt: [1, 2]}
        error: empty
      - match: {phase: 3}
        generator: rank
        preference: [M3, M1, M2]

The first rule whose ``match`` keys all agree with the request wins.  Match keys:
``phase``, ``role``, ``model``, ``run_index``, ``round_index``, ``attempt`` (scalar or
list) and ``contains`` (substring of the last user message).  A rule with ``fail_rate``
only fires when a hash of the request falls under that rate, so "random" failures are
still reproducible.

A rule produces one of: ``response`` (literal text), ``error`` (``timeout``,
``transport``, ``empty`` or an HTTP status int) or ``generator``:

* ``question`` - a well-formed question with every section the prompt asks for
* ``answer``   - an answer tagged with its author
* ``rank`` / ``rubric`` - a verdict over the labelled answers in the prompt, ordered by
  ``preference`` (author ids, best first) or pseudo-randomly when none is given
* ``auto``     - whichever of the above fits the request's phase
* ``echo``     - the prompt itself
"""

from __future__ import annotations

import hashlib
import json
import random
import re
from pathlib import Path

import yaml

from ..errors import EmptyResponse, ProviderError, Timeout, TransportError
from .base import Backend, BackendConfig, CallParams, Completion

BUILTIN_SCRIPT = "builtin"
DEFAULT_SCRIPT = {"seed": 0, "rules": [], "default": {"generator": "auto"}}

_SECTION_REQUEST = re.compile(r"^(==[^\n]*==)[ \t]*\n<content>", re.MULTILINE)
_ANSWER_BLOCK = re.compile(r"^=== ANSWER (\S+) ===\n(.*?)\n=== END ANSWER \1 ===", re.MULTILINE | re.DOTALL)
_AUTHOR = re.compile(r"\[author:([^\]]+)\]")
_DIMS = ("correctness", "efficiency", "readability", "structure", "memory")


def load_script(path: str | Path | None) -> dict:
    if path is None or str(path) == BUILTIN_SCRIPT:
        return dict(DEFAULT_SCRIPT)
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if isinstance(data, str):
        data = {"default": {"response": data}}
    data.setdefault("rules", [])
    data.setdefault("default", {"generator": "auto"})
    return data


def _digest(*parts) -> str:
    return hashlib.sha256("|".join(map(str, parts)).encode()).hexdigest()


class MockBackend(Backend):
    def __init__(self, config: BackendConfig, script: dict | None = None):
        super().__init__(config)
        self.script = script if script is not None else load_script(config.mock_script_path)
        self.seed = self.script.get("seed", 0)

    # -- matching ---------------------------------------------------------

    @staticmethod
    def _agrees(want, have) -> bool:
        if isinstance(want, list):
            return have in want
        return want == have

    def _roll(self, params: CallParams, prompt: str, salt) -> float:
        return random.Random(_digest(self.seed, salt, params.model_id, params.phase, params.run_index,
                                     params.round_index, params.attempt, _digest(prompt))).random()

    def _select(self, params: CallParams, prompt: str) -> dict:
        have = {
            "phase": params.phase,
            "role": params.role,
            "model": params.model_id,
            "run_index": params.run_index,
            "round_index": params.round_index,
            "attempt": params.attempt,
        }
        for i, rule in enumerate(self.script.get("rules", [])):
            match = rule.get("match", {}) or {}
            ok = True
            for key, want in match.items():
                if key == "contains":
                    ok = want in prompt
                elif key in have:
                    ok = self._agrees(want, have[key])
                else:
                    raise ValueError(f"mock rule {i}: unknown match key {key!r}")
                if not ok:
                    break
            if ok and "fail_rate" in rule and self._roll(params, prompt, f"rule{i}") >= float(rule["fail_rate"]):
                ok = False
            if ok:
                return rule
        default = self.script.get("default", {"generator": "auto"})
        return default if isinstance(default, dict) else {"response": str(default)}

    # -- responses --------------------------------------------------------

    def _complete(self, messages: list[dict], params: CallParams) -> Completion:
        prompt = messages[-1]["content"] if messages else ""
        rule = self._select(params, prompt)
        latency = float(rule.get("latency", 0.0))
        if "error" in rule:
            err = rule["error"]
            if isinstance(err, int) or (isinstance(err, str) and err.isdigit()):
                raise ProviderError(int(err), f"scripted HTTP {err}", latency=latency)
            cls = {"timeout": Timeout, "transport": TransportError, "empty": EmptyResponse}.get(err)
            if cls is None:
                raise ValueError(f"unknown scripted error {err!r}")
            raise cls(f"scripted {err}", latency=latency)
        if "response" in rule:
            text = str(rule["response"])
        else:
            text = self._generate(rule, params, prompt)
        if not text.strip():
            raise EmptyResponse("scripted empty response", latency=latency)
        return Completion(text, latency, rule.get("token_usage"))

    def _generate(self, rule: dict, params: CallParams, prompt: str) -> str:
        gen = rule.get("generator", "auto")
        if gen == "auto":
            if params.role == "probe":
                return "PONG"
            gen = {1: "question", 2: "answer"}.get(params.phase)
            if gen is None:
                gen = "rubric" if '"scores"' in prompt else "rank"
        if gen == "echo":
            return prompt
        if gen == "question":
            return self._question(params, prompt)
        if gen == "answer":
            return self._answer(params, prompt)
        if gen in ("rank", "rubric"):
            return self._verdict(gen, rule, params, prompt)
        raise ValueError(f"unknown mock generator {gen!r}")

    def _question(self, params: CallParams, prompt: str) -> str:
        tag = _digest(self.seed, params.model_id, params.run_index, params.round_index)[:12]
        fences = _SECTION_REQUEST.findall(prompt) or ["== PROBLEM STATEMENT ==", "== REFERENCE SOLUTION =="]
        blocks = []
        for fence in fences:
            name = fence.strip("= ").lower()
            if "reference" in name or "solution" in name:
                body = f"REFSOL-{tag}: the intended solution by {params.model_id}."
            else:
                body = f"{name.capitalize()} Q-{tag} (set by {params.model_id})."
            blocks.append(f"{fence}\n{body}")
        return "\n".join(blocks) + "\n"

    def _answer(self, params: CallParams, prompt: str) -> str:
        tag = _digest(self.seed, params.model_id, _digest(prompt))[:12]
        return f"[author:{params.model_id}] Solution {tag} by {params.model_id}."

    def _verdict(self, kind: str, rule: dict, params: CallParams, prompt: str) -> str:
        blocks = _ANSWER_BLOCK.findall(prompt)
        authors = {}
        for label, body in blocks:
            m = _AUTHOR.search(body)
            authors[label] = m.group(1) if m else label
        rng = random.Random(_digest(self.seed, "verdict", params.model_id, params.run_index,
                                    params.round_index, _digest(prompt)))
        labels = [label for label, _ in blocks]
        pref = rule.get("preference")
        if pref:
            pos = {m: i for i, m in enumerate(pref)}
            ordered = sorted(labels, key=lambda lab: (pos.get(authors[lab], len(pos)), authors[lab]))
        else:
            ordered = labels[:]
            rng.shuffle(ordered)
        if kind == "rank":
            body = json.dumps({"ordering": ordered, "rationale": f"mock verdict by {params.model_id}"})
            return f"Having compared the solutions, here is my ranking.\n\n```json\n{body}\n```\n"
        scores = {}
        fixed = rule.get("scores")  # author -> total
        for i, label in enumerate(ordered):
            if fixed and authors[label] in fixed:
                v = fixed[authors[label]]
                row = {d: v for d in _DIMS}
            elif pref:
                v = max(0, 95 - 10 * i)
                row = {d: v for d in _DIMS}
            else:
                row = {d: rng.randint(0, 100) for d in _DIMS}
            scores[label] = row
        body = json.dumps({"scores": scores, "rationale": f"mock rubric by {params.model_id}"})
        return f"Scores follow.\n\n```json\n{body}\n```\n"
