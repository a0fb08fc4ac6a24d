"""LLM backends, prompt templating and the LLM-guided evolution operators.

Every operator here is total: when the backend fails or the reply contains
nothing usable, the symbolic operator from :mod:`conceptsr.evolve` is used
instead and the backend's ``fallbacks`` counter is bumped.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable

import httpx
import numpy as np

from .errors import LlmError, LlmUnavailable, MissingPlaceholderValue, ParseError, ReplayMiss, UnknownSymbol
from .exprcore import Expr, OperatorSet, describe_grammar, format_expr, parse, random_expr

log = logging.getLogger(__name__)

PLACEHOLDERS = ("concepts", "variables", "operators", "expressions", "data", "good_expressions", "bad_expressions")
_PLACEHOLDER_RE = re.compile(r"\{\{\s*([A-Za-z_]+)\s*\}\}")


# ---------------------------------------------------------------------------
# backends


def prompt_digest(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class LlmBackend:
    """Base class. Subclasses implement :meth:`_complete`."""

    kind = "base"

    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0
        self.failures = 0
        self.fallbacks = 0

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.calls += 1
        try:
            return self._complete(prompt)
        except LlmError:
            with self._lock:
                self.failures += 1
            raise

    def _complete(self, prompt: str) -> str:
        raise NotImplementedError

    def record_fallback(self) -> None:
        with self._lock:
            self.fallbacks += 1

    def counters(self) -> dict:
        with self._lock:
            return {"calls": self.calls, "failures": self.failures, "fallbacks": self.fallbacks}


class ScriptedBackend(LlmBackend):
    """Returns queued responses in order, or delegates to ``responder(prompt)``.

    An exhausted queue raises :class:`LlmUnavailable`; a responder returning
    ``None`` does too.
    """

    kind = "scripted"

    def __init__(self, responses=None, responder: Callable[[str], str | None] | None = None):
        super().__init__()
        self.queue = deque(responses or [])
        self.responder = responder
        self.prompts = []

    def _complete(self, prompt):
        with self._lock:
            self.prompts.append(prompt)
            if self.queue:
                return self.queue.popleft()
        if self.responder is not None:
            out = self.responder(prompt)
            if out is not None:
                return out
        raise LlmUnavailable("scripted backend has no response")


class ReplayBackend(LlmBackend):
    """Looks responses up by the SHA-256 digest of the exact prompt."""

    kind = "replay"

    def __init__(self, records: dict | None = None):
        super().__init__()
        self.records = dict(records or {})

    @classmethod
    def load(cls, path) -> "ReplayBackend":
        records = {}
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    rec = json.loads(line)
                    records[rec["digest"]] = rec["response"]
        return cls(records)

    def add(self, prompt: str, response: str) -> None:
        self.records[prompt_digest(prompt)] = response

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for digest in sorted(self.records):
                fh.write(json.dumps({"digest": digest, "response": self.records[digest]}) + "\n")

    def _complete(self, prompt):
        digest = prompt_digest(prompt)
        try:
            return self.records[digest]
        except KeyError:
            raise ReplayMiss(digest) from None


class RecordingBackend(LlmBackend):
    """Wraps another backend and appends every answered prompt to a replay store."""

    kind = "recording"

    def __init__(self, inner: LlmBackend, path):
        super().__init__()
        self.inner = inner
        self.path = Path(path)

    def _complete(self, prompt):
        response = self.inner.complete(prompt)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps({"digest": prompt_digest(prompt), "response": response}) + "\n")
        return response


class HttpBackend(LlmBackend):
    """OpenAI-compatible ``/v1/chat/completions`` client."""

    kind = "http"

    def __init__(self, endpoint_url, model_name, api_key_env="OPENAI_API_KEY", temperature=0.7,
                 max_tokens=512, timeout=30.0, max_retries=3, max_inflight=4, backoff=0.5):
        super().__init__()
        self.endpoint_url = endpoint_url
        self.model_name = model_name
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._slots = threading.BoundedSemaphore(max_inflight)
        self._client = httpx.Client(timeout=timeout)
        self.requests = 0

    @classmethod
    def from_config(cls, llm_cfg) -> "HttpBackend":
        return cls(llm_cfg.endpoint, llm_cfg.model, llm_cfg.api_key_env, llm_cfg.temperature,
                   llm_cfg.max_tokens, llm_cfg.timeout, llm_cfg.max_retries, llm_cfg.max_inflight)

    def _headers(self):
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env, "") if self.api_key_env else ""
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _complete(self, prompt):
        body = {
            "model": self.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        last = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                with self._slots:
                    with self._lock:
                        self.requests += 1
                    resp = self._client.post(self.endpoint_url, json=body, headers=self._headers())
                if resp.status_code >= 500 or resp.status_code == 429:
                    last = f"HTTP {resp.status_code}"
                    continue
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"] or ""
            except (httpx.HTTPError, KeyError, IndexError, ValueError) as exc:
                last = repr(exc)
        raise LlmUnavailable(f"{self.endpoint_url}: giving up after {self.max_retries + 1} attempts ({last})")

    def close(self):
        self._client.close()


def complete(backend: LlmBackend, prompt: str) -> str:
    return backend.complete(prompt)


def make_backend(kind: str, llm_cfg=None) -> LlmBackend | None:
    """Build a backend from a CLI-style kind: ``off``, ``http`` or ``replay``."""
    if kind == "off":
        return None
    if kind == "http":
        return HttpBackend.from_config(llm_cfg)
    if kind == "replay":
        if not llm_cfg or not llm_cfg.replay_path:
            raise ValueError("replay backend needs llm.replay_path")
        return ReplayBackend.load(llm_cfg.replay_path)
    raise ValueError(f"unknown backend kind {kind!r}")


# ---------------------------------------------------------------------------
# prompts


@dataclass
class PromptBindings:
    concepts: list | None = None
    variables: str | None = None
    operators: str | None = None
    expressions: list | None = None
    data: str | None = None
    good_expressions: list | None = None
    bad_expressions: list | None = None


def _numbered(items) -> str:
    return "\n".join(f"{i}. {s}" for i, s in enumerate(items, start=1))


def render_prompt(template: str, b: PromptBindings) -> str:
    """Substitute ``{{name}}`` placeholders. Lists render as numbered lines."""

    def value(match):
        name = match.group(1)
        if name not in PLACEHOLDERS:
            raise MissingPlaceholderValue(name)
        v = getattr(b, name)
        if name == "concepts":
            if v is None:
                raise MissingPlaceholderValue(name)
            return _numbered(v) if v else "(no concepts yet)"
        if isinstance(v, list):
            if not v:
                raise MissingPlaceholderValue(name)
            return _numbered(v)
        if v is None or v == "":
            raise MissingPlaceholderValue(name)
        return str(v)

    return _PLACEHOLDER_RE.sub(value, template)


def load_template(name: str, prompt_dir=None) -> str:
    if prompt_dir:
        path = Path(prompt_dir) / f"{name}.txt"
        if path.exists():
            return path.read_text(encoding="utf-8")
    return resources.files("conceptsr").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


def operator_description(ops: OperatorSet) -> str:
    return describe_grammar(ops).split("; variables:")[0]


def dataset_digest(d, rows: int = 10) -> str:
    """A few evenly spaced rows as ``x1=..., x2=... -> y=...`` lines."""
    idx = np.unique(np.linspace(0, d.n_rows - 1, min(rows, d.n_rows)).astype(int))
    lines = []
    for i in idx:
        feats = ", ".join(f"{n}={d.X[i, j]:.6g}" for j, n in enumerate(d.variable_names))
        lines.append(f"{feats} -> {d.target_name}={d.y[i]:.6g}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# response parsing

_PREFIX_RE = re.compile(r"^\s*(?:\d+\s*[.):]\s+|[-*•]\s+|#+\s*)")
_LHS_RE = re.compile(r"^\s*[A-Za-z_][A-Za-z0-9_]*(?:\([^)]*\))?\s*=\s*(?!=)")


def _clean_line(line: str) -> str:
    line = line.strip()
    if line.startswith("```"):
        return ""
    line = _PREFIX_RE.sub("", line, count=1)
    line = line.replace("`", "").replace("$", "").strip()
    line = _LHS_RE.sub("", line, count=1)
    line = line.replace("×", "*").replace("·", "*").replace("−", "-")
    return line.rstrip(" .;,").strip()


def parse_candidates(text: str, ops: OperatorSet, max_n: int) -> list:
    """Scan a reply line by line and return up to ``max_n`` parseable expressions."""
    out = []
    if max_n <= 0 or not text:
        return out
    for raw in text.splitlines():
        line = _clean_line(raw)
        if not line:
            continue
        try:
            out.append(parse(line, ops))
        except (ParseError, UnknownSymbol, ValueError, RecursionError):
            continue
        if len(out) >= max_n:
            break
    return out


# ---------------------------------------------------------------------------
# operators


def _hypothesis_bindings(lib, ops, cfg, rng, expressions, data=None) -> PromptBindings:
    l = cfg.llm.n_concepts
    sampler = rng.spawn(1)[0]
    concepts = lib.sample(l, sampler) if lib is not None else []
    digest = None
    if cfg.llm.include_data and data is not None:
        digest = dataset_digest(data, cfg.llm.data_rows)
    return PromptBindings(
        concepts=concepts,
        variables=", ".join(ops.variable_names),
        operators=operator_description(ops),
        expressions=[format_expr(e) for e in expressions],
        data=digest,
    )


def _ask(backend, template_name, bindings, cfg) -> str | None:
    try:
        prompt = render_prompt(load_template(template_name, cfg.llm.prompt_dir), bindings)
        return backend.complete(prompt)
    except LlmError as exc:
        log.debug("LLM call failed: %s", exc)
        return None


def _usable(candidates, cfg):
    return [e for e in candidates if e.size <= cfg.max_complexity and e.depth <= cfg.max_depth]


def llm_init(lib, ops: OperatorSet, n: int, backend, cfg, rng, data=None) -> list:
    """Ask for up to ``n`` fresh expressions; random trees fill any shortfall."""
    if n < 1:
        raise ValueError("n must be >= 1")
    exprs = []
    if backend is not None:
        text = _ask(backend, "init", _hypothesis_bindings(lib, ops, cfg, rng, [], data), cfg)
        if text is not None:
            exprs = _usable(parse_candidates(text, ops, n), cfg)[:n]
        if len(exprs) < n:
            backend.record_fallback()
    while len(exprs) < n:
        exprs.append(random_expr(ops, cfg.init_depth, rng))
    return exprs


def llm_mutate(e: Expr, lib, ops: OperatorSet, backend, cfg, rng, data=None) -> Expr:
    """Concept-guided rewrite of ``e``; falls back to symbolic mutation."""
    from .evolve import mutate

    if backend is not None:
        text = _ask(backend, "mutate", _hypothesis_bindings(lib, ops, cfg, rng, [e], data), cfg)
        if text is not None:
            found = _usable(parse_candidates(text, ops, 5), cfg)
            if found:
                return found[0]
        backend.record_fallback()
    return mutate(e, cfg.mutation_weights, ops, rng, cfg)


def llm_crossover(a: Expr, b: Expr, lib, ops: OperatorSet, backend, cfg, rng, data=None) -> Expr:
    """Concept-guided recombination of two parents; falls back to the first
    offspring of symbolic crossover."""
    from .evolve import crossover

    if backend is not None:
        text = _ask(backend, "crossover", _hypothesis_bindings(lib, ops, cfg, rng, [a, b], data), cfg)
        if text is not None:
            found = _usable(parse_candidates(text, ops, 5), cfg)
            if found:
                return found[0]
        backend.record_fallback()
    return crossover(a, b, rng)[0]
